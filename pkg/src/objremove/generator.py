"""Two-stage coarse-to-fine inpainting generator.

Both stages share one skeleton: 5x5 conv, two stride-2 downsamplings to H/4, a
stack of dilated 3x3 convs, then two nearest-upsample + conv stages back to H.
The refinement stage adds a parallel contextual-attention branch whose output is
concatenated with the dilated branch before the decoder.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import AttentionParams, contextual_attention
from .imagecore import fill_holes


@dataclass
class GeneratorConfig:
    base_width: int = 16
    input_size: tuple = (256, 256)
    dilation_rates: tuple = (2, 4, 8, 16)
    attention: AttentionParams = field(default_factory=AttentionParams)
    use_attention: bool = True

    def __post_init__(self):
        if isinstance(self.attention, dict):
            self.attention = AttentionParams(**self.attention)
        self.input_size = tuple(int(v) for v in self.input_size)
        self.dilation_rates = tuple(int(v) for v in self.dilation_rates)
        if self.base_width < 4:
            raise ValueError("base_width must be >= 4")
        if len(self.input_size) != 2 or any(v % 8 for v in self.input_size):
            raise ValueError(f"input size {self.input_size} must be two multiples of 8")
        if any(a >= b for a, b in zip(self.dilation_rates, self.dilation_rates[1:])):
            raise ValueError("dilation_rates must be strictly increasing")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["dilation_rates"] = list(self.dilation_rates)
        return d


def conv(cin, cout, k=3, stride=1, dilation=1, act=True):
    layers = [nn.Conv2d(cin, cout, k, stride=stride, padding=dilation * (k // 2), dilation=dilation)]
    if act:
        layers.append(nn.ELU(alpha=1.0))
    return nn.Sequential(*layers)


def clip_output(x):
    return torch.clamp(x, -1.0, 1.0)


def check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"non-finite activations in {where}")
    return x


def mask_to_features(mask: torch.Tensor, factor: int) -> torch.Tensor:
    """A feature cell is known only if every pixel it covers is known."""
    return -F.max_pool2d(-mask, factor)


class Encoder(nn.Module):
    """Downsample to H/4 and (optionally) run the dilated stack."""

    def __init__(self, cin, width, dilations=()):
        super().__init__()
        w1, w2, w4 = width, 2 * width, 4 * width
        self.down = nn.Sequential(
            conv(cin, w1, 5), conv(w1, w2, 3, stride=2), conv(w2, w2),
            conv(w2, w4, 3, stride=2), conv(w4, w4), conv(w4, w4))
        self.dilated = nn.Sequential(*[conv(w4, w4, dilation=d) for d in dilations])

    def forward(self, x):
        return self.dilated(self.down(x))


class Decoder(nn.Module):
    def __init__(self, cin, width):
        super().__init__()
        w1, w2, w4 = width, 2 * width, 4 * width
        self.mid = nn.Sequential(conv(cin, w4), conv(w4, w4))
        self.up1 = nn.Sequential(conv(w4, w2), conv(w2, w2))
        self.up2 = nn.Sequential(conv(w2, w1), conv(w1, max(w1 // 2, 1)))
        self.out = conv(max(w1 // 2, 1), 3, act=False)

    def forward(self, x):
        x = self.mid(x)
        x = self.up1(F.interpolate(x, scale_factor=2, mode="nearest"))
        x = self.up2(F.interpolate(x, scale_factor=2, mode="nearest"))
        return self.out(x)


class CoarseNet(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.encoder = Encoder(4, cfg.base_width, cfg.dilation_rates)
        self.decoder = Decoder(4 * cfg.base_width, cfg.base_width)

    def forward(self, holed, mask):
        x = self.encoder(torch.cat([holed, mask], dim=1))
        return clip_output(check_finite(self.decoder(x), "coarse stage"))


class RefineNet(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        w4 = 4 * cfg.base_width
        self.cfg = cfg
        self.dilated_branch = Encoder(4, cfg.base_width, cfg.dilation_rates)
        self.attention_branch = Encoder(4, cfg.base_width)
        self.attention_post = nn.Sequential(conv(w4, w4), conv(w4, w4))
        self.decoder = Decoder(2 * w4, cfg.base_width)

    def forward(self, coarse_pasted, mask):
        x = torch.cat([coarse_pasted, mask], dim=1)
        dil = self.dilated_branch(x)
        feats = self.attention_branch(x)
        if self.cfg.use_attention:
            m = mask_to_features(mask, 4)
            feats, _ = contextual_attention(feats, feats, m, self.cfg.attention)
        att = self.attention_post(feats)
        y = self.decoder(torch.cat([dil, att], dim=1))
        return clip_output(check_finite(y, "refinement stage"))


class InpaintGenerator(nn.Module):
    """``forward(holed, mask)`` returns ``(coarse, refined)``; tensors are (B, C, H, W)."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        self.coarse = CoarseNet(self.cfg)
        self.refine = RefineNet(self.cfg)

    def _check(self, holed, mask):
        if tuple(holed.shape[-2:]) != self.cfg.input_size:
            raise ValueError(f"input is {tuple(holed.shape[-2:])}, generator expects {self.cfg.input_size}")
        if mask.shape[1] != 1 or mask.shape[-2:] != holed.shape[-2:]:
            raise ValueError("mask must be (B, 1, H, W) matching the image")

    def coarse_forward(self, holed, mask):
        self._check(holed, mask)
        return self.coarse(holed, mask)

    def refine_forward(self, coarse_pasted, mask):
        self._check(coarse_pasted, mask)
        return self.refine(coarse_pasted, mask)

    def forward(self, holed, mask):
        coarse = self.coarse_forward(holed, mask)
        refined = self.refine_forward(paste(coarse, holed, mask), mask)
        return coarse, refined


def paste(pred, known, mask):
    """Known pixels from ``known``, hole pixels from ``pred``."""
    return pred * (1 - mask) + known * mask


def inpaint(generator: InpaintGenerator, image, mask):
    """Fill the holes of normalized (B, 3, H, W) ``image`` and paste the result back."""
    holed = fill_holes(image, mask)
    with torch.no_grad():
        _, refined = generator(holed, mask)
    return paste(refined, image, mask)
