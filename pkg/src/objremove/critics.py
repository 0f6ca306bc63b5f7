"""Global/local WGAN critics and the inpainting loss terms."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imagecore import discount_map


@dataclass
class CriticConfig:
    global_input: tuple = (256, 256)
    width: int = 16

    def __post_init__(self):
        self.global_input = tuple(int(v) for v in self.global_input)
        if any(v % 32 for v in self.global_input):
            # four stride-2 layers on the local crop (H/2) need H divisible by 32
            raise ValueError(f"critic input {self.global_input} must be multiples of 32")

    @property
    def local_input(self) -> tuple:
        return (self.global_input[0] // 2, self.global_input[1] // 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["global_input"] = list(self.global_input)
        return d


@dataclass
class LossWeights:
    w_coarse_l1: float = 1.0
    w_refine_l1: float = 1.0
    w_gan_global: float = 0.001
    w_gan_local: float = 0.001
    w_gp: float = 10.0

    def __post_init__(self):
        vals = asdict(self).values()
        if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise ValueError("loss weights must be non-negative with at least one positive")


class Critic(nn.Module):
    """Four 5x5 stride-2 convs with leaky ReLU, then a linear score. No output squashing."""

    def __init__(self, input_size, width=16, in_channels=3):
        super().__init__()
        self.input_size = tuple(input_size)
        widths = [width, 2 * width, 4 * width, 4 * width]
        layers, cin = [], in_channels
        for w in widths:
            layers += [nn.Conv2d(cin, w, 5, stride=2, padding=2), nn.LeakyReLU(0.2)]
            cin = w
        self.features = nn.Sequential(*layers)
        h, w = (s // 16 for s in self.input_size)
        self.score = nn.Linear(cin * h * w, 1)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.input_size:
            raise ValueError(f"critic expects {self.input_size}, got {tuple(x.shape[-2:])}")
        return self.score(self.features(x).flatten(1)).squeeze(1)


def global_critic(cfg: CriticConfig) -> Critic:
    return Critic(cfg.global_input, cfg.width)


def local_critic(cfg: CriticConfig) -> Critic:
    return Critic(cfg.local_input, cfg.width)


def hole_bbox(mask: np.ndarray):
    """(y0, x0, y1, x1) of the missing pixels, or the whole frame if there are none."""
    ys, xs = np.nonzero(np.asarray(mask) == 0)
    if len(ys) == 0:
        return 0, 0, mask.shape[0], mask.shape[1]
    return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


def crop_window(bbox, frame, size):
    """Window of at least ``size`` centred on ``bbox``, clamped inside ``frame``."""
    out = []
    for lo, hi, n, s in zip(bbox[:2], bbox[2:], frame, size):
        extent = min(max(hi - lo, s), n)
        start = (lo + hi) // 2 - extent // 2
        start = min(max(start, 0), n - extent)
        out.append((start, start + extent))
    return out


def crop_local(images: torch.Tensor, masks: torch.Tensor, size) -> tuple[torch.Tensor, torch.Tensor]:
    """Crop each sample around its hole to ``size``; larger holes are bilinearly shrunk."""
    crops, mcrops = [], []
    frame = tuple(images.shape[-2:])
    for img, m in zip(images, masks):
        (y0, y1), (x0, x1) = crop_window(hole_bbox(m[0].detach().cpu().numpy()), frame, size)
        c, mc = img[None, :, y0:y1, x0:x1], m[None, :, y0:y1, x0:x1]
        if (y1 - y0, x1 - x0) != tuple(size):
            c = F.interpolate(c, size=size, mode="bilinear", align_corners=False)
            mc = (F.interpolate(mc, size=size, mode="bilinear", align_corners=False) >= 0.5).to(mc.dtype)
        crops.append(c)
        mcrops.append(mc)
    return torch.cat(crops), torch.cat(mcrops)


def _nonempty(x, name):
    x = torch.as_tensor(x, dtype=torch.get_default_dtype()) if not torch.is_tensor(x) else x
    if x.numel() == 0:
        raise ValueError(f"{name} batch is empty")
    return x


def wgan_critic_loss(scores_real, scores_fake, gp=0.0, w_gp=10.0):
    """mean(D(fake)) - mean(D(real)) + w_gp * gp; the critic minimises this."""
    real = _nonempty(scores_real, "real")
    fake = _nonempty(scores_fake, "fake")
    if real.shape != fake.shape:
        raise ValueError("real and fake score batches differ in size")
    return fake.mean() - real.mean() + w_gp * gp


def wgan_generator_loss(scores_fake):
    return -_nonempty(scores_fake, "fake").mean()


def interpolate(real, fake, t):
    if real.shape != fake.shape:
        raise ValueError("real and fake differ in shape")
    return (1 - t) * real + t * fake


def gradient_penalty(critic, real, fake, mask, rng: np.random.Generator):
    """Mean over the batch of (||grad D(x_hat) * (1 - mask)||_2 - 1)^2.

    ``x_hat`` lies on the segment between real and fake at a per-sample t ~ U[0, 1]
    drawn from ``rng``. ``mask`` broadcasts against the images (1 = known).
    """
    n = real.shape[0]
    t = torch.as_tensor(rng.random(n), dtype=real.dtype).reshape((n,) + (1,) * (real.dim() - 1))
    x_hat = interpolate(real.detach(), fake.detach(), t).requires_grad_(True)
    scores = critic(x_hat)
    (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)
    if not torch.isfinite(grad).all():
        raise FloatingPointError("critic gradient is not finite at the interpolated input")
    masked = (grad * (1 - mask)).flatten(1)
    return ((masked.norm(dim=1) - 1) ** 2).mean()


def weight_maps(masks: torch.Tensor, gamma: float = 0.99) -> torch.Tensor:
    """Discount weights for a (B, 1, H, W) mask batch."""
    maps = [discount_map(m[0].detach().cpu().numpy().astype(np.uint8), gamma) for m in masks]
    return torch.as_tensor(np.stack(maps)[:, None], dtype=masks.dtype)


def discounted_l1(pred, gt, weights):
    """sum(w * |pred - gt|) / sum(w), with the spatial weight shared across channels."""
    if pred.shape != gt.shape:
        raise ValueError("pred and gt differ in shape")
    w = torch.broadcast_to(torch.as_tensor(weights, dtype=pred.dtype), pred.shape)
    total = w.sum()
    if total == 0:
        raise ValueError("weights sum to zero")
    return (w * (pred - gt).abs()).sum() / total


def generator_objective(coarse, refined, gt, mask, critic_scores, lw: LossWeights,
                        gamma: float = 0.99, weights=None):
    """Weighted sum of both stages' discounted L1 and the refined output's WGAN losses.

    ``critic_scores`` is (global scores, local scores) of the refined completion.
    ``weights`` may be passed to skip recomputing the discount maps of ``mask``.
    Returns the total and a per-term breakdown of the unweighted terms.
    """
    if weights is None:
        weights = weight_maps(mask, gamma)
    global_scores, local_scores = critic_scores
    terms = {
        "coarse_l1": discounted_l1(coarse, gt, weights),
        "refine_l1": discounted_l1(refined, gt, weights),
        "gan_global": wgan_generator_loss(global_scores),
        "gan_local": wgan_generator_loss(local_scores),
    }
    total = (lw.w_coarse_l1 * terms["coarse_l1"] + lw.w_refine_l1 * terms["refine_l1"]
             + lw.w_gan_global * terms["gan_global"] + lw.w_gan_local * terms["gan_local"])
    return total, terms
