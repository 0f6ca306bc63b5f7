"""x4 sub-pixel upsampler (residual trunk + two pixel-shuffle stages) and its training step."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .critics import Critic, gradient_penalty, wgan_critic_loss, wgan_generator_loss

SR_KIND = "superres"


@dataclass
class SRConfig:
    scale: int = 4
    n_residual_blocks: int = 4
    width: int = 32
    input_size: tuple = (256, 256)
    adversarial: bool = False
    learning_rate: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    n_critic: int = 1
    w_adv: float = 1e-3
    w_gp: float = 10.0
    critic_width: int = 8
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.scale != 4:
            raise ValueError("only x4 upscaling is supported")
        if self.n_residual_blocks < 1:
            raise ValueError("n_residual_blocks must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["adam_betas"] = list(self.adam_betas)
        return d


def subpixel_upsample(x: torch.Tensor, s: int) -> torch.Tensor:
    """(B, C*s*s, h, w) -> (B, C, h*s, w*s).

    out[c, y, x] = in[c*s*s + (y % s)*s + (x % s), y // s, x // s].
    """
    b, cs2, h, w = x.shape
    if cs2 % (s * s):
        raise ValueError(f"{cs2} channels not divisible by {s * s}")
    c = cs2 // (s * s)
    return x.reshape(b, c, s, s, h, w).permute(0, 1, 4, 2, 5, 3).reshape(b, c, h * s, w * s)


def subpixel_downsample(x: torch.Tensor, s: int) -> torch.Tensor:
    """Inverse of :func:`subpixel_upsample`."""
    b, c, hs, ws = x.shape
    if hs % s or ws % s:
        raise ValueError(f"spatial size {hs}x{ws} not divisible by {s}")
    h, w = hs // s, ws // s
    return x.reshape(b, c, h, s, w, s).permute(0, 1, 3, 5, 2, 4).reshape(b, c * s * s, h, w)


class ResidualBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(width, width, 3, padding=1), nn.PReLU(width),
                                  nn.Conv2d(width, width, 3, padding=1))

    def forward(self, x):
        return x + self.body(x)


class SubpixelStage(nn.Module):
    def __init__(self, width, s=2):
        super().__init__()
        self.s = s
        self.conv = nn.Conv2d(width, width * s * s, 3, padding=1)
        self.act = nn.PReLU(width)

    def forward(self, x):
        return self.act(subpixel_upsample(self.conv(x), self.s))


class SRNet(nn.Module):
    def __init__(self, cfg: SRConfig | None = None):
        super().__init__()
        self.cfg = cfg or SRConfig()
        w = self.cfg.width
        self.head = nn.Sequential(nn.Conv2d(3, w, 9, padding=4), nn.PReLU(w))
        self.trunk = nn.Sequential(*[ResidualBlock(w) for _ in range(self.cfg.n_residual_blocks)],
                                   nn.Conv2d(w, w, 3, padding=1))
        self.upsample = nn.Sequential(SubpixelStage(w), SubpixelStage(w))
        self.tail = nn.Conv2d(w, 3, 9, padding=4)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.cfg.input_size:
            raise ValueError(f"SR input is {tuple(x.shape[-2:])}, expected {self.cfg.input_size}")
        h = self.head(x)
        y = self.tail(self.upsample(h + self.trunk(h)))
        return torch.clamp(y, -1.0, 1.0)


def sr_forward(net: SRNet, img: torch.Tensor) -> torch.Tensor:
    """Upscale normalized (B, 3, H, W) images by 4 without tracking gradients."""
    with torch.no_grad():
        return net(img)


@dataclass
class SRState:
    config: SRConfig
    net: SRNet
    opt: torch.optim.Optimizer
    critic: Critic | None
    opt_critic: torch.optim.Optimizer | None
    rng: np.random.Generator
    step: int = 0


def init_sr_state(cfg: SRConfig) -> SRState:
    torch.manual_seed(cfg.seed)
    net = SRNet(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas)
    critic = opt_c = None
    if cfg.adversarial:
        hr = tuple(4 * v for v in cfg.input_size)
        critic = Critic(hr, cfg.critic_width)
        opt_c = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.9))
    return SRState(cfg, net, opt, critic, opt_c, np.random.default_rng(cfg.seed))


def downsample_x4(hr: torch.Tensor) -> torch.Tensor:
    """Bilinear /4 with half-pixel centres (the low-res side of a training pair)."""
    return F.interpolate(hr, scale_factor=0.25, mode="bilinear", align_corners=False, antialias=False)


def sr_train_step(batch, state: SRState) -> dict:
    """One update on (low-res, high-res) tensors. Returns the loss breakdown."""
    lr_img, hr_img = batch
    cfg = state.config
    losses = {}
    if cfg.adversarial:
        with torch.no_grad():
            fake = state.net(lr_img)
        # every pixel counts as missing, so the masked penalty is the plain one
        no_known = torch.zeros(1)
        for _ in range(cfg.n_critic):
            gp = gradient_penalty(state.critic, hr_img, fake, no_known, state.rng)
            d_loss = wgan_critic_loss(state.critic(hr_img), state.critic(fake), gp, cfg.w_gp)
            if not torch.isfinite(d_loss):
                raise FloatingPointError("non-finite loss term 'critic'")
            state.opt_critic.zero_grad()
            d_loss.backward()
            state.opt_critic.step()
        losses["critic"] = d_loss.item()
        losses["gp"] = gp.item()

    pred = state.net(lr_img)
    content = F.mse_loss(pred, hr_img)
    total = content
    losses["content"] = content.item()
    if cfg.adversarial:
        adv = wgan_generator_loss(state.critic(pred))
        total = total + cfg.w_adv * adv
        losses["adversarial"] = adv.item()
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite SR loss: {losses}")
    state.opt.zero_grad()
    total.backward()
    state.opt.step()
    state.step += 1
    return losses


def sr_checkpoint_save(state: SRState, path):
    payload = {"net": state.net.state_dict(), "opt": state.opt.state_dict(),
               "rng": state.rng.bit_generator.state}
    if state.critic is not None:
        payload["critic"] = state.critic.state_dict()
        payload["opt_critic"] = state.opt_critic.state_dict()
    return ckpt.save_container(path, SR_KIND, {"step": state.step, "sr_config": state.config.to_dict()},
                               payload)


def sr_checkpoint_load(path) -> SRState:
    header, payload = ckpt.load_container(path, SR_KIND)
    state = init_sr_state(SRConfig(**header["sr_config"]))
    state.net.load_state_dict(payload["net"])
    state.opt.load_state_dict(payload["opt"])
    if state.critic is not None:
        state.critic.load_state_dict(payload["critic"])
        state.opt_critic.load_state_dict(payload["opt_critic"])
    state.rng.bit_generator.state = payload["rng"]
    state.step = header["step"]
    return state


def gradient_crops(n: int, size: int, seed: int = 0) -> torch.Tensor:
    """Synthetic smooth colour-gradient crops (n, 3, size, size) in [-1, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    crops = []
    for _ in range(n):
        theta = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(theta) * xx + np.sin(theta) * yy
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
        lo, hi = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
        crops.append(lo[:, None, None] + (hi - lo)[:, None, None] * ramp[None])
    return torch.as_tensor(np.stack(crops), dtype=torch.float32)


def train_sr(state: SRState, hr: torch.Tensor, steps: int, batch_size: int = 4) -> list[dict]:
    """Run ``steps`` updates on random batches of high-res crops ``hr`` (N, 3, 4h, 4w)."""
    if tuple(hr.shape[-2:]) != tuple(4 * v for v in state.config.input_size):
        raise ValueError("high-res crops must be 4x the SR input size")
    history = []
    for _ in range(steps):
        idx = state.rng.choice(len(hr), size=min(batch_size, len(hr)), replace=False)
        target = hr[torch.as_tensor(idx)]
        history.append(sr_train_step((downsample_x4(target), target), state))
    return history


def random_crops(images, size: int, n: int, seed: int = 0) -> torch.Tensor:
    """``n`` random (3, size, size) crops from normalized (H, W, 3) arrays."""
    rng = np.random.default_rng(seed)
    usable = [im for im in images if im.shape[0] >= size and im.shape[1] >= size]
    if not usable:
        raise ValueError(f"no image is at least {size}x{size}")
    crops = []
    for _ in range(n):
        im = usable[int(rng.integers(len(usable)))]
        y = int(rng.integers(im.shape[0] - size + 1))
        x = int(rng.integers(im.shape[1] - size + 1))
        crops.append(im[y:y + size, x:x + size].transpose(2, 0, 1))
    return torch.as_tensor(np.stack(crops), dtype=torch.float32)
