"""Contextual attention: rebuild hole features from known-region (background) patches."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class AttentionParams:
    patch_size: int = 3
    stride: int = 1
    softmax_scale: float = 10.0
    propagation_size: int = 3  # 1 disables propagation
    valid_patch_threshold: float = 1.0
    eps: float = 1e-4

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be an odd integer >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.softmax_scale <= 0:
            raise ValueError("softmax_scale must be positive")
        if self.propagation_size < 1 or self.propagation_size % 2 == 0:
            raise ValueError("propagation_size must be an odd integer >= 1")
        if not 0.0 <= self.valid_patch_threshold <= 1.0:
            raise ValueError("valid_patch_threshold must lie in [0, 1]")


def bg_patch_grid(height: int, width: int, stride: int) -> tuple[int, int]:
    """Number of background patch centres along each axis."""
    return (height + stride - 1) // stride, (width + stride - 1) // stride


def valid_patches(mask: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    """(B, L) bool: background patches whose known-fraction reaches the threshold.

    Outside the frame counts as known, so border patches are usable.
    """
    r = p.patch_size // 2
    padded = F.pad(mask.to(torch.float64), (r, r, r, r), value=1.0)
    frac = F.unfold(padded, p.patch_size, stride=p.stride).mean(dim=1)
    return frac >= p.valid_patch_threshold - 1e-9


def propagate(scores: torch.Tensor, h: int, w: int, gh: int, gw: int, size: int) -> torch.Tensor:
    """Sum scores along matching diagonals: first along rows (x), then along columns (y).

    ``scores`` is (B, h*w, gh*gw). A fg shift of d pixels pairs with a bg shift of d
    grid steps; out-of-range neighbours contribute zero.
    """
    if size == 1:
        return scores
    r = size // 2
    s = scores.reshape(-1, h, w, gh, gw)
    for fg_dim, bg_dim in ((2, 4), (1, 3)):
        acc = torch.zeros_like(s)
        n_fg, n_bg = s.shape[fg_dim], s.shape[bg_dim]
        for d in range(-r, r + 1):
            # acc[q, p] += s[q + d, p + d]
            fg_lo, fg_hi = max(0, -d), min(n_fg, n_fg - d)
            bg_lo, bg_hi = max(0, -d), min(n_bg, n_bg - d)
            if fg_lo >= fg_hi or bg_lo >= bg_hi:
                continue
            dst = [slice(None)] * 5
            src = [slice(None)] * 5
            dst[fg_dim], src[fg_dim] = slice(fg_lo, fg_hi), slice(fg_lo + d, fg_hi + d)
            dst[bg_dim], src[bg_dim] = slice(bg_lo, bg_hi), slice(bg_lo + d, bg_hi + d)
            acc[tuple(dst)] += s[tuple(src)]
        s = acc
    return s.reshape(scores.shape)


def contextual_attention(fg: torch.Tensor, bg: torch.Tensor, mask: torch.Tensor,
                         p: AttentionParams | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Attend from every fg location to the valid bg patches.

    fg, bg: (B, C, h, w); mask: (B, 1, h, w), 1 = known at feature resolution.
    Returns the reconstructed features (B, C, h, w) and attention (B, h*w, L).
    """
    p = p or AttentionParams()
    if fg.shape != bg.shape:
        raise ValueError(f"fg {tuple(fg.shape)} and bg {tuple(bg.shape)} differ")
    b, c, h, w = fg.shape
    if mask.shape != (b, 1, h, w):
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match features")
    k, r = p.patch_size, p.patch_size // 2
    gh, gw = bg_patch_grid(h, w, p.stride)

    raw = F.unfold(bg, k, padding=r, stride=p.stride)  # (B, C*k*k, L)
    normed = raw / raw.norm(dim=1, keepdim=True).clamp_min(p.eps)
    fg_cols = F.unfold(fg, k, padding=r)  # (B, C*k*k, h*w)
    scores = fg_cols.transpose(1, 2) @ normed  # (B, h*w, L)
    scores = propagate(scores, h, w, gh, gw, p.propagation_size)

    valid = valid_patches(mask, p)
    if not valid.any(dim=1).all():
        raise ValueError("no valid background patch: the hole covers the whole feature map")
    logits = (p.softmax_scale * scores).masked_fill(~valid[:, None, :], float("-inf"))
    attn = torch.softmax(logits, dim=-1)

    patches = (attn @ raw.transpose(1, 2)).transpose(1, 2)  # (B, C*k*k, h*w)
    out = F.fold(patches, (h, w), k, padding=r)
    cover = F.fold(torch.ones_like(patches[:1, :]), (h, w), k, padding=r)
    return out / cover, attn


def attended_patches(attn: torch.Tensor, bg: torch.Tensor, p: AttentionParams) -> torch.Tensor:
    """Per-location patch (B, h*w, C, k, k) before overlap-averaging."""
    k = p.patch_size
    raw = F.unfold(bg, k, padding=k // 2, stride=p.stride)
    return (attn @ raw.transpose(1, 2)).reshape(attn.shape[0], attn.shape[1], bg.shape[1], k, k)
