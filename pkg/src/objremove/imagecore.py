"""Pixel-domain data model and mask/geometry helpers shared by every stage.

Mask convention everywhere: 1 = known pixel, 0 = missing pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

UINT8 = "uint8"
NORMALIZED = "normalized"
_RANGES = {UINT8: (0.0, 255.0), NORMALIZED: (-1.0, 1.0)}


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C pixel array tagged with its value range (RGB order)."""

    data: np.ndarray
    range_tag: str

    def __post_init__(self):
        if self.range_tag not in _RANGES:
            raise ValueError(f"unknown range tag {self.range_tag!r}")
        d = self.data
        if d.ndim != 3 or d.shape[0] < 1 or d.shape[1] < 1 or d.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWxC with C in (1, 3), got shape {d.shape}")
        lo, hi = _RANGES[self.range_tag]
        if self.range_tag == UINT8 and d.dtype != np.uint8:
            raise ValueError(f"uint8 image must have dtype uint8, got {d.dtype}")
        if self.range_tag == NORMALIZED and (d.size and (d.min() < lo or d.max() > hi)):
            raise ValueError("normalized image has values outside [-1, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self.as_tuple()}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"box has negative coordinates {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def check_within(self, height: int, width: int) -> None:
        if self.x1 > width or self.y1 > height:
            raise ValueError(f"box {self.as_tuple()} exceeds {width}x{height} frame")


def check_mask(mask: np.ndarray, shape: tuple | None = None) -> np.ndarray:
    """Validate a binary mask and return it as uint8. ``shape`` is the (H, W) it must match."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    if shape is not None and mask.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {mask.shape} does not match image {tuple(shape[:2])}")
    return mask.astype(np.uint8, copy=False)


def normalize(img: ImageTensor) -> ImageTensor:
    if img.range_tag != UINT8:
        raise ValueError(f"normalize expects a uint8 image, got {img.range_tag}")
    return ImageTensor(img.data.astype(np.float32) / 127.5 - 1.0, NORMALIZED)


def denormalize(img: ImageTensor) -> ImageTensor:
    if img.range_tag != NORMALIZED:
        raise ValueError(f"denormalize expects a normalized image, got {img.range_tag}")
    return ImageTensor(to_uint8(img.data), UINT8)


def to_uint8(values) -> np.ndarray:
    """Map normalized values (any float array) to uint8 with clamping and rounding."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.round(v * 127.5 + 127.5).astype(np.uint8)


def fill_holes(x, m):
    """``x*m + 1*(1-m)``: white (+1) in the holes. Works on numpy arrays and torch tensors."""
    return x * m + (1 - m)


def apply_hole(img: ImageTensor, mask: np.ndarray) -> ImageTensor:
    if img.range_tag != NORMALIZED:
        raise ValueError("apply_hole expects a normalized image")
    m = check_mask(mask, img.shape).astype(img.data.dtype)[..., None]
    return ImageTensor(fill_holes(img.data, m), NORMALIZED)


def mask_from_boxes(boxes, height: int, width: int, dilate: int = 0) -> np.ndarray:
    if dilate < 0:
        raise ValueError("dilate must be non-negative")
    mask = np.ones((height, width), dtype=np.uint8)
    for b in boxes:
        b.check_within(height, width)
        mask[max(b.y0 - dilate, 0):min(b.y1 + dilate, height),
             max(b.x0 - dilate, 0):min(b.x1 + dilate, width)] = 0
    return mask


def random_rect_hole(rng: np.random.Generator, height: int, width: int,
                     min_frac: float, max_frac: float) -> tuple[np.ndarray, BoundingBox]:
    """Sample one rectangular hole whose side lengths lie in [min_frac, max_frac] of the frame."""
    if not 0 < min_frac <= max_frac <= 1:
        raise ValueError(f"need 0 < min_frac <= max_frac <= 1, got {min_frac}, {max_frac}")
    sizes = []
    for n in (height, width):
        lo, hi = max(math.ceil(min_frac * n - 1e-9), 1), math.floor(max_frac * n + 1e-9)
        if lo > hi:
            raise ValueError(f"no integer hole size in [{min_frac}, {max_frac}] x {n}")
        sizes.append(int(rng.integers(lo, hi + 1)))
    h, w = sizes
    y0 = int(rng.integers(0, height - h + 1))
    x0 = int(rng.integers(0, width - w + 1))
    box = BoundingBox(x0, y0, x0 + w, y0 + h)
    return mask_from_boxes([box], height, width), box


def discount_map(mask: np.ndarray, gamma: float = 0.99) -> np.ndarray:
    """Per-pixel weight gamma**d, d = chessboard distance to the nearest known pixel."""
    mask = check_mask(mask)
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if not mask.any():
        raise ValueError("mask has no known pixel")
    dist = ndimage.distance_transform_cdt(1 - mask, metric="chessboard")
    return np.power(gamma, dist.astype(np.float64))


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, no antialiasing; negative source coordinates clamp to 0
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize_array(data: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an H x W (x C) float array."""
    if height < 1 or width < 1:
        raise ValueError("target size must be positive")
    data = np.asarray(data, dtype=np.float64)
    if data.shape[:2] == (height, width):
        return data.copy()
    y0, y1, fy = _axis_weights(data.shape[0], height)
    x0, x1, fx = _axis_weights(data.shape[1], width)
    extra = (None,) * (data.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = data[y0][:, x0] * (1 - fx) + data[y0][:, x1] * fx
    bottom = data[y1][:, x0] * (1 - fx) + data[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(img: ImageTensor, height: int, width: int) -> ImageTensor:
    out = resize_array(img.data, height, width)
    if img.range_tag == UINT8:
        return ImageTensor(np.clip(np.round(out), 0, 255).astype(np.uint8), UINT8)
    return ImageTensor(np.clip(out, -1.0, 1.0).astype(img.data.dtype), NORMALIZED)


def downscale_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a mask bilinearly; a pixel stays known only if its known-fraction is >= 0.5."""
    frac = resize_array(check_mask(mask).astype(np.float64), height, width)
    return (frac >= 0.5).astype(np.uint8)


def composite_back(original: ImageTensor, inpainted: ImageTensor, mask: np.ndarray) -> ImageTensor:
    if original.range_tag != UINT8 or inpainted.range_tag != UINT8:
        raise ValueError("composite_back works on uint8 images")
    if original.shape != inpainted.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {inpainted.shape}")
    m = check_mask(mask, original.shape).astype(bool)[..., None]
    return ImageTensor(np.where(m, original.data, inpainted.data), UINT8)


def load_image(path) -> ImageTensor:
    with Image.open(path) as im:
        return ImageTensor(np.asarray(im.convert("RGB"), dtype=np.uint8).copy(), UINT8)


def save_image(img: ImageTensor, path) -> Path:
    if img.range_tag != UINT8:
        img = denormalize(img)
    data = img.data[..., 0] if img.data.shape[2] == 1 else img.data
    path = Path(path)
    Image.fromarray(data).save(path)
    return path


def load_mask(path) -> np.ndarray:
    """Single-channel mask file: 255 = known, 0 = missing."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> Path:
    path = Path(path)
    Image.fromarray(check_mask(mask) * np.uint8(255)).save(path)
    return path
