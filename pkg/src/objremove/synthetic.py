"""Synthetic striped-texture images for smoke training and demos."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def striped_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """(size, size, 3) uint8 sinusoidal stripes with random angle, period and colours."""
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(6, 16)
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period + phase)
    c0, c1 = rng.uniform(0, 255, 3), rng.uniform(0, 255, 3)
    img = c0 + (c1 - c0) * wave[..., None]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def write_striped_dataset(out_dir, n: int, size: int = 64, seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        path = out_dir / f"stripes_{i:04d}.png"
        Image.fromarray(striped_image(rng, size)).save(path)
        paths.append(path)
    return paths
