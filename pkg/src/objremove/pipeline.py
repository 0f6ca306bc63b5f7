"""End-to-end object removal: detect -> mask -> downscale -> inpaint -> upscale -> composite."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import config as kv
from .detection import DetectorSpec, detect, select_targets
from .generator import InpaintGenerator, inpaint
from .imagecore import (NORMALIZED, UINT8, BoundingBox, ImageTensor, composite_back, downscale_mask,
                        load_image, mask_from_boxes, normalize, random_rect_hole, resize_array,
                        resize_bilinear, save_image, to_uint8)
from .superres import SRNet, sr_checkpoint_load, sr_forward
from .training import eval_metrics, load_generator, split_paths

log = logging.getLogger(__name__)

LARGE_HOLE_FRACTION = 0.5
METRIC_NAMES = ("l1", "l2", "psnr", "tv")


@dataclass
class PipelineConfig:
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    inpaint_checkpoint: str | None = None
    sr_checkpoint: str | None = None
    dilate: int = 0
    input_size: tuple = (256, 256)
    output_dir: str = "out"
    metrics: bool = False

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        if self.dilate < 0:
            raise ValueError("dilate must be non-negative")


def parse_boxes(text: str) -> list[BoundingBox]:
    """``"x0,y0,x1,y1; x0,y0,x1,y1"`` -> boxes."""
    boxes = []
    for part in text.split(";"):
        if part.strip():
            vals = [int(v) for v in part.split(",")]
            if len(vals) != 4:
                raise ValueError(f"box needs four integers: {part!r}")
            boxes.append(BoundingBox(*vals))
    return boxes


def pipeline_config_from(values: dict[str, str], base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from flat ``key = value`` pairs (``detector.*`` keys nest)."""
    base = base or PipelineConfig()
    unknown = set(values) - kv.known_keys(base)
    if unknown:
        raise kv.ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    plain = {k: v for k, v in values.items() if k != "detector.boxes"}
    cfg = kv.apply_overrides(base, plain)
    if "detector.boxes" in values:
        cfg = replace(cfg, detector=replace(cfg.detector, boxes=parse_boxes(values["detector.boxes"])))
    return cfg


class Models:
    """Loaded networks, shared read-only across runs."""

    def __init__(self, cfg: PipelineConfig, generator: InpaintGenerator | None = None,
                 sr_net: SRNet | None = None):
        if generator is None:
            if cfg.inpaint_checkpoint is None:
                raise ValueError("an inpainting checkpoint is required")
            generator = load_generator(cfg.inpaint_checkpoint)
        if generator.cfg.input_size != cfg.input_size:
            raise ValueError(f"checkpoint input size {generator.cfg.input_size} does not match "
                             f"configured {cfg.input_size}")
        if sr_net is None and cfg.sr_checkpoint:
            sr_net = sr_checkpoint_load(cfg.sr_checkpoint).net.eval()
        if sr_net is not None and sr_net.cfg.input_size != cfg.input_size:
            raise ValueError(f"SR checkpoint expects {sr_net.cfg.input_size} inputs, "
                             f"pipeline produces {cfg.input_size}")
        self.generator = generator.eval()
        self.sr_net = sr_net


def _to_tensor(img: ImageTensor) -> torch.Tensor:
    return torch.as_tensor(img.data.transpose(2, 0, 1)[None].copy(), dtype=torch.float32)


def inpaint_image(models: Models, img: ImageTensor, mask: np.ndarray) -> ImageTensor:
    """Normalized image at the generator size + mask -> completed normalized image."""
    x = _to_tensor(img)
    m = torch.as_tensor(mask[None, None].astype(np.float32))
    out = inpaint(models.generator, x, m)
    return ImageTensor(out[0].numpy().transpose(1, 2, 0), NORMALIZED)


def upscale_image(sr_net: SRNet | None, img: ImageTensor, height: int, width: int) -> ImageTensor:
    """Normalized image -> uint8 image at (height, width); SR x4 first when a net is given."""
    data = img.data
    if sr_net is not None:
        data = sr_forward(sr_net, _to_tensor(img))[0].numpy().transpose(1, 2, 0)
    return ImageTensor(to_uint8(resize_array(data, height, width)), UINT8)


def run_pipeline(image_path, cfg: PipelineConfig, models: Models | None = None) -> Path:
    """Remove the selected objects from ``image_path``; returns the output image path.

    Also writes ``<stem>.report.json`` next to the output.
    """
    t0 = time.perf_counter()
    timings = {}
    image_path = Path(image_path)
    original = load_image(image_path)
    height, width = original.height, original.width
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{image_path.stem}_inpainted.png"
    report = {"input": str(image_path), "output": str(out_path), "size": [width, height]}

    dets = select_targets(detect(original, cfg.detector, image_path), cfg.detector)
    timings["detect"] = time.perf_counter() - t0
    report["detections"] = [d.to_record() for d in dets]
    mask = mask_from_boxes([d.box for d in dets], height, width, cfg.dilate)
    n_missing = int((mask == 0).sum())
    report["mask"] = {"missing_pixels": n_missing, "missing_fraction": n_missing / mask.size,
                      "dilate": cfg.dilate}

    if not dets:
        save_image(original, out_path)
        report["status"] = "no target found"
    else:
        if n_missing / mask.size > LARGE_HOLE_FRACTION:
            msg = f"hole covers {n_missing / mask.size:.0%} of the frame; large removals tend to distort"
            log.warning(msg)
            report["warning"] = msg
        models = models or Models(cfg)
        h_in, w_in = cfg.input_size
        small_mask = downscale_mask(mask, h_in, w_in)
        if not small_mask.any():
            raise ValueError("hole covers the entire downscaled frame")
        small = normalize(resize_bilinear(original, h_in, w_in))
        t1 = time.perf_counter()
        filled = inpaint_image(models, small, small_mask)
        timings["inpaint"] = time.perf_counter() - t1
        t1 = time.perf_counter()
        restored = upscale_image(models.sr_net, filled, height, width)
        timings["upscale"] = time.perf_counter() - t1
        report["upscaler"] = "sr" if models.sr_net is not None else "bilinear"
        result = composite_back(original, restored, mask)
        save_image(result, out_path)
        report["status"] = "inpainted"
        if cfg.metrics:
            report["metrics_vs_input"] = eval_metrics(result, original)
    timings["total"] = time.perf_counter() - t0
    report["timings_s"] = timings
    (out_dir / f"{image_path.stem}.report.json").write_text(json.dumps(report, sort_keys=True) + "\n")
    return out_path


def eval_dataset(manifest: dict, cfg: PipelineConfig, out_path, inpaint_fn=None, split: str = "val",
                 hole_frac=(0.25, 0.5), seed: int = 0) -> Path:
    """Score synthetic-hole completions of every ``split`` image; writes a CSV report.

    ``inpaint_fn(image, mask)`` takes the normalized ground truth (1, 3, H, W) and
    a (1, 1, H, W) mask and returns the completed tensor. It must only read known
    pixels (the default, backed by the configured checkpoint, whitens the hole
    first); an oracle stub that returns the image unchanged is the exception.
    The last row (image = "MEAN") averages the others.
    """
    paths = split_paths(manifest, split)
    if not paths:
        raise ValueError(f"manifest has no {split!r} images")
    if inpaint_fn is None:
        models = Models(cfg)

        def inpaint_fn(x, m):
            return inpaint(models.generator, x, m)

    rng = np.random.default_rng(seed)
    h, w = cfg.input_size
    columns = [f"{region}_{name}" for region in ("hole", "full") for name in METRIC_NAMES]
    rows = []
    for path in paths:
        gt = resize_bilinear(load_image(path), h, w)
        mask, _ = random_rect_hole(rng, h, w, *hole_frac)
        x = _to_tensor(normalize(gt))
        m = torch.as_tensor(mask[None, None].astype(np.float32))
        with torch.no_grad():
            pred = inpaint_fn(x, m)
        pred_u8 = to_uint8(pred[0].numpy().transpose(1, 2, 0))
        hole = eval_metrics(pred_u8, gt.data, region=1 - mask)
        full = eval_metrics(pred_u8, gt.data)
        row = {"image": Path(path).name}
        row.update({f"hole_{k}": v for k, v in hole.items()})
        row.update({f"full_{k}": v for k, v in full.items()})
        rows.append(row)
    mean = {"image": "MEAN"}
    mean.update({c: float(np.mean([r[c] for r in rows])) for c in columns})
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image"] + columns)
        writer.writeheader()
        writer.writerows(rows + [mean])
    return out_path


def config_summary(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    d["detector"]["boxes"] = [list(b.as_tuple()) if isinstance(b, BoundingBox) else list(b)
                              for b in cfg.detector.boxes]
    return d
