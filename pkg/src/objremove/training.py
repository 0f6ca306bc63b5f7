"""Dataset ingestion, adversarial training, checkpoints and evaluation metrics."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from . import checkpoint as ckpt
from .critics import (CriticConfig, LossWeights, crop_local, discounted_l1, generator_objective,
                      global_critic, gradient_penalty, local_critic, wgan_critic_loss, weight_maps)
from .generator import GeneratorConfig, InpaintGenerator, paste
from .imagecore import (UINT8, ImageTensor, fill_holes, load_image, normalize, random_rect_hole,
                        resize_bilinear, to_uint8)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
PSNR_CAP = 100.0
_PSNR_EPS = 255.0 ** 2 / 10 ** (PSNR_CAP / 10)


@dataclass
class TrainConfig:
    batch_size: int = 4
    n_critic: int = 5
    learning_rate: float = 1e-4
    adam_betas: tuple = (0.5, 0.9)
    max_steps: int = 1000
    seed: int = 0
    input_size: tuple = (256, 256)
    hole_frac: tuple = (0.25, 0.5)
    manifest: str | None = None
    checkpoint_interval: int = 100
    base_width: int = 16
    critic_width: int = 16
    gamma: float = 0.99
    use_attention: bool = True
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        self.input_size = tuple(int(v) for v in self.input_size)
        self.hole_frac = tuple(float(v) for v in self.hole_frac)
        if self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("batch_size and n_critic must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(base_width=self.base_width, input_size=self.input_size,
                               use_attention=self.use_attention)

    def critic_config(self) -> CriticConfig:
        return CriticConfig(global_input=self.input_size, width=self.critic_width)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("adam_betas", "input_size", "hole_frac"):
            d[k] = list(d[k])
        return d


@dataclass
class TrainState:
    config: TrainConfig
    generator: InpaintGenerator
    global_critic: torch.nn.Module
    local_critic: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_global: torch.optim.Optimizer
    opt_local: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    critic_updates: int = 0


@dataclass
class MetricsRecord:
    step: int
    l1: float
    l2: float
    psnr: float
    tv: float
    losses: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class Batch(NamedTuple):
    gt: torch.Tensor  # (B, 3, H, W) normalized
    mask: torch.Tensor  # (B, 1, H, W), 1 = known
    holed: torch.Tensor


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.adam_betas)


def init_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    gen = InpaintGenerator(cfg.generator_config())
    gc, lc = global_critic(cfg.critic_config()), local_critic(cfg.critic_config())
    return TrainState(cfg, gen, gc, lc, _adam(gen.parameters(), cfg), _adam(gc.parameters(), cfg),
                      _adam(lc.parameters(), cfg), np.random.default_rng(cfg.seed))


# ---------------------------------------------------------------- manifest


def _split_hash(name: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{name}".encode()).hexdigest()


def build_manifest(image_dir, split_fractions=(0.8, 0.2), seed: int = 0, path=None) -> dict:
    """List images under ``image_dir`` with a train/val split tag.

    A fresh build ranks files by a seeded hash of their name and gives the
    lowest-ranked ``round(val_frac * N)`` files to val. When ``path`` already
    holds a manifest built with the same seed, surviving files keep their split
    and only new files are placed (into whichever split is furthest below its
    quota), so adding a file never moves another one. The result is written to
    ``path`` if given.
    """
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise FileNotFoundError(f"image directory {image_dir} does not exist")
    names = sorted(p.relative_to(image_dir).as_posix() for p in image_dir.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not names:
        raise ValueError(f"no images found in {image_dir}")
    train_frac, val_frac = split_fractions
    if train_frac < 0 or val_frac < 0 or abs(train_frac + val_frac - 1) > 1e-9:
        raise ValueError("split fractions must be non-negative and sum to 1")

    previous = {}
    if path is not None and Path(path).exists():
        old = load_manifest(path)
        if old["seed"] == seed and tuple(old["split_fractions"]) == (train_frac, val_frac):
            previous = {e["path"]: e["split"] for e in old["entries"]}

    splits = {n: previous[n] for n in names if n in previous}
    fresh = sorted((n for n in names if n not in splits), key=lambda n: _split_hash(n, seed))
    if not splits:
        n_val = int(round(val_frac * len(names)))
        splits = {n: ("val" if i < n_val else "train") for i, n in enumerate(fresh)}
    else:
        for n in fresh:
            total = len(splits) + 1
            n_val = sum(1 for s in splits.values() if s == "val")
            deficit_val = val_frac * total - n_val
            deficit_train = train_frac * total - (total - 1 - n_val)
            splits[n] = "val" if deficit_val > deficit_train else "train"

    manifest = {"version": 1, "root": str(image_dir.resolve()), "seed": seed,
                "split_fractions": [train_frac, val_frac],
                "entries": [{"path": n, "split": splits[n]} for n in names]}
    if path is not None:
        Path(path).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def load_manifest(path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("version") != 1 or "entries" not in manifest:
        raise ValueError(f"{path} is not a manifest file")
    return manifest


def split_paths(manifest: dict, split: str) -> list[Path]:
    root = Path(manifest["root"])
    return [root / e["path"] for e in manifest["entries"] if e["split"] == split]


class ImageCache:
    """Decoded, resized, normalized images keyed by path; unreadable files map to None."""

    def __init__(self, size):
        self.size = tuple(size)
        self._cache: dict = {}

    def get(self, path) -> np.ndarray | None:
        path = str(path)
        if path not in self._cache:
            try:
                img = resize_bilinear(load_image(path), *self.size)
                self._cache[path] = normalize(img).data
            except (OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                self._cache[path] = None
        return self._cache[path]


def make_batch(images, rng: np.random.Generator, hole_frac) -> Batch:
    """Stack (H, W, 3) normalized arrays and cut one random rectangle per sample."""
    gts, masks = [], []
    for img in images:
        h, w = img.shape[:2]
        m, _ = random_rect_hole(rng, h, w, *hole_frac)
        gts.append(img.transpose(2, 0, 1))
        masks.append(m[None].astype(np.float32))
    gt = torch.as_tensor(np.stack(gts), dtype=torch.float32)
    mask = torch.as_tensor(np.stack(masks))
    return Batch(gt, mask, fill_holes(gt, mask))


def next_batch(manifest: dict, state: TrainState, cache: ImageCache | None = None,
               split: str = "train") -> Batch:
    cfg = state.config
    cache = cache or ImageCache(cfg.input_size)
    paths = split_paths(manifest, split)
    if not paths:
        raise ValueError(f"manifest has no {split!r} images")
    images, attempts = [], 0
    while len(images) < cfg.batch_size:
        attempts += 1
        if attempts > 10 * cfg.batch_size + len(paths):
            raise RuntimeError("could not fill a batch: too many unreadable images")
        img = cache.get(paths[int(state.rng.integers(len(paths)))])
        if img is not None:
            images.append(img)
    return make_batch(images, state.rng, cfg.hole_frac)


def fixed_eval_batch(manifest: dict, cfg: TrainConfig, split="val", seed=1234) -> Batch:
    """Deterministic batch of every image in ``split`` with seeded holes (for validation)."""
    cache = ImageCache(cfg.input_size)
    images = [im for im in (cache.get(p) for p in split_paths(manifest, split)) if im is not None]
    if not images:
        raise ValueError(f"no readable {split!r} images")
    return make_batch(images, np.random.default_rng(seed), cfg.hole_frac)


# ---------------------------------------------------------------- metrics


def _as_uint8(img) -> np.ndarray:
    if isinstance(img, ImageTensor):
        if img.range_tag != UINT8:
            raise ValueError("metrics expect uint8 images")
        return img.data
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise ValueError("metrics expect uint8 images")
    return arr


def eval_metrics(pred, gt, region=None) -> dict:
    """l1, l2, psnr (dB, CAP for identical inputs) and tv of ``pred`` in uint8 units.

    Images are (..., H, W, C). ``region`` (H, W), if given, restricts every metric
    to pixels where it is 1; tv then counts only pairs with both pixels inside.
    """
    p = _as_uint8(pred).astype(np.float64)
    g = _as_uint8(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if p.ndim == 2:
        p, g = p[..., None], g[..., None]
    p, g = p.reshape((-1,) + p.shape[-3:]), g.reshape((-1,) + g.shape[-3:])
    if region is None:
        sel = np.ones(p.shape[1:3], dtype=bool)
    else:
        sel = np.asarray(region).astype(bool)
        if sel.shape != p.shape[1:3]:
            raise ValueError("region does not match image size")
    full = np.broadcast_to(sel[None, :, :, None], p.shape)
    if not full.any():
        raise ValueError("metric region is empty")
    diff = (p - g)[full]
    l1 = float(np.abs(diff).mean())
    l2 = float((diff ** 2).mean())
    psnr = PSNR_CAP if l2 <= _PSNR_EPS else float(10 * math.log10(255.0 ** 2 / l2))
    pair_h = np.broadcast_to((sel[:, 1:] & sel[:, :-1])[None, :, :, None], p[:, :, 1:].shape)
    pair_v = np.broadcast_to((sel[1:] & sel[:-1])[None, :, :, None], p[:, 1:].shape)
    dh = np.abs(np.diff(p, axis=2))[pair_h]
    dv = np.abs(np.diff(p, axis=1))[pair_v]
    pairs = dh.size + dv.size
    tv = float((dh.sum() + dv.sum()) / pairs) if pairs else 0.0
    return {"l1": l1, "l2": l2, "psnr": psnr, "tv": tv}


def tensor_to_uint8(x: torch.Tensor) -> np.ndarray:
    """(B, 3, H, W) normalized tensor -> (B, H, W, 3) uint8."""
    return to_uint8(x.detach().cpu().numpy().transpose(0, 2, 3, 1))


def w1_oracle_1d(samples_a, samples_b) -> float:
    """Exact W1 between two equal-size empirical 1-D distributions (sorted coupling)."""
    a, b = np.sort(np.asarray(samples_a, dtype=np.float64)), np.sort(np.asarray(samples_b, dtype=np.float64))
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two 1-D sample lists of equal length")
    if a.size == 0:
        raise ValueError("sample lists are empty")
    return float(np.abs(a - b).mean())


def fit_critic_1d(samples_a, samples_b, steps=2000, lr=1e-3, w_gp=10.0, width=64, seed=0):
    """Train a small WGAN-GP critic to separate b from a; returns (critic, mean score gap).

    The gap E[D(b)] - E[D(a)] is the dual lower estimate of W1(a, b).
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    critic = torch.nn.Sequential(torch.nn.Linear(1, width), torch.nn.ELU(),
                                 torch.nn.Linear(width, width), torch.nn.ELU(),
                                 torch.nn.Linear(width, 1), torch.nn.Flatten(0))
    a = torch.as_tensor(np.asarray(samples_a, dtype=np.float32)[:, None])
    b = torch.as_tensor(np.asarray(samples_b, dtype=np.float32)[:, None])
    # The penalty is symmetric in the slope's sign, so a critic that starts out
    # scoring a above b can settle at slope -1. Negating the last layer is an
    # equally likely draw from the init distribution, so orient it first.
    with torch.no_grad():
        if critic(b).mean() < critic(a).mean():
            critic[-2].weight.neg_()
            critic[-2].bias.neg_()
    opt = torch.optim.Adam(critic.parameters(), lr=lr, betas=(0.5, 0.9))
    no_known = torch.zeros(1)
    for _ in range(steps):
        # b plays "real": the critic learns to score b higher
        fake = a[torch.as_tensor(rng.permutation(len(a)))]
        gp = gradient_penalty(critic, b, fake, no_known, rng)
        loss = wgan_critic_loss(critic(b), critic(fake), gp, w_gp)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        gap = float(critic(b).mean() - critic(a).mean())
    return critic, gap


# ---------------------------------------------------------------- training


def _finite(name, value):
    if not torch.isfinite(value).all():
        raise FloatingPointError(f"non-finite loss term {name!r}")
    return value


def train_step(batch: Batch, state: TrainState) -> MetricsRecord:
    """n_critic updates of both critics, then one generator update. Mutates ``state``."""
    cfg = state.config
    gen, dg, dl = state.generator, state.global_critic, state.local_critic
    lw, local_size = cfg.loss, dl.input_size
    gt, mask, holed = batch

    with torch.no_grad():
        _, refined = gen(holed, mask)
        fake = paste(refined, gt, mask)
    real_local, mask_local = crop_local(gt, mask, local_size)
    fake_local, _ = crop_local(fake, mask, local_size)

    losses = {}
    for _ in range(cfg.n_critic):
        gp_g = _finite("gp_global", gradient_penalty(dg, gt, fake, mask, state.rng))
        gp_l = _finite("gp_local", gradient_penalty(dl, real_local, fake_local, mask_local, state.rng))
        d_global = wgan_critic_loss(dg(gt), dg(fake), gp_g, lw.w_gp)
        d_local = wgan_critic_loss(dl(real_local), dl(fake_local), gp_l, lw.w_gp)
        d_loss = _finite("critic_global", d_global) + _finite("critic_local", d_local)
        state.opt_global.zero_grad()
        state.opt_local.zero_grad()
        d_loss.backward()
        state.opt_global.step()
        state.opt_local.step()
        state.critic_updates += 1
    losses.update(critic_global=d_global.item(), critic_local=d_local.item(),
                  gp_global=gp_g.item(), gp_local=gp_l.item())

    coarse, refined = gen(holed, mask)
    completed = paste(refined, gt, mask)
    comp_local, _ = crop_local(completed, mask, local_size)
    weights = weight_maps(mask, cfg.gamma)
    total, terms = generator_objective(coarse, refined, gt, mask, (dg(completed), dl(comp_local)),
                                       lw, weights=weights)
    for name, value in terms.items():
        _finite(name, value)
    _finite("generator_total", total)
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.step += 1

    losses.update({k: v.item() for k, v in terms.items()}, generator_total=total.item())
    m = eval_metrics(tensor_to_uint8(completed), tensor_to_uint8(gt))
    return MetricsRecord(state.step, m["l1"], m["l2"], m["psnr"], m["tv"], losses)


def validation_l1(state: TrainState, batch: Batch) -> float:
    """Discounted L1 of the refined output on a fixed batch (no gradient)."""
    with torch.no_grad():
        _, refined = state.generator(batch.holed, batch.mask)
    return float(discounted_l1(refined, batch.gt, weight_maps(batch.mask, state.config.gamma)))


# ---------------------------------------------------------------- checkpoints

INPAINT_KIND = "inpaint"


def checkpoint_save(state: TrainState, path) -> Path:
    header = {"step": state.step, "train_config": state.config.to_dict(),
              "generator_config": state.generator.cfg.to_dict()}
    payload = {
        "generator": state.generator.state_dict(),
        "global_critic": state.global_critic.state_dict(),
        "local_critic": state.local_critic.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_global": state.opt_global.state_dict(),
        "opt_local": state.opt_local.state_dict(),
        "rng": state.rng.bit_generator.state,
        "critic_updates": state.critic_updates,
    }
    return ckpt.save_container(path, INPAINT_KIND, header, payload)


def checkpoint_load(path) -> TrainState:
    header, payload = ckpt.load_container(path, INPAINT_KIND)
    cfg = TrainConfig(**header["train_config"])
    state = init_state(cfg)
    state.generator.load_state_dict(payload["generator"])
    state.global_critic.load_state_dict(payload["global_critic"])
    state.local_critic.load_state_dict(payload["local_critic"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_global.load_state_dict(payload["opt_global"])
    state.opt_local.load_state_dict(payload["opt_local"])
    state.rng.bit_generator.state = payload["rng"]
    state.step = header["step"]
    state.critic_updates = payload["critic_updates"]
    return state


def load_generator(path) -> InpaintGenerator:
    """Inference-only generator from a training checkpoint."""
    header, payload = ckpt.load_container(path, INPAINT_KIND)
    gen = InpaintGenerator(GeneratorConfig(**header["generator_config"]))
    gen.load_state_dict(payload["generator"])
    return gen.eval()


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:07d}.ckpt"


def train_loop(cfg: TrainConfig, out_dir, resume=None, manifest: dict | None = None) -> Path:
    """Run to ``cfg.max_steps``; checkpoint every interval and at the end.

    Writes ``metrics.jsonl`` (one record per step) in ``out_dir``. With ``resume``
    the run continues from that checkpoint and the log is cut back to its step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest is None:
        if cfg.manifest is None:
            raise ValueError("no manifest given")
        manifest = load_manifest(cfg.manifest)
    log_path = out_dir / "metrics.jsonl"

    if resume is not None:
        state = checkpoint_load(resume)
        state.config.max_steps = cfg.max_steps
        kept = []
        if log_path.exists():
            kept = [ln for ln in log_path.read_text().splitlines()
                    if ln.strip() and json.loads(ln)["step"] <= state.step]
        log_path.write_text("".join(ln + "\n" for ln in kept))
    else:
        state = init_state(cfg)
        log_path.write_text("")
        checkpoint_save(state, out_dir / checkpoint_name(0))

    cache = ImageCache(state.config.input_size)
    last = out_dir / checkpoint_name(state.step)
    with log_path.open("a") as fh:
        while state.step < cfg.max_steps:
            record = train_step(next_batch(manifest, state, cache), state)
            fh.write(record.to_json() + "\n")
            fh.flush()
            if state.step % state.config.checkpoint_interval == 0 or state.step == cfg.max_steps:
                last = checkpoint_save(state, out_dir / checkpoint_name(state.step))
    if not last.exists():
        last = checkpoint_save(state, last)
    return last
