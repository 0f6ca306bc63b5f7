"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as kv
from .detection import detect, format_detections, select_targets
from .generator import inpaint
from .imagecore import (downscale_mask, load_image, load_mask, mask_from_boxes, normalize,
                        resize_bilinear, save_image, save_mask)
from .pipeline import (Models, PipelineConfig, eval_dataset, inpaint_image, parse_boxes,
                       pipeline_config_from, run_pipeline, upscale_image)
from .superres import (SRConfig, gradient_crops, init_sr_state, random_crops, sr_checkpoint_load,
                       sr_checkpoint_save, train_sr)
from .training import TrainConfig, build_manifest, eval_metrics, load_generator, load_manifest, train_loop

log = logging.getLogger("objremove")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice")


def _detector_flags(p):
    p.add_argument("--box", action="append", default=[], metavar="X0,Y0,X1,Y1",
                   help="stub detection box (repeatable)")
    p.add_argument("--sidecar", help="detections file, one JSON record per line")
    p.add_argument("--detector-command", help="command printing detections for an image path")
    p.add_argument("--classes", help="comma-separated class allowlist")
    p.add_argument("--confidence", type=float, help="confidence threshold")
    p.add_argument("--dilate", type=int, help="mask dilation in pixels")


def build_parser() -> Parser:
    parser = Parser(prog="objremove", description="Detect, mask, inpaint and upscale.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("run", help="full pipeline on one image")
    _common(p)
    _detector_flags(p)
    p.add_argument("image")
    p.add_argument("--checkpoint", help="inpainting checkpoint")
    p.add_argument("--sr-checkpoint", help="super-resolution checkpoint (default: bilinear)")
    p.add_argument("--out-dir")

    p = sub.add_parser("detect", help="print selected detections")
    _common(p)
    _detector_flags(p)
    p.add_argument("image")

    p = sub.add_parser("mask", help="write the removal mask (255 known, 0 missing)")
    _common(p)
    _detector_flags(p)
    p.add_argument("image")
    p.add_argument("--out", required=True)

    p = sub.add_parser("inpaint", help="inpaint an image at the generator resolution")
    _common(p)
    p.add_argument("image")
    p.add_argument("--mask", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("upscale", help="x4 super-resolution (or bilinear) of an image")
    _common(p)
    p.add_argument("image")
    p.add_argument("--sr-checkpoint")
    p.add_argument("--size", metavar="WxH", help="final size (default: 4x input)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-inpaint", help="adversarial training of the inpainting model")
    _common(p)
    p.add_argument("--data-dir", help="image directory (a manifest is built in --out-dir)")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--input-size", type=int, help="square generator input size")
    p.add_argument("--base-width", type=int)
    p.add_argument("--n-critic", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-interval", type=int)

    p = sub.add_parser("train-sr", help="train the x4 upsampler")
    _common(p)
    p.add_argument("--data-dir", help="high-res images (default: synthetic gradients)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--input-size", type=int, default=8, help="square low-res input size")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--n-crops", type=int, default=16)
    p.add_argument("--lr", type=float)
    p.add_argument("--adversarial", action="store_true")

    p = sub.add_parser("eval", help="metrics report on synthetic holes")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val")

    p = sub.add_parser("metrics", help="l1 / l2 / psnr / tv between two images")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", help="restrict to missing pixels of this mask file")
    return parser


def _config_values(args) -> dict[str, str]:
    values = kv.load_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def _strict_overrides(obj, values):
    unknown = set(values) - kv.known_keys(obj)
    if unknown:
        raise kv.ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return kv.apply_overrides(obj, values)


def _pipeline_config(args) -> PipelineConfig:
    values = _config_values(args)
    if args.box:
        values["detector.kind"] = "stub"
        values["detector.boxes"] = ";".join(args.box)
    if args.sidecar:
        values["detector.kind"] = "sidecar"
        values["detector.sidecar"] = args.sidecar
    if args.detector_command:
        values["detector.kind"] = "external-command"
        values["detector.command"] = args.detector_command
    for flag, key in (("classes", "detector.class_allowlist"), ("confidence", "detector.confidence_threshold"),
                      ("dilate", "dilate"), ("checkpoint", "inpaint_checkpoint"),
                      ("sr_checkpoint", "sr_checkpoint"), ("out_dir", "output_dir")):
        if getattr(args, flag, None) is not None:
            values[key] = str(getattr(args, flag))
    return pipeline_config_from(values)


def _selected(args, cfg):
    img = load_image(args.image)
    return img, select_targets(detect(img, cfg.detector, args.image), cfg.detector)


def cmd_run(args):
    out = run_pipeline(args.image, _pipeline_config(args))
    print(out)


def cmd_detect(args):
    _, dets = _selected(args, _pipeline_config(args))
    sys.stdout.write(format_detections(dets))


def cmd_mask(args):
    cfg = _pipeline_config(args)
    img, dets = _selected(args, cfg)
    mask = mask_from_boxes([d.box for d in dets], img.height, img.width, cfg.dilate)
    print(save_mask(mask, args.out))


def _inpaint_cfg(values) -> tuple[PipelineConfig, Models]:
    """Pipeline config whose input size defaults to the checkpoint's."""
    gen = load_generator(values["inpaint_checkpoint"])
    values.setdefault("input_size", "{},{}".format(*gen.cfg.input_size))
    cfg = pipeline_config_from(values)
    return cfg, Models(cfg, generator=gen)


def cmd_inpaint(args):
    values = _config_values(args)
    values["inpaint_checkpoint"] = args.checkpoint
    cfg, models = _inpaint_cfg(values)
    h, w = cfg.input_size
    img = normalize(resize_bilinear(load_image(args.image), h, w))
    mask = load_mask(args.mask)
    if mask.shape != (h, w):
        mask = downscale_mask(mask, h, w)
    print(save_image(inpaint_image(models, img, mask), args.out))


def cmd_upscale(args):
    img = load_image(args.image)
    net = sr_checkpoint_load(args.sr_checkpoint).net.eval() if args.sr_checkpoint else None
    if args.size:
        w, h = (int(v) for v in args.size.lower().split("x"))
    else:
        h, w = 4 * img.height, 4 * img.width
    print(save_image(upscale_image(net, normalize(img), h, w), args.out))


def cmd_train_inpaint(args):
    cfg = _strict_overrides(TrainConfig(), _config_values(args))
    overrides = {"max_steps": args.max_steps, "batch_size": args.batch_size, "base_width": args.base_width,
                 "n_critic": args.n_critic, "learning_rate": args.lr, "seed": args.seed,
                 "checkpoint_interval": args.checkpoint_interval}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.input_size is not None:
        cfg.input_size = (args.input_size, args.input_size)
    cfg.__post_init__()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        manifest = load_manifest(args.manifest)
        cfg.manifest = args.manifest
    elif args.data_dir:
        cfg.manifest = str(out_dir / "manifest.json")
        manifest = build_manifest(args.data_dir, seed=cfg.seed, path=cfg.manifest)
    elif cfg.manifest:
        manifest = load_manifest(cfg.manifest)
    else:
        raise UsageError("train-inpaint needs --data-dir or --manifest")
    print(train_loop(cfg, out_dir, resume=args.resume, manifest=manifest))


def cmd_train_sr(args):
    cfg = _strict_overrides(SRConfig(input_size=(args.input_size, args.input_size)), _config_values(args))
    if args.lr is not None:
        cfg.learning_rate = args.lr
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.adversarial = cfg.adversarial or args.adversarial
    size = 4 * cfg.input_size[0]
    if args.data_dir:
        images = [normalize(load_image(p)).data for p in sorted(Path(args.data_dir).iterdir())
                  if p.suffix.lower() in (".png", ".jpg", ".jpeg")]
        hr = random_crops(images, size, args.n_crops, cfg.seed)
    else:
        hr = gradient_crops(args.n_crops, size, cfg.seed)
    state = init_sr_state(cfg)
    history = train_sr(state, hr, args.steps, args.batch_size)
    if history:
        print(f"content loss {history[0]['content']:.6f} -> {history[-1]['content']:.6f}")
    print(sr_checkpoint_save(state, args.out))


def cmd_eval(args):
    values = _config_values(args)
    values["inpaint_checkpoint"] = args.checkpoint
    cfg, models = _inpaint_cfg(values)
    seed = args.seed if args.seed is not None else 0

    def fill(x, m):
        return inpaint(models.generator, x, m)

    print(eval_dataset(load_manifest(args.manifest), cfg, args.out, inpaint_fn=fill,
                       split=args.split, seed=seed))


def cmd_metrics(args):
    pred, gt = load_image(args.pred), load_image(args.gt)
    region = None
    if args.mask:
        region = 1 - load_mask(args.mask)
    m = eval_metrics(pred, gt, region=region)
    print(" ".join(f"{k}={v:g}" for k, v in m.items()))


COMMANDS = {
    "run": cmd_run, "detect": cmd_detect, "mask": cmd_mask, "inpaint": cmd_inpaint,
    "upscale": cmd_upscale, "train-inpaint": cmd_train_inpaint, "train-sr": cmd_train_sr,
    "eval": cmd_eval, "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed)
    try:
        COMMANDS[args.command](args)
    except (UsageError, kv.ConfigError) as exc:
        print(f"objremove {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit 2
        log.debug("command failed", exc_info=True)
        print(f"objremove {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
