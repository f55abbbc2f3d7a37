"""Command-line entry point: ``fcsin <command> ...``.

Exit codes: 0 success, 1 runtime fault, 2 usage or contract error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import torch

from .config import ABLATIONS, Config, format_value
from .frames_io import (
    IMAGE_SUFFIXES,
    DatasetIndex,
    build_dataset,
    load_raster,
    save_raster,
    sketchize,
    to_gray,
)

log = logging.getLogger("fcsin")

HELP = {
    "channels": "stem width of every stream",
    "scales": "encoder blocks per stream",
    "window": "attention window side",
    "heads": "attention heads",
    "max_channels": "cap on per-scale channel growth",
    "trace_times": "comma-separated trace timestamps, fractions allowed (1/3)",
    "use_pixel": "use pixel-level guidance",
    "use_sketch": "use sketch-level guidance",
    "use_region": "use region-level guidance",
    "use_csb": "enable the self-attention stream",
    "use_ccb": "enable the two cross-attention streams",
    "t": "target timestamp of the interpolated frame",
    "flow_levels": "block-matching pyramid levels",
    "flow_block": "block-matching block size",
    "flow_radius": "block-matching search radius per level",
    "max_keypoints": "keypoints kept per frame",
    "match_theta": "keypoint match confidence threshold",
    "match_tau": "descriptor distance temperature",
    "ball_radii": "trapped-ball radii, descending",
    "region_accept": "maximum region match cost",
    "lambda_l1": "L1 loss weight",
    "lambda_lpips": "perceptual loss weight",
    "featurizer_seed": "seed of the frozen perceptual featurizer",
    "lr": "learning rate",
    "beta1": "AdaMax first-moment decay",
    "beta2": "AdaMax infinity-norm decay",
    "eps": "AdaMax denominator epsilon",
    "weight_decay": "decay factor",
    "decay_mode": "param (decoupled weight decay) or lr (exponential lr decay)",
    "batch_size": "triplets per step",
    "epochs": "passes over the dataset",
    "crop_width": "augmentation crop width",
    "crop_height": "augmentation crop height",
    "augment": "resize/crop/flip training triplets",
    "seed": "run seed (falls back to $FCSIN_SEED)",
    "ckpt_every": "steps between checkpoints",
    "dataset": "dataset root holding index.manifest",
    "out_dir": "directory for checkpoints and the loss log",
    "threads": "torch worker threads",
}


class UsageError(Exception):
    pass


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def add_config_flags(p: argparse.ArgumentParser) -> None:
    defaults = Config().flat()
    for key in Config.schema():
        p.add_argument(flag_name(key), dest=f"cfg_{key}", metavar="VALUE", default=None,
                       help=f"{HELP[key]} (config key: {key}; default {format_value(defaults[key])})")


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if "threads" not in overrides and getattr(args, "threads", None):
        overrides["threads"] = args.threads
    if "seed" not in overrides and os.environ.get("FCSIN_SEED"):
        overrides["seed"] = os.environ["FCSIN_SEED"]
    try:
        cfg = cfg.override(**overrides)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    names = [n for n in (getattr(args, "ablate", None) or "").split(",") if n]
    bad = [n for n in names if n not in ABLATIONS]
    if bad:
        raise UsageError(f"unknown ablation {', '.join(bad)}; valid names: {', '.join(ABLATIONS)}")
    cfg = cfg.ablate(*names)
    try:
        cfg.net.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _images(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_sketchize(args: argparse.Namespace) -> int:
    src, dst = Path(args.in_dir), Path(args.out_dir)
    if not src.is_dir():
        raise UsageError(f"input directory not found: {src}")
    files = _images(src)
    if not files:
        raise UsageError(f"no images found in {src}")
    counts: dict[str, int] = {}
    records = []
    for f in files:
        rel = f.relative_to(src).with_suffix(".png")
        img = load_raster(f)
        if img.ndim == 2:
            img = img[..., None].repeat(3, axis=2)
        sk = sketchize(img, min_stroke_px=args.min_stroke_px, blur=args.blur)
        save_raster(dst / rel, sk)
        clip = rel.parts[0] if len(rel.parts) > 1 else "."
        counts[clip] = counts.get(clip, 0) + 1
        records.append(json.dumps({"source": str(f.relative_to(src)), "sketch": str(rel)}, sort_keys=True))
    (dst / "sketch.manifest").write_text("\n".join(records) + "\n")
    for clip, n in sorted(counts.items()):
        print(f"{clip}: {n} sketches")
    return 0


def cmd_build_dataset(args: argparse.Namespace) -> int:
    src = Path(args.frames_dir)
    if not src.is_dir():
        raise UsageError(f"frames directory not found: {src}")
    index = build_dataset(src, args.out_dir, stride=args.stride, split=args.split, convert=args.sketchize)
    print(f"{len(index)} triplets written to {args.out_dir} ({index.skipped_clips} clips skipped)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .training import TrainingDiverged, train

    cfg = resolve_config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return 0
    if not cfg.train.dataset:
        raise UsageError("no dataset given (--dataset or config key dataset)")
    try:
        data = DatasetIndex.read(cfg.train.dataset)
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if len(data) == 0:
        raise UsageError(f"dataset {cfg.train.dataset} has no triplets")
    out = Path(cfg.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    print(f"streams: {','.join(cfg.net.streams())}  trace depth: {cfg.net.trace_depth}  "
          f"lambda_l1={format_value(cfg.loss.lambda_l1)} lambda_lpips={format_value(cfg.loss.lambda_lpips)} "
          f"lr={format_value(cfg.optim.lr)} batch={cfg.train.batch_size}")
    try:
        res = train(cfg, data, out_dir=out, resume=args.resume, max_steps=args.max_steps)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if res.losses:
        last = res.losses[-1]
        print(f"step {res.state.step}: l1 {last[1]:.5f} lpips {last[2]:.5f} total {last[3]:.5f}")
    print(f"checkpoint: {res.checkpoint}")
    return 0


def _load_ckpt(path: str):
    from .training import load_checkpoint

    try:
        return load_checkpoint(path)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        raise UsageError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_interpolate(args: argparse.Namespace) -> int:
    from .pipeline import dump_guidance, extract_guidance, predict

    ck = _load_ckpt(args.ckpt)
    frames = []
    for p in (args.frame0, args.frame1):
        try:
            frames.append(to_gray(load_raster(p)))
        except OSError as exc:
            raise UsageError(str(exc)) from exc
    a, b = frames
    if a.shape != b.shape:
        raise UsageError(f"keyframe sizes differ: {a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}")
    ck.model.eval()
    g = extract_guidance(a, b, ck.config.guidance, ck.config.net)
    out = predict(ck.model, [g])[0]
    save_raster(args.out, out)
    if args.dump_guidance:
        target = Path(args.dump_guidance)
        written = dump_guidance(target, g)
        print(f"guidance: {len(written)} files in {target}")
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .metrics import evaluate

    try:
        data = DatasetIndex.read(args.dataset)
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if len(data) == 0:
        raise UsageError(f"dataset {args.dataset} has no triplets")
    if args.predict_target and args.ckpt == "-":
        model, cfg = None, Config()
    else:
        ck = _load_ckpt(args.ckpt)
        model, cfg = ck.model, ck.config
        model.eval()
    fp = cfg.fingerprint() + ("-oracle" if args.predict_target else "")
    report = evaluate(model, data, cfg.guidance, out_dir=args.out_dir, predict_target=args.predict_target,
                      fingerprint=fp)
    agg = report.aggregate()
    print(f"PSNR {agg['psnr']:.2f}  SSIM {agg['ssim']:.4f}  IE {agg['ie']:.2f}  CD {agg['cd']:.2f}  "
          f"({report.count} triplets)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fcsin", description="Sketch inbetweening with multi-level guidance.")
    p.add_argument("--threads", type=int, default=None, help="torch worker threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sketchize", help="convert colour frames to line sketches")
    s.add_argument("in_dir")
    s.add_argument("out_dir")
    s.add_argument("--min-stroke-px", type=int, default=12)
    s.add_argument("--blur", type=float, default=0.0, help="optional anti-alias sigma")
    s.set_defaults(func=cmd_sketchize)

    s = sub.add_parser("build-dataset", help="cut clips of ordered frames into triplets")
    s.add_argument("frames_dir")
    s.add_argument("out_dir")
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--split", default="train", choices=("train", "test"))
    s.add_argument("--sketchize", action="store_true", help="sketchize colour frames while building")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", help="train the network")
    s.add_argument("--config", help="flat key = value config file")
    s.add_argument("--ablate", default="", help=f"comma-separated subset of: {', '.join(ABLATIONS)}")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--max-steps", type=int, default=None, help="stop after this many optimiser steps")
    s.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    add_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("interpolate", help="synthesise the middle frame of two keyframes")
    s.add_argument("ckpt")
    s.add_argument("frame0")
    s.add_argument("frame1")
    s.add_argument("out")
    s.add_argument("--dump-guidance", metavar="DIR", help="also write guidance maps and flows into DIR")
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("evaluate", help="score a checkpoint on a triplet dataset")
    s.add_argument("ckpt", help="checkpoint path ('-' allowed with --predict-target)")
    s.add_argument("dataset")
    s.add_argument("out_dir")
    s.add_argument("--predict-target", action="store_true", help="use the ground truth as prediction")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("fatal", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
