"""Render keypoint matches, region maps and the guidance stack for one keyframe pair.

    python scripts/visualize_guidance.py frame0.png frame1.png out_dir
    python scripts/visualize_guidance.py --synthetic out_dir
"""
import argparse
from pathlib import Path

from fcsin.config import Config
from fcsin.frames_io import load_raster
from fcsin.pipeline import dump_guidance, extract_guidance
from fcsin.region_corr import region_overlay
from fcsin.sketch_corr import match_overlay
from fcsin.synthetic import moving_shapes


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("paths", nargs="+", help="frame0 frame1 out_dir, or just out_dir with --synthetic")
    ap.add_argument("--synthetic", action="store_true", help="use a generated shape pair")
    ap.add_argument("--config", default=None)
    args = ap.parse_args()

    if args.synthetic:
        if len(args.paths) != 1:
            ap.error("--synthetic takes only out_dir")
        t = moving_shapes(1, size=(96, 96), seed=1)[0]
        i0, i1, out = t.frame0, t.frame1, Path(args.paths[0])
    else:
        if len(args.paths) != 3:
            ap.error("expected frame0 frame1 out_dir")
        i0, i1, out = load_raster(args.paths[0]), load_raster(args.paths[1]), Path(args.paths[2])
    cfg = Config.load(args.config) if args.config else Config()

    g = extract_guidance(i0, i1, cfg.guidance, cfg.net)
    written = dump_guidance(out, g)
    ex = g.extras
    if "matches" in ex:
        match_overlay(out / "matches.png", i0, i1, ex["keypoints0"], ex["keypoints1"], ex["matches"])
        written.append(out / "matches.png")
        print(f"{len(ex['matches'])} keypoint matches")
    if "regions0" in ex:
        region_overlay(out / "regions0.png", ex["regions0"])
        region_overlay(out / "regions1.png", ex["regions1"])
        written += [out / "regions0.png", out / "regions1.png"]
        print(f"{len(ex['region_pairs'])} region pairs")
    for p in written:
        print(p)


if __name__ == "__main__":
    main()
