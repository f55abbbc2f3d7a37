"""Overfit a tiny network on translating-shape triplets and report the L1 curve.

    python scripts/overfit_demo.py --steps 300 --out runs/overfit
"""
import argparse
import time

from fcsin.config import Config, NetConfig
from fcsin.metrics import evaluate
from fcsin.synthetic import moving_shapes
from fcsin.training import train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--triplets", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional run directory for losses.csv and last.ckpt")
    args = ap.parse_args()

    cfg = Config(net=NetConfig(channels=8, scales=2, window=4)).override(
        crop_width=32, crop_height=32, batch_size=args.triplets, epochs=args.steps, ckpt_every=0, seed=args.seed)
    data = moving_shapes(args.triplets, seed=args.seed)
    t0 = time.perf_counter()
    res = train(cfg, data, out_dir=args.out)
    elapsed = time.perf_counter() - t0

    for step, l1, _, total in res.losses[:: max(1, len(res.losses) // 10)]:
        print(f"step {step:4d}  l1 {l1:.4f}  total {total:.3f}")
    first, last = res.losses[0][1], res.losses[-1][1]
    print(f"L1 {first:.4f} -> {last:.4f} ({100 * last / first:.1f}% of initial) in {elapsed:.1f}s")
    report = evaluate(res.model, data, cfg.guidance, fingerprint=cfg.fingerprint())
    print(report.table())


if __name__ == "__main__":
    main()
