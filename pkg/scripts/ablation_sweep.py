"""Train the full model and each single ablation on the same synthetic data.

Prints parameter counts and held-out metrics per variant; a desk-scale
stand-in for the ablation table, not a reproduction of it.

    python scripts/ablation_sweep.py --epochs 100
"""
import argparse

from fcsin.config import ABLATIONS, Config, NetConfig
from fcsin.metrics import evaluate
from fcsin.model import parameter_count
from fcsin.synthetic import moving_shapes
from fcsin.training import train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--train", type=int, default=8)
    ap.add_argument("--test", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = Config(net=NetConfig(channels=8, scales=2, window=4)).override(
        crop_width=32, crop_height=32, batch_size=4, epochs=args.epochs, ckpt_every=0, seed=args.seed)
    train_set = moving_shapes(args.train, seed=args.seed)
    test_set = moving_shapes(args.test, seed=args.seed + 1000)

    print(f"{'variant':<10} {'params':>8} {'PSNR':>7} {'SSIM':>7} {'IE':>7} {'CD':>8}")
    for name in ("full", *ABLATIONS):
        cfg = base if name == "full" else base.ablate(name)
        res = train(cfg, train_set)
        agg = evaluate(res.model, test_set, cfg.guidance).aggregate()
        print(f"{name:<10} {parameter_count(res.model):>8d} {agg['psnr']:>7.2f} {agg['ssim']:>7.4f} "
              f"{agg['ie']:>7.2f} {agg['cd']:>8.2f}")


if __name__ == "__main__":
    main()
