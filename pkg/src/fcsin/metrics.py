"""PSNR, SSIM, interpolation error and Chamfer distance, plus the batch evaluator."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .config import GuidanceConfig
from .frames_io import DatasetIndex, Triplet
from .model import FCSIN
from .pipeline import fcsin_forward

PSNR_CAP = 99.0
STROKE_THRESHOLD = 0.5
COLUMNS = ("psnr", "ssim", "ie", "cd")


def _pair(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99 dB."""
    pred, target = _pair(pred, target)
    mse = np.mean((pred - target) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(pred: np.ndarray, target: np.ndarray, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use symmetric padding at the borders. Colour images
    are averaged over channels.
    """
    pred, target = _pair(pred, target)
    if pred.ndim == 3:
        return float(np.mean([ssim(pred[..., c], target[..., c], k1, k2, data_range) for c in range(pred.shape[2])]))
    win = gaussian_window()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(x: np.ndarray) -> np.ndarray:
        return ndimage.correlate(x, win, mode="reflect")

    mx, my = filt(pred), filt(target)
    vx = filt(pred * pred) - mx * mx
    vy = filt(target * target) - my * my
    cxy = filt(pred * target) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean())


def interpolation_error(pred: np.ndarray, target: np.ndarray) -> float:
    """Root-mean-squared pixel difference, times 100."""
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((pred - target) ** 2)) * 1e2)


def _nearest_sq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Squared distance from every ``src`` pixel to the closest ``dst`` pixel."""
    _, (iy, ix) = ndimage.distance_transform_edt(~dst, return_indices=True)
    ys, xs = np.nonzero(src)
    return (ys - iy[ys, xs]) ** 2 + (xs - ix[ys, xs]) ** 2


def chamfer_distance(pred: np.ndarray, target: np.ndarray) -> float:
    """Symmetric Chamfer distance between stroke-pixel sets, times 1e4.

    Squared nearest-neighbour distances are averaged in each direction,
    the two directions are averaged, and the result is divided by the
    squared frame diagonal. Two empty sets score 0; one empty set scores
    the normalised maximum (1e4).
    """
    pred, target = _pair(pred, target)
    a, b = pred < STROKE_THRESHOLD, target < STROKE_THRESHOLD
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return 1e4
    h, w = a.shape
    d = 0.5 * (_nearest_sq(a, b).mean() + _nearest_sq(b, a).mean())
    return float(d / (h * h + w * w) * 1e4)


def all_metrics(pred: np.ndarray, target: np.ndarray) -> dict[str, float]:
    return {
        "psnr": psnr(pred, target),
        "ssim": ssim(pred, target),
        "ie": interpolation_error(pred, target),
        "cd": chamfer_distance(pred, target),
    }


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)
    fingerprint: str = ""

    @property
    def count(self) -> int:
        return len(self.rows)

    def aggregate(self) -> dict[str, float]:
        if not self.rows:
            return {k: float("nan") for k in COLUMNS}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in COLUMNS}

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = sorted(self.rows, key=lambda r: r["id"])
        with open(out / "metrics.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["id", *COLUMNS])
            for r in rows:
                wr.writerow([r["id"], *(f"{r[k]:.6f}" for k in COLUMNS)])
        agg = self.aggregate()
        with open(out / "summary.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["count", *COLUMNS, "fingerprint"])
            wr.writerow([self.count, *(f"{agg[k]:.6f}" for k in COLUMNS), self.fingerprint])
        (out / "summary.txt").write_text(self.table())

    def table(self) -> str:
        agg = self.aggregate()
        head = f"{'Method':<12}| {'PSNR':>8} | {'SSIM':>8} | {'IE':>8} | {'CD':>8}"
        line = (f"{'FC-SIN':<12}| {agg['psnr']:8.2f} | {agg['ssim']:8.4f} | "
                f"{agg['ie']:8.2f} | {agg['cd']:8.2f}")
        return f"{head}\n{'-' * len(head)}\n{line}\n\ntriplets: {self.count}\nconfig: {self.fingerprint}\n"


def evaluate(
    model: FCSIN | None,
    dataset: DatasetIndex | Sequence[Triplet],
    gcfg: GuidanceConfig = GuidanceConfig(),
    out_dir: str | os.PathLike | None = None,
    predict_target: bool = False,
    fingerprint: str = "",
) -> MetricsReport:
    """Score the model on every triplet of ``dataset``.

    With ``predict_target`` the ground-truth middle frame is used as the
    prediction, which exercises the harness without a model.
    """
    if len(dataset) == 0:
        raise ValueError("evaluation set is empty")
    report = MetricsReport(fingerprint=fingerprint)
    if isinstance(dataset, DatasetIndex):
        triplets = [dataset.load(i) for i in range(len(dataset))]
    else:
        triplets = list(dataset)
    for t in sorted(triplets, key=lambda t: t.id):
        if predict_target:
            pred = t.frame_mid
        else:
            pred = fcsin_forward(t.frame0, t.frame1, model, gcfg)
        report.rows.append({"id": t.id, **all_metrics(pred, t.frame_mid)})
    if out_dir is not None:
        report.write(out_dir)
    return report
