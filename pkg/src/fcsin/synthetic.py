"""Synthetic sketch triplets of outlined shapes moving in straight lines."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from skimage.draw import circle_perimeter, polygon_perimeter

from .frames_io import Triplet, save_raster


def draw_shape(canvas: np.ndarray, kind: str, cx: float, cy: float, r: int) -> None:
    h, w = canvas.shape
    cx, cy = int(round(cx)), int(round(cy))
    if kind == "circle":
        rr, cc = circle_perimeter(cy, cx, r, shape=canvas.shape)
    elif kind == "square":
        rr, cc = polygon_perimeter([cy - r, cy - r, cy + r, cy + r], [cx - r, cx + r, cx + r, cx - r],
                                   shape=canvas.shape)
    elif kind == "triangle":
        rr, cc = polygon_perimeter([cy + r, cy + r, cy - r], [cx - r, cx + r, cx], shape=canvas.shape)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    canvas[rr, cc] = 0.0


def moving_shapes(n: int, size: tuple[int, int] = (32, 32), seed: int = 0, max_step: int = 3) -> list[Triplet]:
    """``n`` triplets, each one outlined shape translating by a constant step."""
    rng = np.random.default_rng(seed)
    h, w = size
    kinds = ("square", "circle", "triangle")
    out = []
    for k in range(n):
        r_lo = max(2, min(4, min(h, w) // 5))
        r = int(rng.integers(r_lo, max(r_lo + 1, min(h, w) // 5)))
        step = rng.integers(-max_step, max_step + 1, size=2)
        margin = r + 2 + 2 * np.abs(step)
        cx = rng.uniform(margin[0], w - 1 - margin[0])
        cy = rng.uniform(margin[1], h - 1 - margin[1])
        kind = kinds[k % len(kinds)]
        frames = []
        for j in (-1, 0, 1):
            canvas = np.ones((h, w))
            draw_shape(canvas, kind, cx + j * step[0], cy + j * step[1], r)
            frames.append(canvas)
        out.append(Triplet(frames[0], frames[1], frames[2], id=f"shape_{k:03d}"))
    return out


def write_shape_clips(
    root: str | os.PathLike,
    n_clips: int = 2,
    n_frames: int = 5,
    size: tuple[int, int] = (32, 32),
    seed: int = 0,
) -> list[Path]:
    """Write clips of ordered frames (one moving shape each) as PNGs under ``root``."""
    rng = np.random.default_rng(seed)
    h, w = size
    root = Path(root)
    kinds = ("square", "circle", "triangle")
    written = []
    for c in range(n_clips):
        r_lo = max(2, min(4, min(h, w) // 5))
        r = int(rng.integers(r_lo, max(r_lo + 1, min(h, w) // 5)))
        step = rng.integers(-2, 3, size=2)
        cx = w / 2 - step[0] * (n_frames - 1) / 2
        cy = h / 2 - step[1] * (n_frames - 1) / 2
        for f in range(n_frames):
            canvas = np.ones((h, w))
            draw_shape(canvas, kinds[c % len(kinds)], cx + f * step[0], cy + f * step[1], r)
            p = root / f"clip{c:02d}" / f"{f:04d}.png"
            save_raster(p, canvas)
            written.append(p)
    return written
