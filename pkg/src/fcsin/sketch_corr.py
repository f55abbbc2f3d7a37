"""Stroke keypoints, cross-frame matching, linear tracking and trace rasters."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage.draw import line
from skimage.feature import corner_harris, peak_local_max

from .frames_io import save_raster

DESC_PATCH = 8
NMS_RADIUS = 4


@dataclass
class Keypoint:
    x: float
    y: float
    confidence: float
    descriptor: np.ndarray

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class MatchPair:
    index_a: int
    index_b: int
    confidence: float


def stroke_mask(sketch: np.ndarray) -> np.ndarray:
    return sketch < 0.5


def detect_keypoints(sketch: np.ndarray, max_n: int = 256) -> list[Keypoint]:
    """Harris corners of the blurred stroke mask with 8x8 distance-field descriptors."""
    if sketch.ndim != 2:
        raise ValueError("detect_keypoints expects a single-channel sketch")
    mask = stroke_mask(sketch)
    if not mask.any():
        return []
    soft = ndimage.gaussian_filter(mask.astype(np.float64), 1.0)
    resp = corner_harris(soft, method="k", k=0.05, sigma=1.0)
    if resp.max() <= 0:
        return []
    peaks = peak_local_max(resp, min_distance=NMS_RADIUS, threshold_abs=1e-12, exclude_border=False)
    if len(peaks) == 0:
        return []
    vals = resp[peaks[:, 0], peaks[:, 1]]
    order = np.lexsort((peaks[:, 1], peaks[:, 0], -vals))[:max_n]
    peaks, vals = peaks[order], vals[order]
    field = ndimage.gaussian_filter(ndimage.distance_transform_edt(~mask), 1.0)
    conf = vals / resp.max()
    return [Keypoint(float(x), float(y), float(c), _descriptor(field, y, x))
            for (y, x), c in zip(peaks, conf)]


def _descriptor(field: np.ndarray, y: int, x: int) -> np.ndarray:
    h, w = field.shape
    half = DESC_PATCH // 2
    ys = np.clip(np.arange(y - half, y + half), 0, h - 1)
    xs = np.clip(np.arange(x - half, x + half), 0, w - 1)
    d = field[np.ix_(ys, xs)].ravel()
    d = d - d.mean()
    n = np.linalg.norm(d)
    if n < 1e-12:
        d = np.zeros_like(d)
        d[0], n = 1.0, 1.0
    return d / n


def score_matrix(ka: Sequence[Keypoint], kb: Sequence[Keypoint], tau: float, sigma_xy: float) -> np.ndarray:
    da = np.stack([k.descriptor for k in ka])
    db = np.stack([k.descriptor for k in kb])
    pa = np.array([[k.x, k.y] for k in ka])
    pb = np.array([[k.x, k.y] for k in kb])
    dd = ((da[:, None, :] - db[None, :, :]) ** 2).sum(-1)
    dp = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
    return np.exp(-dd / tau) * np.exp(-dp / (2.0 * sigma_xy ** 2))


def match_confidence(s: np.ndarray) -> np.ndarray:
    """``s_ij * sqrt((s_ij / rowmax_i) * (s_ij / colmax_j))``.

    Equals the raw score for mutual best pairs and decays for pairs that
    lose to a competitor in either direction.
    """
    r = s.max(axis=1, keepdims=True)
    c = s.max(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = s * np.sqrt((s / r) * (s / c))
    return np.nan_to_num(out, nan=0.0)


def match_keypoints(
    ka: Sequence[Keypoint],
    kb: Sequence[Keypoint],
    theta: float = 0.5,
    tau: float = 0.5,
    sigma_xy: float | None = None,
    shape: tuple[int, int] | None = None,
) -> list[MatchPair]:
    """Mutual-nearest soft matching, kept one-to-one and above ``theta``.

    The spatial falloff ``sigma_xy`` defaults to a quarter of the larger
    side of ``shape``.
    """
    if not ka or not kb:
        return []
    if sigma_xy is None:
        if shape is None:
            raise ValueError("pass sigma_xy or the frame shape")
        sigma_xy = 0.25 * max(shape)
    conf = match_confidence(score_matrix(ka, kb, tau, sigma_xy))
    best_b = conf.argmax(axis=1)
    best_a = conf.argmax(axis=0)
    cand = [(i, int(j)) for i, j in enumerate(best_b) if best_a[j] == i and conf[i, j] > theta]
    cand.sort(key=lambda ij: (-conf[ij], ij[0], ij[1]))
    used_a, used_b, out = set(), set(), []
    for i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append(MatchPair(i, j, float(conf[i, j])))
    return sorted(out, key=lambda m: m.index_a)


def track_point(pa: Keypoint | Sequence[float], pb: Keypoint | Sequence[float], t: float) -> tuple[float, float]:
    """Linear position at time ``t``: frame 0's point at t=0, frame 1's at t=1."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    xa, ya = (pa.x, pa.y) if isinstance(pa, Keypoint) else pa
    xb, yb = (pb.x, pb.y) if isinstance(pb, Keypoint) else pb
    return ((1.0 - t) * xa + t * xb, (1.0 - t) * ya + t * yb)


def splat(raster: np.ndarray, x: float, y: float, amplitude: float, sigma: float = 1.0) -> None:
    """Max-composite a truncated (3 sigma) Gaussian onto ``raster`` in place."""
    h, w = raster.shape
    r = int(np.ceil(3 * sigma))
    cx, cy = int(round(x)), int(round(y))
    ys = np.arange(max(cy - r, 0), min(cy + r + 1, h))
    xs = np.arange(max(cx - r, 0), min(cx + r + 1, w))
    if len(ys) == 0 or len(xs) == 0:
        return
    d2 = (xs[None, :] - x) ** 2 + (ys[:, None] - y) ** 2
    g = amplitude * np.exp(-d2 / (2 * sigma ** 2))
    g[d2 > (3 * sigma) ** 2] = 0.0
    sub = raster[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1]
    np.maximum(sub, g, out=sub)


def rasterize_traces(
    matches: Sequence[MatchPair],
    ka: Sequence[Keypoint],
    kb: Sequence[Keypoint],
    timestamps: Sequence[float] = (0.5,),
    height: int = 0,
    width: int = 0,
) -> np.ndarray:
    """Stack of ``(T, H, W)`` trace rasters, one per timestamp."""
    if not timestamps:
        raise ValueError("at least one timestamp is required")
    for t in timestamps:
        if not 0.0 < t < 1.0:
            raise ValueError(f"trace timestamps must lie in (0, 1), got {t}")
    out = np.zeros((len(timestamps), height, width))
    for k, t in enumerate(timestamps):
        for m in matches:
            x, y = track_point(ka[m.index_a], kb[m.index_b], t)
            splat(out[k], x, y, min(max(m.confidence, 0.0), 1.0))
    return out


def match_overlay(
    path: str | os.PathLike,
    a: np.ndarray,
    b: np.ndarray,
    ka: Sequence[Keypoint],
    kb: Sequence[Keypoint],
    matches: Sequence[MatchPair],
) -> np.ndarray:
    """Write the two keyframes side by side with one line per match,
    coloured from blue (low confidence) to red (high)."""
    h, w = a.shape
    canvas = np.repeat(np.concatenate([a, b], axis=1)[..., None], 3, axis=2)
    for m in matches:
        pa, pb = ka[m.index_a], kb[m.index_b]
        rr, cc = line(int(round(pa.y)), int(round(pa.x)), int(round(pb.y)), int(round(pb.x)) + w)
        c = min(max(m.confidence, 0.0), 1.0)
        canvas[rr, cc] = (c, 0.0, 1.0 - c)
    save_raster(path, canvas)
    return canvas
