"""Dense motion between keyframes: block-matching flow, time split and warping.

Flow fields are ``(H, W, 2)`` float arrays of (dx, dy) displacements in
pixels, x to the right and y downward.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

FLOW_MAGIC = b"FCSFLOW1"


def _candidates(radius: int) -> np.ndarray:
    # search order doubles as the tie-break: shortest displacement, then (dy, dx)
    d = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    cand = np.stack([dy.ravel(), dx.ravel()], axis=1)
    order = np.lexsort((cand[:, 1], cand[:, 0], (cand ** 2).sum(1)))
    return cand[order]


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, 1.0, mode="nearest")[::2, ::2]


def _block_centers(n: int, block: int) -> np.ndarray:
    return (np.arange(-(-n // block)) + 0.5) * block - 0.5


def _densify(grid: np.ndarray, shape: tuple[int, int], block: int) -> np.ndarray:
    """Bilinearly spread a per-block (gy, gx, 2) field over a (H, W) frame."""
    h, w = shape
    gy = (np.arange(h) + 0.5) / block - 0.5
    gx = (np.arange(w) + 0.5) / block - 0.5
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    return np.stack(
        [ndimage.map_coordinates(grid[..., c], [yy, xx], order=1, mode="nearest") for c in range(2)],
        axis=-1,
    )


def _match_level(a: np.ndarray, b: np.ndarray, prior: np.ndarray, block: int, radius: int) -> np.ndarray:
    """One block-matching pass. ``prior`` is the integer per-block start (gy, gx, 2)."""
    h, w = a.shape
    gh, gw = prior.shape[:2]
    oy, ox = np.meshgrid(np.arange(block), np.arange(block), indexing="ij")
    py = np.clip(np.arange(gh)[:, None, None, None] * block + oy, 0, h - 1)  # (gh, 1, B, B)
    px = np.clip(np.arange(gw)[None, :, None, None] * block + ox, 0, w - 1)  # (1, gw, B, B)
    patch_a = a[py, px]
    base_x = px + prior[..., 0, None, None].astype(int)
    base_y = py + prior[..., 1, None, None].astype(int)
    cand = _candidates(radius)
    sad = np.empty((len(cand), gh, gw))
    for k, (dy, dx) in enumerate(cand):
        patch_b = b[np.clip(base_y + dy, 0, h - 1), np.clip(base_x + dx, 0, w - 1)]
        sad[k] = np.abs(patch_a - patch_b).sum(axis=(2, 3))
    best = cand[np.argmin(sad, axis=0)]  # first minimum wins
    return prior + best[..., ::-1]


def estimate_flow(a: np.ndarray, b: np.ndarray, levels: int = 3, block: int = 8, radius: int = 4) -> np.ndarray:
    """Coarse-to-fine block-matching flow from ``a`` to ``b``.

    At each pyramid level every ``block`` x ``block`` tile searches integer
    offsets within ``radius`` of the upsampled coarser estimate for the
    smallest sum of absolute differences. The finest per-block field is
    median filtered (3x3) and bilinearly spread to every pixel, so that
    ``a(x) ~ b(x + flow(x))``.
    """
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"estimate_flow needs two equal single-channel frames, got {a.shape} and {b.shape}")
    pyr = [(a.astype(np.float64), b.astype(np.float64))]
    for _ in range(levels - 1):
        pa, pb = pyr[-1]
        if min(pa.shape) < 2 * block:
            break
        pyr.append((_downsample(pa), _downsample(pb)))
    dense = None
    for pa, pb in reversed(pyr):
        h, w = pa.shape
        gy, gx = _block_centers(h, block), _block_centers(w, block)
        if dense is None:
            prior = np.zeros((len(gy), len(gx), 2))
        else:
            up = 2.0 * _zoom_to(dense, (h, w))
            prior = np.round(_sample_at_centers(up, gy, gx))
        grid = _match_level(pa, pb, prior, block, radius)
        dense = _densify(grid, (h, w), block)
    grid = np.stack([ndimage.median_filter(grid[..., c], size=3, mode="nearest") for c in range(2)], axis=-1)
    flow = _densify(grid, a.shape, block)
    lim = float(max(a.shape))
    return np.clip(flow, -lim, lim)


def _zoom_to(field: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = field.shape[:2]
    yy, xx = np.meshgrid((np.arange(shape[0]) + 0.5) * h / shape[0] - 0.5,
                         (np.arange(shape[1]) + 0.5) * w / shape[1] - 0.5, indexing="ij")
    return np.stack(
        [ndimage.map_coordinates(field[..., c], [yy, xx], order=1, mode="nearest") for c in range(2)], axis=-1
    )


def _sample_at_centers(field: np.ndarray, gy: np.ndarray, gx: np.ndarray) -> np.ndarray:
    h, w = field.shape[:2]
    iy = np.clip(np.round(gy).astype(int), 0, h - 1)
    ix = np.clip(np.round(gx).astype(int), 0, w - 1)
    return field[iy[:, None], ix[None, :]]


def split_time(flow01: np.ndarray, flow10: np.ndarray, t: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Flows from the intermediate time ``t`` back to frame 0 and on to frame 1,
    assuming linear motion."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    if flow01.shape != flow10.shape:
        raise ValueError("flow fields differ in shape")
    return -t * flow01, -(1.0 - t) * flow10


def warp(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward warp: ``out(x) = img(x + flow(x))`` with bilinear sampling and
    border clamping."""
    h, w = img.shape[:2]
    if flow.shape[:2] != (h, w):
        raise ValueError(f"flow {flow.shape[:2]} does not match image {(h, w)}")
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = np.clip(xx + flow[..., 0], 0.0, w - 1.0)
    sy = np.clip(yy + flow[..., 1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = sx - x0, sy - y0
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    out = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
           + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return np.clip(out, 0.0, 1.0)


def write_flow(path: str | os.PathLike, flow: np.ndarray) -> None:
    """``FCSFLOW1`` magic, int32 H and W, then the dx and dy planes as
    little-endian float32."""
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<ii", h, w))
        f.write(np.ascontiguousarray(flow[..., 0], dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(flow[..., 1], dtype="<f4").tobytes())


def read_flow(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != FLOW_MAGIC:
        raise ValueError(f"{path} is not an FCSFLOW1 file")
    h, w = struct.unpack("<ii", data[8:16])
    planes = np.frombuffer(data, dtype="<f4", offset=16)
    if planes.size != 2 * h * w:
        raise ValueError(f"{path}: truncated flow payload")
    return np.stack([planes[: h * w].reshape(h, w), planes[h * w:].reshape(h, w)], axis=-1).astype(np.float64)
