"""Enclosed-region segmentation, region matching and region-level flows."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from skimage.measure import moments_central, moments_hu, moments_normalized
from skimage.morphology import disk

from .frames_io import save_raster
from .pixel_flow import warp

DESC_DIM = 12
# area, centroid x, centroid y, 7 Hu moments, boundary stroke density, eccentricity
DESC_WEIGHTS = np.array([2.0, 1.0, 1.0] + [0.5] * 7 + [1.0, 1.0])
FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class Region:
    id: int
    area: int
    centroid: tuple[float, float]
    descriptor: np.ndarray


@dataclass
class RegionMap:
    labels: np.ndarray
    strokes: np.ndarray
    regions: list[Region] = field(default_factory=list)

    def ids(self) -> list[int]:
        return [r.id for r in self.regions]

    def region(self, rid: int) -> Region:
        for r in self.regions:
            if r.id == rid:
                return r
        raise KeyError(f"no region with id {rid}")


@dataclass(frozen=True)
class RegionPair:
    id_a: int
    id_b: int
    cost: float


def trapped_ball_segment(sketch: np.ndarray, radii: Sequence[int] = (4, 3, 2, 1)) -> RegionMap:
    """Label the enclosed areas of a dark-on-white sketch.

    For each ball radius, largest first, free space where the ball fits is
    flooded per connected component and grown back by the ball, never
    crossing strokes or earlier regions. Pixels no ball reached join the
    geodesically nearest region. Label 0 marks strokes.
    """
    radii = list(radii)
    if any(r <= 0 for r in radii) or any(a <= b for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii must be positive and strictly descending, got {radii}")
    strokes = sketch < 0.5
    labels = np.zeros(sketch.shape, dtype=np.int32)
    next_id = 1
    for r in radii:
        ball = disk(r)
        free = ~strokes & (labels == 0)
        fits = ndimage.binary_erosion(free, structure=ball, border_value=1)
        comps, n = ndimage.label(fits, structure=FOUR)
        if n == 0:
            continue
        for sl, k in zip(ndimage.find_objects(comps), range(1, n + 1)):
            y0, y1 = max(sl[0].start - r, 0), min(sl[0].stop + r, labels.shape[0])
            x0, x1 = max(sl[1].start - r, 0), min(sl[1].stop + r, labels.shape[1])
            seed = comps[y0:y1, x0:x1] == k
            grown = ndimage.binary_dilation(seed, structure=ball) & free[y0:y1, x0:x1]
            grown &= labels[y0:y1, x0:x1] == 0
            labels[y0:y1, x0:x1][grown] = next_id
            next_id += 1
    labels = _absorb_leftovers(labels, strokes)
    labels = _relabel(labels)
    out = RegionMap(labels=labels, strokes=strokes)
    out.regions = [_make_region(out, rid) for rid in range(1, labels.max() + 1)]
    return out


def _absorb_leftovers(labels: np.ndarray, strokes: np.ndarray) -> np.ndarray:
    labels = labels.copy()
    free = ~strokes
    while True:
        todo = free & (labels == 0)
        if not todo.any():
            return labels
        # smallest neighbouring label wins so growth is order independent
        big = np.where(labels > 0, labels, np.iinfo(np.int32).max)
        nb = ndimage.grey_erosion(big, footprint=FOUR, mode="constant", cval=np.iinfo(np.int32).max)
        grow = todo & (nb < np.iinfo(np.int32).max)
        if not grow.any():
            # pockets no ball and no neighbour reaches become regions of their own
            comps, n = ndimage.label(todo, structure=FOUR)
            labels[todo] = comps[todo] + labels.max()
            return labels
        labels[grow] = nb[grow]


def _relabel(labels: np.ndarray) -> np.ndarray:
    # ids in raster order of each region's first pixel
    flat = labels.ravel()
    seen = flat[flat > 0]
    _, first = np.unique(seen, return_index=True)
    order = np.unique(seen)[np.argsort(first)]
    lut = np.zeros(labels.max() + 1, dtype=np.int32)
    lut[order] = np.arange(1, len(order) + 1)
    return lut[labels]


def _make_region(rmap: RegionMap, rid: int) -> Region:
    mask = rmap.labels == rid
    ys, xs = np.nonzero(mask)
    return Region(rid, int(mask.sum()), (float(xs.mean()), float(ys.mean())), region_descriptor(rmap, rid))


def hu_features(mask: np.ndarray) -> np.ndarray:
    """Seven log-scaled Hu invariants of a binary mask."""
    mu = moments_central(mask.astype(np.float64), order=3)
    hu = moments_hu(moments_normalized(mu, order=3))
    mag = np.maximum(np.abs(hu), 1e-12)
    return -np.sign(hu) * np.log10(mag)


def region_descriptor(rmap: RegionMap, rid: int) -> np.ndarray:
    """12-d geometric descriptor of one region."""
    mask = rmap.labels == rid
    if rid <= 0 or not mask.any():
        raise KeyError(f"no region with id {rid}")
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    area = mask.sum()
    cx, cy = xs.mean(), ys.mean()
    interior = ndimage.binary_erosion(mask, structure=FOUR, border_value=1)
    boundary = mask & ~interior
    near_stroke = ndimage.binary_dilation(rmap.strokes, structure=FOUR)
    density = (boundary & near_stroke).sum() / max(boundary.sum(), 1)
    dx, dy = xs - cx, ys - cy
    cov = np.array([[np.mean(dx * dx), np.mean(dx * dy)], [np.mean(dx * dy), np.mean(dy * dy)]])
    lo, hi = np.linalg.eigvalsh(cov)
    ecc = np.sqrt(max(0.0, 1.0 - lo / hi)) if hi > 1e-12 else 0.0
    return np.concatenate([[area / (h * w), cx / w, cy / h], hu_features(mask), [density, ecc]])


def region_cost(da: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Weighted L2 distance between every pair of descriptor rows."""
    diff = da[:, None, :] - db[None, :, :]
    return np.sqrt((DESC_WEIGHTS * diff ** 2).sum(-1))


def assign(cost: np.ndarray, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment, lexicographically smallest among optima."""
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if n > m:
        return sorted((i, j) for j, i in assign(cost.T, tol))
    rows, cols = linear_sum_assignment(cost)
    best = cost[rows, cols].sum()
    scale = tol * max(1.0, abs(best))
    fixed: list[tuple[int, int]] = []
    free_rows, free_cols = list(range(n)), list(range(m))
    for i in range(n):
        free_rows.remove(i)
        base = sum(cost[a, b] for a, b in fixed)
        for j in list(free_cols):
            rest_cols = [c for c in free_cols if c != j]
            sub = cost[np.ix_(free_rows, rest_cols)]
            if sub.size:
                r, c = linear_sum_assignment(sub)
                total = base + cost[i, j] + sub[r, c].sum()
            else:
                total = base + cost[i, j]
            if total <= best + scale:
                fixed.append((i, j))
                free_cols.remove(j)
                break
    return fixed


def match_regions(ma: RegionMap, mb: RegionMap, accept: float = 1.5) -> list[RegionPair]:
    """Hungarian matching of region descriptors; pairs costing more than ``accept`` are dropped."""
    if not ma.regions or not mb.regions:
        return []
    da = np.stack([r.descriptor for r in ma.regions])
    db = np.stack([r.descriptor for r in mb.regions])
    cost = region_cost(da, db)
    out = []
    for i, j in assign(cost):
        if cost[i, j] <= accept:
            out.append(RegionPair(ma.regions[i].id, mb.regions[j].id, float(cost[i, j])))
    return out


def _shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys, xs = np.nonzero(mask)
    ys, xs = ys + dy, xs + dx
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    out[ys[keep], xs[keep]] = True
    return out


def claimed_masks(rmap: RegionMap, reach: int = 2) -> dict[int, np.ndarray]:
    """Region masks extended over the strokes that outline them.

    Each stroke pixel within ``reach`` steps of a region is handed to the
    smallest such region, so an outline travels with the area it encloses.
    """
    owner = rmap.labels.copy()
    for r in sorted(rmap.regions, key=lambda r: (r.area, r.id)):
        grown = ndimage.binary_dilation(rmap.labels == r.id, structure=FOUR, iterations=reach,
                                        mask=rmap.strokes | (rmap.labels == r.id))
        owner[grown & (owner == 0)] = r.id
    return {r.id: owner == r.id for r in rmap.regions}


def aggregate_region_flow(
    pairs: Sequence[RegionPair],
    ma: RegionMap,
    mb: RegionMap,
    t: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-constant flows from time ``t`` to frame 0 and to frame 1.

    A pair whose centroid moves by ``v`` contributes ``-t * v`` (to frame 0)
    and ``(1 - t) * v`` (to frame 1) over the region's footprint at time
    ``t``: frame 0's mask, outline included, shifted by ``round(t * v)``.
    Larger regions are painted first so enclosed ones win overlaps.
    Unmatched pixels keep zero flow.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    h, w = ma.labels.shape
    f0 = np.zeros((h, w, 2))
    f1 = np.zeros((h, w, 2))
    masks = claimed_masks(ma)
    order = sorted(pairs, key=lambda p: (-ma.region(p.id_a).area, p.id_a))
    for p in order:
        ca, cb = np.array(ma.region(p.id_a).centroid), np.array(mb.region(p.id_b).centroid)
        v = cb - ca
        dx, dy = np.round(t * v).astype(int)
        at_t = _shift_mask(masks[p.id_a], dx, dy)
        f0[at_t] = -t * v
        f1[at_t] = (1.0 - t) * v
    return f0, f1


def refine_keyframes_regional(
    i0: np.ndarray, i1: np.ndarray, f_t0: np.ndarray, f_t1: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Warp each keyframe toward time t along its own region flow."""
    if i0.shape != i1.shape or f_t0.shape[:2] != i0.shape[:2] or f_t1.shape[:2] != i0.shape[:2]:
        raise ValueError("keyframes and flows must share spatial dimensions")
    return warp(i0, f_t0), warp(i1, f_t1)


def region_overlay(path: str | os.PathLike, rmap: RegionMap, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    palette = np.vstack([np.zeros((1, 3)), rng.uniform(0.3, 1.0, size=(rmap.labels.max(), 3))])
    img = palette[rmap.labels]
    save_raster(path, img)
    return img
