"""Guidance extraction and end-to-end interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import pixel_flow, region_corr, sketch_corr
from .config import GuidanceConfig, NetConfig
from .frames_io import save_raster
from .model import FCSIN


@dataclass
class GuidanceBundle:
    pixel0: np.ndarray
    pixel1: np.ndarray
    trace: np.ndarray
    region0: np.ndarray
    region1: np.ndarray
    # intermediate products, kept for dumps and debugging
    extras: dict = field(default_factory=dict, repr=False)

    def tensors(self, dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(pixel, trace, region) as unbatched (C, H, W) tensors."""
        pixel = torch.as_tensor(np.stack([self.pixel0, self.pixel1]), dtype=dtype)
        trace = torch.as_tensor(self.trace, dtype=dtype)
        region = torch.as_tensor(np.stack([self.region0, self.region1]), dtype=dtype)
        return pixel, trace, region


def extract_guidance(
    i0: np.ndarray,
    i1: np.ndarray,
    gcfg: GuidanceConfig = GuidanceConfig(),
    net: NetConfig = NetConfig(),
) -> GuidanceBundle:
    """Pixel-, sketch- and region-level guidance for two sketch keyframes.

    Guidance an ablated network never reads is skipped: disabled pixel or
    region refinement falls back to the unwarped keyframes and a disabled
    trace is an all-zero stack.
    """
    if i0.shape != i1.shape or i0.ndim != 2:
        raise ValueError(f"keyframes must be equal single-channel rasters, got {i0.shape} and {i1.shape}")
    h, w = i0.shape
    t = gcfg.t
    extras: dict = {}

    pixel0, pixel1 = i0, i1
    if net.use_pixel:
        f01 = pixel_flow.estimate_flow(i0, i1, gcfg.flow_levels, gcfg.flow_block, gcfg.flow_radius)
        f10 = pixel_flow.estimate_flow(i1, i0, gcfg.flow_levels, gcfg.flow_block, gcfg.flow_radius)
        o_t0, o_t1 = pixel_flow.split_time(f01, f10, t)
        pixel0, pixel1 = pixel_flow.warp(i0, o_t0), pixel_flow.warp(i1, o_t1)
        extras.update(flow_t0=o_t0, flow_t1=o_t1)

    depth = max(len(net.trace_times), 1)
    trace = np.zeros((depth, h, w))
    if net.use_sketch:
        k0 = sketch_corr.detect_keypoints(i0, gcfg.max_keypoints)
        k1 = sketch_corr.detect_keypoints(i1, gcfg.max_keypoints)
        matches = sketch_corr.match_keypoints(k0, k1, gcfg.match_theta, gcfg.match_tau, shape=(h, w))
        trace = sketch_corr.rasterize_traces(matches, k0, k1, net.trace_times, h, w)
        extras.update(keypoints0=k0, keypoints1=k1, matches=matches)

    region0, region1 = i0, i1
    if net.use_region:
        m0 = region_corr.trapped_ball_segment(i0, gcfg.ball_radii)
        m1 = region_corr.trapped_ball_segment(i1, gcfg.ball_radii)
        pairs = region_corr.match_regions(m0, m1, gcfg.region_accept)
        r_t0, r_t1 = region_corr.aggregate_region_flow(pairs, m0, m1, t)
        region0, region1 = region_corr.refine_keyframes_regional(i0, i1, r_t0, r_t1)
        extras.update(regions0=m0, regions1=m1, region_pairs=pairs, region_flow_t0=r_t0, region_flow_t1=r_t1)

    return GuidanceBundle(pixel0, pixel1, trace, region0, region1, extras)


def fcsin_forward(
    i0: np.ndarray,
    i1: np.ndarray,
    model: FCSIN,
    gcfg: GuidanceConfig = GuidanceConfig(),
) -> np.ndarray:
    """Interpolate the middle sketch between two keyframes."""
    g = extract_guidance(i0, i1, gcfg, model.cfg)
    return predict(model, [g])[0]


def predict(model: FCSIN, bundles: list[GuidanceBundle]) -> list[np.ndarray]:
    dtype = next(model.parameters()).dtype
    pixel, trace, region = (torch.stack(ts) for ts in zip(*(g.tensors(dtype) for g in bundles)))
    with torch.no_grad():
        out = model(pixel, trace, region)
    return [o[0].double().numpy() for o in out]


def dump_guidance(out_dir: str | Path, g: GuidanceBundle) -> list[Path]:
    """Write the five guidance maps as PNGs and the two pixel flows as FCSFLOW1 files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    images = {
        "pixel0": g.pixel0,
        "pixel1": g.pixel1,
        "trace": 1.0 - g.trace.max(axis=0),
        "region0": g.region0,
        "region1": g.region1,
    }
    for name, img in images.items():
        p = out_dir / f"guidance_{name}.png"
        save_raster(p, img)
        written.append(p)
    shape = g.pixel0.shape + (2,)
    for name in ("flow_t0", "flow_t1"):
        p = out_dir / f"{name}.flo"
        pixel_flow.write_flow(p, g.extras.get(name, np.zeros(shape)))
        written.append(p)
    return written
