"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or as part of pytest.
"""
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from conftest import TINY_NET, circle_sketch, grid_sketch, textured, tiny_config
from fcsin.cli import main as cli_main
from fcsin.config import ABLATIONS, Config
from fcsin.frames_io import build_dataset
from fcsin.metrics import chamfer_distance, interpolation_error, psnr, ssim
from fcsin.model import FCSIN, capture_attention, expected_parameter_count, parameter_count
from fcsin.pixel_flow import estimate_flow, warp
from fcsin.region_corr import assign, trapped_ball_segment
from fcsin.sketch_corr import Keypoint, MatchPair, rasterize_traces, track_point
from fcsin.synthetic import moving_shapes, write_shape_clips
from fcsin.training import GuidanceCache, load_checkpoint, make_batch, save_checkpoint, total_loss, train
from oracles import brute_force_assign, chamfer_brute, ssim_direct


@contextmanager
def criterion(capsys, number, name, budget=None):
    """Print ``[PASS|FAIL] AC<n> name (t s)`` whatever the outcome, then re-raise."""
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        elapsed = time.perf_counter() - t0
        if budget is not None:
            assert elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] AC{number:02d} {name} ({elapsed:.2f}s)")


def test_ac01_warp_identity(capsys):
    rng = np.random.default_rng(0)
    imgs = [rng.random((int(rng.integers(8, 64)), int(rng.integers(8, 64)))) for _ in range(100)]
    with criterion(capsys, 1, "warp with zero flow is bitwise identity on 100 rasters", budget=1.0):
        for img in imgs:
            assert np.array_equal(warp(img, np.zeros(img.shape + (2,))), img)


def test_ac02_flow_shift_recovery(capsys):
    rng = np.random.default_rng(1)
    with criterion(capsys, 2, "flow recovers integer shifts |s|<=3 within 0.5 px", budget=30.0):
        for seed in range(10):
            a = textured(100 + seed)
            sx, sy = (int(v) for v in rng.integers(-3, 4, size=2))
            b = np.roll(a, (sy, sx), axis=(0, 1))
            f = estimate_flow(a, b)[24:-24, 24:-24]
            assert abs(np.median(f[..., 0]) - sx) <= 0.5, (seed, sx, sy)
            assert abs(np.median(f[..., 1]) - sy) <= 0.5, (seed, sx, sy)


def test_ac03_attention_normalised(capsys):
    model = FCSIN(Config().net, seed=0)
    g = torch.Generator().manual_seed(0)
    inputs = (torch.rand(1, 2, 64, 64, generator=g), torch.rand(1, 1, 64, 64, generator=g),
              torch.rand(1, 2, 64, 64, generator=g))
    with criterion(capsys, 3, "every attention row sums to 1 within 1e-6 on a 64x64 forward"):
        with capture_attention() as weights, torch.no_grad():
            model(*inputs)
        assert len(weights) >= 2 * model.cfg.scales
        for w in weights:
            assert (w.sum(-1) - 1.0).abs().max().item() < 1e-6


def test_ac04_gradient_check(capsys):
    cfg = Config(net=TINY_NET)
    model = FCSIN(cfg.net, seed=0).double()
    t = moving_shapes(1, size=(16, 16), seed=3, max_step=1)[0]
    pixel, trace, region, target = make_batch([t], GuidanceCache(cfg), dtype=torch.float64)

    def loss_value():
        return total_loss(model(pixel, trace, region), target, cfg.loss)[0]

    names = [n for n, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    rng = np.random.default_rng(0)
    picks = []
    for _ in range(20):
        name = names[int(rng.integers(len(names)))]
        picks.append((name, int(rng.integers(params[name].numel()))))
    h = 1e-5
    with criterion(capsys, 4, "analytic gradient matches central differences, rel err < 1e-4", budget=60.0):
        model.zero_grad()
        loss = loss_value()
        loss.backward()
        # central differences cannot resolve below eps*|L|/h; errors under that count as agreement
        floor = np.finfo(np.float64).eps * abs(loss.item()) / h / 1e-4
        worst = 0.0
        for name, idx in picks:
            p = params[name]
            flat = p.data.view(-1)
            analytic = p.grad.view(-1)[idx].item()
            with torch.no_grad():
                orig = flat[idx].item()
                flat[idx] = orig + h
                up = loss_value().item()
                flat[idx] = orig - h
                down = loss_value().item()
                flat[idx] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))
        assert worst < 1e-4, f"worst relative error {worst:.3e}"


def test_ac05_overfit(capsys):
    cfg = tiny_config(epochs=300)
    data = moving_shapes(4)
    with criterion(capsys, 5, "300 steps on 4 triplets reduce L1 to <=10% of initial", budget=600.0):
        res = train(cfg, data)
        assert len(res.losses) == 300
        first, last = res.losses[0][1], res.losses[-1][1]
        assert last <= 0.1 * first, f"L1 {first:.4f} -> {last:.4f}"


def test_ac06_trapped_ball_topology(capsys):
    with criterion(capsys, 6, "trapped-ball region counts: circle 2, gap circle 2, grid k+1"):
        assert len(trapped_ball_segment(circle_sketch()).regions) == 2
        assert len(trapped_ball_segment(circle_sketch(gap=1), radii=(4, 3, 2)).regions) == 2
        for rows, cols in [(1, 1), (1, 3), (2, 2), (3, 2), (3, 3)]:
            assert len(trapped_ball_segment(grid_sketch(rows, cols)).regions) == rows * cols + 1


def test_ac07_hungarian_optimality(capsys):
    rng = np.random.default_rng(7)
    with criterion(capsys, 7, "assignment equals brute force on 200 cost matrices up to 6x6"):
        for k in range(200):
            n, m = (int(v) for v in rng.integers(1, 7, size=2))
            cost = rng.integers(0, 4, size=(n, m)).astype(float) if k % 2 else rng.random((n, m))
            pairs = assign(cost)
            best, ref = brute_force_assign(cost)
            assert pairs == ref
            assert sum(cost[i, j] for i, j in sorted(pairs)) == pytest.approx(best, abs=1e-12)


def test_ac08_tracking_law(capsys):
    a, b = (3.25, -1.5), (17.0, 40.125)
    ka, kb = Keypoint(*a, 1.0, np.zeros(8)), Keypoint(*b, 1.0, np.zeros(8))
    with criterion(capsys, 8, "track endpoints and midpoint exact; trace depth equals |timestamps|"):
        assert track_point(a, b, 0.0) == a
        assert track_point(a, b, 1.0) == b
        assert track_point(ka, kb, 0.5) == ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)
        for times in [(0.5,), (1 / 3, 2 / 3), (0.25, 0.5, 0.75)]:
            tr = rasterize_traces([MatchPair(0, 0, 1.0)], [ka], [kb], times, 48, 48)
            assert tr.shape == (len(times), 48, 48)
            cfg = Config().override(trace_times=",".join(map(str, times)))
            assert cfg.net.trace_depth == len(times)


def test_ac09_metric_oracles(capsys):
    rng = np.random.default_rng(9)
    with criterion(capsys, 9, "CD exact vs brute force, SSIM 1e-7, PSNR/IE closed forms 1e-9"):
        for _ in range(20):
            h, w = (int(v) for v in rng.integers(8, 65, size=2))
            a = np.where(rng.random((h, w)) < 0.05, 0.0, 1.0)
            b = np.where(rng.random((h, w)) < 0.05, 0.0, 1.0)
            assert chamfer_distance(a, b) == chamfer_brute(a, b)
        x, y = rng.random((32, 32)), rng.random((32, 32))
        assert abs(ssim(x, y) - ssim_direct(x, y)) < 1e-7
        base = np.full((16, 16), 0.4)
        assert abs(psnr(base, base + 0.1) - 20.0) < 1e-9
        assert abs(interpolation_error(base, base + 0.1) - 10.0) < 1e-9


def test_ac10_determinism(capsys, tmp_path):
    cfg = tiny_config(epochs=2, batch_size=2)
    data = moving_shapes(4)
    write_shape_clips(tmp_path / "frames", n_clips=1, n_frames=3)
    build_dataset(tmp_path / "frames", tmp_path / "ds")
    f = tmp_path / "ds" / "clip00" / "clip00_00000"
    with criterion(capsys, 10, "same seed same losses; checkpoint and PNG bytes reproducible"):
        a = train(cfg, data, out_dir=tmp_path / "a")
        b = train(cfg, data, out_dir=tmp_path / "b")
        assert a.losses == b.losses
        assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()
        ck = load_checkpoint(a.checkpoint)
        save_checkpoint(tmp_path / "again.ckpt", ck.model, ck.config, ck.state, ck.seed)
        assert (tmp_path / "again.ckpt").read_bytes() == a.checkpoint.read_bytes()
        outs = []
        for name in ("p.png", "q.png"):
            assert cli_main(["interpolate", str(a.checkpoint), str(f / "frame0.png"), str(f / "frame2.png"),
                             str(tmp_path / name)]) == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]


def test_ac11_ablation_plumbing(capsys):
    base = tiny_config(epochs=1)
    full = parameter_count(FCSIN(base.net))
    data = moving_shapes(4)
    with criterion(capsys, 11, "each ablation matches the count formula and trains one step"):
        for name in ABLATIONS:
            cfg = base.ablate(name)
            model = FCSIN(cfg.net)
            assert parameter_count(model) == expected_parameter_count(cfg.net) != full, name
            res = train(cfg, data, max_steps=1)
            assert res.state.step == 1 and res.state.faults == 0, name
            assert all(np.isfinite(v) for v in res.losses[0][1:]), name


def test_ac12_default_constants(capsys):
    with criterion(capsys, 12, "default config carries the fixed training constants"):
        text = Config().to_text()
        lines = set(text.splitlines())
        for expected in ("lambda_l1 = 70.0", "lambda_lpips = 30.0", "window = 8", "channels = 24", "scales = 3",
                         "batch_size = 4", "lr = 0.0002", "crop_width = 384", "crop_height = 192"):
            assert expected in lines, expected
        assert Config.from_text(text) == Config()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
