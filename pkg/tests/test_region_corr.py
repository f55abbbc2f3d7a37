import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from skimage.draw import polygon_perimeter

from conftest import circle_sketch, grid_sketch
from fcsin.region_corr import (
    aggregate_region_flow,
    assign,
    match_regions,
    refine_keyframes_regional,
    region_descriptor,
    region_overlay,
    trapped_ball_segment,
)
from oracles import brute_force_assign, hausdorff


def _square(size=48, x0=12, y0=14, side=16):
    img = np.ones((size, size))
    rr, cc = polygon_perimeter([y0, y0, y0 + side, y0 + side], [x0, x0 + side, x0 + side, x0], shape=img.shape)
    img[rr, cc] = 0.0
    return img


def _boxes(seed, size=40):
    rng = np.random.default_rng(seed)
    img = np.ones((size, size))
    for _ in range(3):
        y, x = rng.integers(0, size - 8, size=2)
        h, w = rng.integers(5, 14, size=2)
        rr, cc = polygon_perimeter([y, y, y + h, y + h], [x, x + w, x + w, x], shape=img.shape)
        img[rr, cc] = 0.0
    return img


def test_white_frame_single_region():
    m = trapped_ball_segment(np.ones((32, 32)))
    assert len(m.regions) == 1 and m.regions[0].area == 32 * 32


def test_all_stroke_no_regions():
    assert trapped_ball_segment(np.zeros((20, 20))).regions == []


def test_circle_and_gap_circle():
    assert len(trapped_ball_segment(circle_sketch()).regions) == 2
    assert len(trapped_ball_segment(circle_sketch(gap=1), radii=(4, 3, 2)).regions) == 2


@pytest.mark.parametrize("rows, cols", [(1, 1), (2, 3), (3, 3)])
def test_grid_regions(rows, cols):
    assert len(trapped_ball_segment(grid_sketch(rows, cols)).regions) == rows * cols + 1


def test_radii_must_descend():
    with pytest.raises(ValueError):
        trapped_ball_segment(np.ones((16, 16)), radii=(1, 2))


@given(st.integers(0, 10_000))
def test_labels_partition_free_space(seed):
    img = _boxes(seed)
    m = trapped_ball_segment(img)
    free = img >= 0.5
    assert ((m.labels > 0) == free).all()
    assert sum(r.area for r in m.regions) == free.sum()
    assert sorted(m.ids()) == sorted(set(np.unique(m.labels)) - {0})
    again = trapped_ball_segment(img)
    assert np.array_equal(again.labels, m.labels)


@given(st.integers(0, 10_000))
def test_region_count_mirror_invariant(seed):
    img = _boxes(seed)
    assert len(trapped_ball_segment(img).regions) == len(trapped_ball_segment(img[:, ::-1]).regions)


def test_full_frame_descriptor():
    m = trapped_ball_segment(np.ones((32, 32)))
    d = region_descriptor(m, 1)
    assert d.shape == (12,) and np.isfinite(d).all()
    assert d[0] == 1.0
    assert d[1] == pytest.approx(0.5, abs=0.02) and d[2] == pytest.approx(0.5, abs=0.02)


def test_descriptor_missing_id():
    with pytest.raises(KeyError):
        region_descriptor(trapped_ball_segment(np.ones((16, 16))), 7)


def _inner(m):
    # largest region not touching the frame border
    border = set(np.unique(np.concatenate([m.labels[0], m.labels[-1], m.labels[:, 0], m.labels[:, -1]])))
    return max((r for r in m.regions if r.id not in border), key=lambda r: (r.area, -r.id))


def test_hu_translation_invariant():
    a = trapped_ball_segment(_square(x0=8, y0=10))
    b = trapped_ball_segment(_square(x0=20, y0=18))
    da, db = region_descriptor(a, _inner(a).id), region_descriptor(b, _inner(b).id)
    assert np.allclose(da[3:10], db[3:10], atol=1e-6, rtol=0)


def test_mirrored_region_area_and_eccentricity():
    img = np.ones((40, 40))
    rr, cc = polygon_perimeter([8, 8, 30], [6, 26, 6], shape=img.shape)
    img[rr, cc] = 0.0
    a, b = trapped_ball_segment(img), trapped_ball_segment(img[:, ::-1])
    da, db = region_descriptor(a, _inner(a).id), region_descriptor(b, _inner(b).id)
    assert da[0] == db[0]
    assert da[11] == pytest.approx(db[11], abs=1e-12)


def test_assign_small_example():
    assert assign(np.array([[1.0, 10.0], [10.0, 1.0]])) == [(0, 0), (1, 1)]


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 5), st.booleans())
def test_assign_matches_brute_force(seed, n, m, ints):
    rng = np.random.default_rng(seed)
    cost = rng.integers(0, 3, size=(n, m)).astype(float) if ints else rng.random((n, m))
    pairs = assign(cost)
    best, ref = brute_force_assign(cost)
    assert len(pairs) == min(n, m)
    assert sum(cost[i, j] for i, j in pairs) == pytest.approx(best, abs=1e-12)
    assert pairs == ref


def test_match_identical_maps():
    m = trapped_ball_segment(_boxes(3))
    pairs = match_regions(m, m)
    assert [(p.id_a, p.id_b) for p in pairs] == [(r.id, r.id) for r in m.regions]
    assert all(p.cost == 0.0 for p in pairs)


def test_match_empty():
    assert match_regions(trapped_ball_segment(np.zeros((16, 16))), trapped_ball_segment(np.ones((16, 16)))) == []


def test_aggregate_zero_pairs_and_stationary():
    m = trapped_ball_segment(_square())
    for f in aggregate_region_flow([], m, m, 0.5):
        assert not f.any()
    for f in aggregate_region_flow(match_regions(m, m), m, m, 0.5):
        assert not f.any()


def test_aggregate_translation_example():
    ma, mb = trapped_ball_segment(_square(x0=12)), trapped_ball_segment(_square(x0=18))
    pairs = [p for p in match_regions(ma, mb) if p.id_a == _inner(ma).id]
    assert pairs and pairs[0].id_b == _inner(mb).id
    f0, f1 = aggregate_region_flow(pairs, ma, mb, 0.5)
    inside = _inner(ma).centroid
    cy, cx = int(round(inside[1])), int(round(inside[0])) + 3
    assert np.allclose(f1[cy, cx], (3.0, 0.0)) and np.allclose(f0[cy, cx], (-3.0, 0.0))


@given(st.floats(0.05, 0.95))
def test_aggregate_linear_in_t(t):
    ma, mb = trapped_ball_segment(_square(x0=10)), trapped_ball_segment(_square(x0=19, y0=17))
    f0, f1 = aggregate_region_flow(match_regions(ma, mb, accept=10.0), ma, mb, t)
    assert np.allclose(f0, -(t / (1 - t)) * f1, atol=1e-12)


def test_aggregate_rejects_bad_t():
    m = trapped_ball_segment(_square())
    with pytest.raises(ValueError):
        aggregate_region_flow([], m, m, 1.0)


def test_refine_zero_and_blank():
    i0, i1 = _square(x0=8), _square(x0=14)
    z = np.zeros((48, 48, 2))
    r0, r1 = refine_keyframes_regional(i0, i1, z, z)
    assert np.array_equal(r0, i0) and np.array_equal(r1, i1)
    blank = np.ones((48, 48))
    b0, b1 = refine_keyframes_regional(blank, blank, np.full((48, 48, 2), 2.5), z)
    assert (b0 == 1.0).all() and (b1 == 1.0).all()


def test_refine_moves_strokes_to_midpoint():
    i0, i1 = _square(x0=12), _square(x0=18)
    ma, mb = trapped_ball_segment(i0), trapped_ball_segment(i1)
    pairs = [p for p in match_regions(ma, mb) if p.id_a == _inner(ma).id]
    f0, f1 = aggregate_region_flow(pairs, ma, mb, 0.5)
    r0, _ = refine_keyframes_regional(i0, i1, f0, f1)
    target = _square(x0=15) < 0.5
    # compare inside the target footprint; the vacated outline outside it is a disocclusion
    ys, xs = np.nonzero(target)
    win = np.s_[ys.min() - 1:ys.max() + 2, xs.min() - 1:xs.max() + 2]
    got = np.zeros_like(target)
    got[win] = (r0 < 0.5)[win]
    assert hausdorff(got, target) <= 1.0


def test_region_overlay(tmp_path):
    m = trapped_ball_segment(circle_sketch())
    img = region_overlay(tmp_path / "r.png", m, seed=1)
    assert img.shape == (48, 48, 3) and (tmp_path / "r.png").is_file()
    assert (img[m.strokes] == 0).all()
