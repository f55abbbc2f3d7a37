import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from conftest import TINY_NET
from fcsin.config import ABLATIONS, Config, NetConfig
from fcsin.model import (
    CCB,
    CSB,
    FCSIN,
    CoarseFuse,
    attention,
    capture_attention,
    coarse_channels,
    expected_parameter_count,
    parameter_count,
    window_partition,
    window_reverse,
)
from fcsin.pipeline import extract_guidance, fcsin_forward

torch.manual_seed(0)


def _zero_bias(mod):
    with torch.no_grad():
        for name, p in mod.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    return mod


def _inputs(h=32, w=32, depth=1, b=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (torch.rand(b, 2, h, w, generator=g), torch.rand(b, depth, h, w, generator=g),
            torch.rand(b, 2, h, w, generator=g))


@pytest.mark.parametrize("times, depth", [((0.5,), 5), ((0.25, 0.5, 0.75), 7)])
def test_coarse_fuse_depth(times, depth):
    cfg = NetConfig(trace_times=times)
    assert coarse_channels(cfg) == depth
    out = CoarseFuse(depth, cfg.channels)(torch.rand(1, depth, 16, 24))
    assert out.shape == (1, 24, 16, 24)


def test_coarse_fuse_zero_in_zero_out():
    m = _zero_bias(CoarseFuse(5, 24))
    assert not m(torch.zeros(1, 5, 16, 16)).any()


@pytest.mark.parametrize("size, m, k", [(16, 8, 4), (8, 8, 1), (12, 8, 4)])
def test_window_partition_counts_and_inverse(size, m, k):
    x = torch.rand(1, 6, size, size)
    w, shape = window_partition(x, m)
    assert w.shape == (k, m * m, 6)
    assert torch.equal(window_reverse(w, m, shape, 1), x)


@given(st.integers(1, 3), st.integers(4, 20), st.integers(4, 20), st.sampled_from([2, 4, 8]))
def test_window_partition_round_trip(b, h, w, m):
    x = torch.rand(b, 3, h, w, dtype=torch.float64)
    win, shape = window_partition(x, m)
    assert torch.equal(window_reverse(win, m, shape, b), x)


def test_attention_single_token():
    q, k, v = torch.rand(1, 1, 4), torch.rand(1, 1, 4), torch.rand(1, 1, 4)
    assert torch.allclose(attention(q, k, v), v)


def test_attention_identical_keys_average_values():
    q = torch.rand(1, 5, 4, dtype=torch.float64)
    k = torch.rand(1, 1, 4, dtype=torch.float64).expand(1, 5, 4)
    v = torch.rand(1, 5, 4, dtype=torch.float64)
    out = attention(q, k, v)
    assert torch.allclose(out, v.mean(dim=1, keepdim=True).expand_as(out), atol=1e-12)


def test_csb_shape_and_zero():
    blk = CSB(24, 48, 2, 8)
    assert blk(torch.rand(1, 24, 32, 64)).shape == (1, 48, 16, 32)
    _zero_bias(blk)
    assert not blk(torch.zeros(1, 24, 32, 64)).any()


def test_encoder_reaches_fine_scale():
    cfg = NetConfig()
    w = cfg.widths()
    x = torch.rand(1, w[0], 192, 384)
    with torch.no_grad():
        for s in range(cfg.scales):
            x = CSB(w[s], w[s + 1], cfg.heads, cfg.window)(x)
    assert x.shape[-2:] == (24, 48)


def test_ccb_with_equal_inputs_matches_csb():
    csb, ccb = CSB(8, 16, 2, 4), CCB(8, 16, 2, 4)
    with torch.no_grad():
        for name in ("weight", "bias"):
            getattr(ccb.conv_x, name).copy_(getattr(csb.conv, name))
            getattr(ccb.conv_y, name).copy_(getattr(csb.conv, name))
        ccb.attn.load_state_dict(csb.attn.state_dict())
    x = torch.rand(2, 8, 16, 16)
    assert torch.allclose(ccb(x, x)[0], csb(x), atol=1e-6)


def test_ccb_zero_keys_reduces_to_conv_path():
    ccb = _zero_bias(CCB(8, 16, 2, 4))
    x = torch.rand(1, 8, 16, 16)
    out, _ = ccb(x, torch.zeros_like(x))
    assert torch.allclose(out, torch.nn.functional.gelu(ccb.conv_x(x)))


def test_ccb_shape_mismatch():
    with pytest.raises(ValueError):
        CCB(8, 16, 2, 4)(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 8, 16))


@pytest.mark.parametrize("h, w", [(32, 32), (32, 64), (20, 28)])
def test_forward_shape_and_range(h, w):
    model = FCSIN(TINY_NET)
    out = model(*_inputs(h, w))
    assert out.shape == (1, 1, h, w)
    assert out.min() >= 0 and out.max() <= 1


def test_stream_maps_shapes_and_fusion_width():
    cfg = NetConfig(channels=24, scales=1, window=8)
    model = FCSIN(cfg)
    maps = model.stream_maps(*_inputs(16, 16))
    assert len(maps) == 3 and all(m.shape == (1, 24, 16, 16) for m in maps)
    assert model.fusion.conv1.in_channels == 72


def test_no_streams_is_config_error():
    with pytest.raises(ValueError):
        FCSIN(NetConfig(use_csb=False, use_ccb=False))


def test_ablation_no_ccb_fuses_csb_only():
    cfg = Config(net=TINY_NET).ablate("no-ccb").net
    model = FCSIN(cfg)
    assert cfg.streams() == ["csb"]
    assert model.fusion.conv1.in_channels == cfg.channels
    assert not hasattr(model, "ccb0")


def test_ablation_no_pixel_ignores_pixel_maps():
    model = FCSIN(Config(net=TINY_NET).ablate("no-pixel").net)
    pixel, trace, region = _inputs(16, 16)
    with torch.no_grad():
        a = model(pixel, trace, region)
        b = model(torch.rand_like(pixel), trace, region)
    assert torch.equal(a, b)


@pytest.mark.parametrize("names", [(), *[(n,) for n in ABLATIONS]])
def test_parameter_count_formula(names):
    cfg = Config(net=TINY_NET).ablate(*names).net
    assert parameter_count(FCSIN(cfg)) == expected_parameter_count(cfg)


@given(st.sampled_from([4, 8, 12]), st.integers(1, 3), st.sampled_from([2, 4]),
       st.integers(1, 3), st.booleans(), st.booleans())
def test_parameter_count_formula_property(channels, scales, window, depth, pixel, region):
    if not (pixel or region):
        region = True
    cfg = NetConfig(channels=channels, scales=scales, window=window, heads=2, max_channels=32,
                    trace_times=tuple(np.linspace(0.2, 0.8, depth)), use_pixel=pixel, use_region=region)
    assert parameter_count(FCSIN(cfg)) == expected_parameter_count(cfg)


def test_default_parameter_count_is_stable():
    assert expected_parameter_count(NetConfig()) == 1_784_233


def test_attention_rows_normalised():
    model = FCSIN(TINY_NET)
    with capture_attention() as ws, torch.no_grad():
        model(*_inputs(32, 32))
    assert ws
    for w in ws:
        assert torch.allclose(w.sum(-1), torch.ones(()), atol=1e-6)


def test_init_deterministic_per_seed():
    a, b, c = FCSIN(TINY_NET, seed=1), FCSIN(TINY_NET, seed=1), FCSIN(TINY_NET, seed=2)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)


def test_fcsin_forward_blank_and_deterministic():
    model = FCSIN(TINY_NET)
    blank = np.ones((32, 32))
    out = fcsin_forward(blank, blank, model)
    assert out.shape == (32, 32) and out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, fcsin_forward(blank, blank, model))


def test_zero_guidance_keeps_identity_maps():
    blank = np.ones((32, 32))
    g = extract_guidance(blank, blank, net=TINY_NET)
    assert np.array_equal(g.pixel0, blank) and np.array_equal(g.region1, blank)
    assert not g.trace.any()
