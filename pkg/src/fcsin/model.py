"""The multi-stream U-Transformer.

Tensors are ``(B, C, H, W)``. The network sees guidance maps only: the two
pixel-refined keyframes, the trace stack and the two region-refined
keyframes. Which of these it consumes, and which streams exist, follows
the :class:`~fcsin.config.NetConfig` flags.
"""

from __future__ import annotations

import contextlib
import math
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn

from .config import NetConfig

_captured: list[torch.Tensor] | None = None


@contextlib.contextmanager
def capture_attention() -> Iterator[list[torch.Tensor]]:
    """Collect every attention weight matrix computed inside the block."""
    global _captured
    prev, _captured = _captured, []
    try:
        yield _captured
    finally:
        _captured = prev


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over the last two dimensions."""
    d = q.shape[-1]
    w = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
    if _captured is not None:
        _captured.append(w.detach())
    return w @ v


def pad_to_multiple(x: torch.Tensor, m: int) -> tuple[torch.Tensor, tuple[int, int]]:
    h, w = x.shape[-2:]
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


def window_partition(x: torch.Tensor, m: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Split into ``(B * K, m * m, C)`` windows, reflect-padding when needed.

    Returns the windows and the unpadded size to hand to :func:`window_reverse`.
    """
    x, size = pad_to_multiple(x, m)
    b, c, h, w = x.shape
    x = x.view(b, c, h // m, m, w // m, m).permute(0, 2, 4, 3, 5, 1)
    return x.reshape(b * (h // m) * (w // m), m * m, c), size


def window_reverse(windows: torch.Tensor, m: int, size: tuple[int, int], batch: int) -> torch.Tensor:
    h, w = size
    hp, wp = h + (-h) % m, w + (-w) % m
    c = windows.shape[-1]
    x = windows.view(batch, hp // m, wp // m, m, m, c).permute(0, 5, 1, 3, 2, 4)
    return x.reshape(batch, c, hp, wp)[..., :h, :w]


class WindowAttention(nn.Module):
    def __init__(self, dim: int, heads: int, window: int):
        super().__init__()
        self.heads, self.window = heads, window
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, y: torch.Tensor | None = None) -> torch.Tensor:
        y = x if y is None else y
        b = x.shape[0]
        xw, size = window_partition(x, self.window)
        yw, _ = window_partition(y, self.window)
        n, t, c = xw.shape
        hd = c // self.heads

        def heads(z: torch.Tensor) -> torch.Tensor:
            return z.view(n, t, self.heads, hd).transpose(1, 2)

        out = attention(heads(self.q(xw)), heads(self.k(yw)), heads(self.v(yw)))
        out = self.proj(out.transpose(1, 2).reshape(n, t, c))
        return window_reverse(out, self.window, size, b)


class CSB(nn.Module):
    """Strided conv, then windowed multi-head self-attention with a residual."""

    def __init__(self, cin: int, cout: int, heads: int, window: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.attn = WindowAttention(cout, heads, window)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.conv(x))
        return x + self.attn(x)


class CCB(nn.Module):
    """Like :class:`CSB`, but keys and values come from a second pyramid."""

    def __init__(self, cin: int, cout: int, heads: int, window: int):
        super().__init__()
        self.conv_x = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv_y = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.attn = WindowAttention(cout, heads, window)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape != y.shape:
            raise ValueError(f"query and key/value maps differ: {tuple(x.shape)} vs {tuple(y.shape)}")
        x = F.gelu(self.conv_x(x))
        y = F.gelu(self.conv_y(y))
        return x + self.attn(x, y), y


class Decoder(nn.Module):
    def __init__(self, widths: list[int]):
        super().__init__()
        s = len(widths) - 1
        self.ups = nn.ModuleList(nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2) for i in range(s))
        self.merges = nn.ModuleList(nn.Conv2d(2 * widths[i], widths[i], 3, padding=1) for i in range(s))

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        d = feats[-1]
        for i in reversed(range(len(self.ups))):
            d = F.gelu(self.ups[i](d))
            d = F.gelu(self.merges[i](torch.cat([d, feats[i]], dim=1)))
        return d


class CSBStream(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.widths()
        self.blocks = nn.ModuleList(CSB(w[s], w[s + 1], cfg.heads, cfg.window) for s in range(cfg.scales))
        self.decoder = Decoder(w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for blk in self.blocks:
            feats.append(blk(feats[-1]))
        return self.decoder(feats)


class CCBStream(nn.Module):
    def __init__(self, cfg: NetConfig, query_channels: int):
        super().__init__()
        w = cfg.widths()
        self.stem_x = nn.Conv2d(query_channels, w[0], 3, padding=1)
        self.stem_y = nn.Conv2d(cfg.trace_depth, w[0], 3, padding=1)
        self.blocks = nn.ModuleList(CCB(w[s], w[s + 1], cfg.heads, cfg.window) for s in range(cfg.scales))
        self.decoder = Decoder(w)

    def forward(self, query: torch.Tensor, trace: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.stem_x(query))
        y = F.gelu(self.stem_y(trace))
        feats = [x]
        for blk in self.blocks:
            x, y = blk(x, y)
            feats.append(x)
        return self.decoder(feats)


class CoarseFuse(nn.Module):
    def __init__(self, cin: int, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.gelu(self.conv2(F.gelu(self.conv1(x))))


class Fusion(nn.Module):
    def __init__(self, cin: int, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, maps: list[torch.Tensor]) -> torch.Tensor:
        return self.conv2(F.gelu(self.conv1(torch.cat(maps, dim=1))))


def coarse_channels(cfg: NetConfig) -> int:
    return 2 * cfg.use_pixel + cfg.trace_depth + 2 * cfg.use_region


def query_channels(cfg: NetConfig) -> int:
    return int(cfg.use_pixel) + int(cfg.use_region)


class FCSIN(nn.Module):
    def __init__(self, cfg: NetConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg.validate()
        streams = cfg.streams()
        if "csb" in streams:
            self.coarse = CoarseFuse(coarse_channels(cfg), cfg.channels)
            self.csb = CSBStream(cfg)
        if "ccb0" in streams:
            self.ccb0 = CCBStream(cfg, query_channels(cfg))
            self.ccb1 = CCBStream(cfg, query_channels(cfg))
        self.fusion = Fusion(len(streams) * cfg.channels, cfg.channels)
        init_parameters(self, seed)

    def stream_maps(self, pixel: torch.Tensor, trace: torch.Tensor, region: torch.Tensor) -> list[torch.Tensor]:
        """Synthetic feature maps of the enabled streams, CSB first."""
        cfg = self.cfg
        parts = []
        if cfg.use_pixel:
            parts.append(pixel)
        if cfg.use_sketch:
            parts.append(trace)
        if cfg.use_region:
            parts.append(region)
        maps = []
        if cfg.use_csb:
            maps.append(self.csb(self.coarse(torch.cat(parts, dim=1))))
        if "ccb0" in cfg.streams():
            for k, stream in ((0, self.ccb0), (1, self.ccb1)):
                q = [g[:, k:k + 1] for g, on in ((pixel, cfg.use_pixel), (region, cfg.use_region)) if on]
                maps.append(stream(torch.cat(q, dim=1), trace))
        return maps

    def forward(self, pixel: torch.Tensor, trace: torch.Tensor, region: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        """``pixel`` and ``region`` are (B, 2, H, W); ``trace`` is (B, T, H, W)."""
        if not (pixel.shape[-2:] == trace.shape[-2:] == region.shape[-2:]):
            raise ValueError("guidance maps differ in spatial size")
        if self.cfg.use_sketch and trace.shape[1] != self.cfg.trace_depth:
            raise ValueError(f"trace depth {trace.shape[1]} != configured {self.cfg.trace_depth}")
        m = 2 ** self.cfg.scales * self.cfg.window
        h, w = pixel.shape[-2:]
        pixel, _ = pad_to_multiple(pixel, m)
        trace, _ = pad_to_multiple(trace, m)
        region, _ = pad_to_multiple(region, m)
        out = self.fusion(self.stream_maps(pixel, trace, region))[..., :h, :w]
        return out.clamp(0.0, 1.0) if clamp else out


def _fan_in(mod: nn.Module) -> int:
    if isinstance(mod, nn.ConvTranspose2d):
        return mod.in_channels
    if isinstance(mod, nn.Conv2d):
        return mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
    return mod.in_features


def init_parameters(model: nn.Module, seed: int) -> None:
    """Fan-in scaled uniform weights, zero biases, reproducible from ``seed``."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, mod in sorted(model.named_modules(), key=lambda kv: kv[0]):
            if isinstance(mod, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                bound = math.sqrt(3.0 / _fan_in(mod))
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                mod.bias.zero_()


def conv_params(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def expected_parameter_count(cfg: NetConfig) -> int:
    """Closed-form parameter count of :class:`FCSIN` for a configuration."""
    w = cfg.widths()
    c = cfg.channels
    attn = [4 * (d * d + d) for d in w]
    decoder = sum(conv_params(w[s + 1], w[s], 2) + conv_params(2 * w[s], w[s], 3) for s in range(cfg.scales))
    total = 0
    streams = cfg.streams()
    if "csb" in streams:
        total += conv_params(coarse_channels(cfg), c, 3) + conv_params(c, c, 3)
        total += sum(conv_params(w[s], w[s + 1], 3) + attn[s + 1] for s in range(cfg.scales)) + decoder
    if "ccb0" in streams:
        one = conv_params(query_channels(cfg), c, 3) + conv_params(cfg.trace_depth, c, 3)
        one += sum(2 * conv_params(w[s], w[s + 1], 3) + attn[s + 1] for s in range(cfg.scales)) + decoder
        total += 2 * one
    total += conv_params(len(streams) * c, c, 3) + conv_params(c, 1, 3)
    return total


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
