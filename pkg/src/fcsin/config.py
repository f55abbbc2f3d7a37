"""Run configuration: grouped dataclasses with a flat ``key = value`` text form."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, get_type_hints


@dataclass(frozen=True)
class NetConfig:
    channels: int = 24
    scales: int = 3
    window: int = 8
    heads: int = 2
    max_channels: int = 96
    trace_times: tuple[float, ...] = (0.5,)
    use_pixel: bool = True
    use_sketch: bool = True
    use_region: bool = True
    use_csb: bool = True
    use_ccb: bool = True

    @property
    def trace_depth(self) -> int:
        return len(self.trace_times) if self.use_sketch else 0

    def widths(self) -> list[int]:
        return [min(self.channels * 2 ** s, self.max_channels) for s in range(self.scales + 1)]

    def streams(self) -> list[str]:
        out = ["csb"] if self.use_csb else []
        if self.use_ccb and self.use_sketch:
            out += ["ccb0", "ccb1"]
        return out

    def validate(self) -> NetConfig:
        if not self.streams():
            raise ValueError("configuration enables no network stream")
        if not (self.use_pixel or self.use_region):
            raise ValueError("at least one of pixel or region guidance must stay enabled")
        for w in self.widths()[1:]:
            if w % self.heads:
                raise ValueError(f"width {w} is not divisible by {self.heads} heads")
        if self.use_sketch and not self.trace_times:
            raise ValueError("sketch guidance needs at least one trace timestamp")
        return self


@dataclass(frozen=True)
class GuidanceConfig:
    t: float = 0.5
    flow_levels: int = 3
    flow_block: int = 8
    flow_radius: int = 4
    max_keypoints: int = 256
    match_theta: float = 0.5
    match_tau: float = 0.5
    ball_radii: tuple[int, ...] = (4, 3, 2, 1)
    region_accept: float = 1.5


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 70.0
    lambda_lpips: float = 30.0
    featurizer_seed: int = 0


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    decay_mode: str = "param"  # "param": decoupled weight decay, "lr": exponential lr decay


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 50
    crop_width: int = 384
    crop_height: int = 192
    augment: bool = True
    seed: int = 0
    ckpt_every: int = 500
    dataset: str = ""
    out_dir: str = "runs/fcsin"
    threads: int = 1


ABLATIONS: dict[str, dict[str, Any]] = {
    "no-pixel": {"use_pixel": False},
    "no-sketch": {"use_sketch": False},
    "no-region": {"use_region": False},
    "no-ccb": {"use_ccb": False},
}

SECTIONS = ("net", "guidance", "loss", "optim", "train")


@dataclass(frozen=True)
class Config:
    net: NetConfig = field(default_factory=NetConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @staticmethod
    def schema() -> dict[str, tuple[str, type]]:
        """Flat key -> (section, python type) for every configurable field."""
        out = {}
        for sec in SECTIONS:
            cls = type(getattr(Config(), sec))
            hints = get_type_hints(cls)
            for f in fields(cls):
                out[f.name] = (sec, hints[f.name])
        return out

    def flat(self) -> dict[str, Any]:
        return {k: getattr(getattr(self, sec), k) for k, (sec, _) in self.schema().items()}

    def override(self, **values: Any) -> Config:
        schema = self.schema()
        grouped: dict[str, dict[str, Any]] = {}
        for k, v in values.items():
            if k not in schema:
                raise KeyError(f"unknown config key {k!r}")
            sec, typ = schema[k]
            grouped.setdefault(sec, {})[k] = parse_value(v, typ) if isinstance(v, str) else v
        return replace(self, **{sec: replace(getattr(self, sec), **kv) for sec, kv in grouped.items()})

    def ablate(self, *names: str) -> Config:
        values: dict[str, Any] = {}
        for n in names:
            if n not in ABLATIONS:
                raise KeyError(f"unknown ablation {n!r}; valid: {', '.join(ABLATIONS)}")
            values.update(ABLATIONS[n])
        return self.override(**values)

    def to_text(self) -> str:
        lines = []
        current = None
        for k, (sec, _) in self.schema().items():
            if sec != current:
                lines.append(f"# {sec}")
                current = sec
            lines.append(f"{k} = {format_value(getattr(getattr(self, sec), k))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Config:
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected key = value, got {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        return cls().override(**values)

    @classmethod
    def load(cls, path: str | os.PathLike) -> Config:
        return cls.from_text(Path(path).read_text())

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(s: str, typ: Any) -> Any:
    s = s.strip()
    if typ is bool:
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {s!r}")
    if typ is int:
        return int(s)
    if typ is float:
        return float(s)
    if typ is str:
        return s
    if typ == tuple[float, ...]:
        return tuple(_fraction(x) for x in s.split(",") if x.strip())
    if typ == tuple[int, ...]:
        return tuple(int(x) for x in s.split(",") if x.strip())
    raise TypeError(f"unsupported config type {typ}")


def _fraction(s: str) -> float:
    s = s.strip()
    if "/" in s:
        num, den = s.split("/")
        return float(num) / float(den)
    return float(s)
