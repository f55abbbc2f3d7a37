"""Losses, the AdaMax optimiser, checkpoints and the training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import Config, LossWeights, OptimConfig
from .frames_io import DatasetIndex, Triplet, augment
from .model import FCSIN
from .pipeline import GuidanceBundle, extract_guidance

log = logging.getLogger(__name__)

CKPT_MAGIC = b"FCSIN-CKPT-1\n"


def loss_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


class RandomFeaturePerceptual(nn.Module):
    """Perceptual distance on a frozen, seeded three-stage conv stack.

    Each stage is a stride-2 3x3 conv followed by GELU; features are scaled
    to unit length across channels before comparison, as LPIPS does.
    """

    def __init__(self, seed: int = 0, widths: Sequence[int] = (8, 16, 32)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [1, *widths]
        self.convs = nn.ModuleList()
        for cin, cout in zip(chans, chans[1:]):
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen, dtype=torch.float64) / math.sqrt(cin * 9))
                conv.bias.copy_(0.1 * torch.randn(cout, generator=gen, dtype=torch.float64))
            self.convs.append(conv)
        self.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        for conv in self.convs:
            x = F.gelu(conv(x))
            out.append(x / torch.sqrt((x * x).sum(dim=1, keepdim=True) + 1e-10))
        return out

    def forward(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        if pred.shape != target.shape:
            raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
        self.to(pred.dtype)
        fa, fb = self.features(pred), self.features(target)
        return torch.stack([((a - b) ** 2).mean() for a, b in zip(fa, fb)]).mean()


_featurizers: dict[int, RandomFeaturePerceptual] = {}


def loss_perceptual(pred: torch.Tensor, target: torch.Tensor, featurizer_seed: int = 0) -> torch.Tensor:
    if featurizer_seed not in _featurizers:
        _featurizers[featurizer_seed] = RandomFeaturePerceptual(featurizer_seed)
    return _featurizers[featurizer_seed](pred, target)


def total_loss(
    pred: torch.Tensor, target: torch.Tensor, w: LossWeights = LossWeights()
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Weighted sum of the L1 and perceptual terms; returns (total, l1, perceptual)."""
    l1 = loss_l1(pred, target)
    lp = loss_perceptual(pred, target, w.featurizer_seed)
    return w.lambda_l1 * l1 + w.lambda_lpips * lp, l1, lp


@dataclass
class OptimState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    u: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0
    faults: int = 0


def adamax_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: OptimState,
    cfg: OptimConfig = OptimConfig(),
) -> bool:
    """One AdaMax update in place. Returns False (and counts a fault) when a
    gradient is not finite, leaving parameters and state untouched."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {tuple(g.shape)}, parameter {tuple(params[name].shape)}")
        if not torch.isfinite(g).all():
            state.faults += 1
            return False
    state.step += 1
    t = state.step
    lr = cfg.lr * math.exp(-cfg.weight_decay * (t - 1)) if cfg.decay_mode == "lr" else cfg.lr
    step_size = lr / (1.0 - cfg.beta1 ** t)
    with torch.no_grad():
        for name, g in grads.items():
            p = params[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.u[name] = torch.zeros_like(p)
            m, u = state.m[name], state.u[name]
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            torch.maximum(u * cfg.beta2, g.abs(), out=u)
            if cfg.decay_mode == "param":
                p.mul_(1.0 - cfg.lr * cfg.weight_decay)
            p.sub_(step_size * m / (u + cfg.eps))
    return True


# checkpoints: magic, u64 header length, JSON header, then raw little-endian tensors


def save_checkpoint(
    path: str | os.PathLike, model: nn.Module, cfg: Config, state: OptimState | None = None, seed: int = 0
) -> Path:
    state = state or OptimState()
    named = {f"model.{k}": v for k, v in model.state_dict().items()}
    for k in sorted(state.m):
        named[f"optim.m.{k}"] = state.m[k]
        named[f"optim.u.{k}"] = state.u[k]
    entries, blobs, offset = [], [], 0
    for name in sorted(named):
        arr = named[name].detach().cpu().numpy()
        dt = arr.dtype.newbyteorder("<")
        data = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"config": cfg.to_text(), "seed": seed, "step": state.step, "faults": state.faults, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)
    return path


@dataclass
class Checkpoint:
    model: FCSIN
    config: Config
    state: OptimState
    seed: int


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if not data.startswith(CKPT_MAGIC):
        raise ValueError(f"{path} is not an FCSIN-CKPT-1 checkpoint")
    pos = len(CKPT_MAGIC)
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    header = json.loads(data[pos + 8:pos + 8 + hlen])
    body = pos + 8 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = body + e["offset"]
        arr = np.frombuffer(data[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    cfg = Config.from_text(header["config"])
    model = FCSIN(cfg.net, seed=header["seed"])
    model_state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    model.to(next(iter(model_state.values())).dtype)
    model.load_state_dict(model_state)
    state = OptimState(step=header["step"], faults=header["faults"])
    for k, v in tensors.items():
        if k.startswith("optim.m."):
            state.m[k[len("optim.m."):]] = v
        elif k.startswith("optim.u."):
            state.u[k[len("optim.u."):]] = v
    return Checkpoint(model, cfg, state, header["seed"])


class TrainingDiverged(RuntimeError):
    pass


class GuidanceCache:
    """Memoises guidance per keyframe pair; extraction is deterministic."""

    def __init__(self, cfg: Config, max_items: int = 4096):
        self.cfg = cfg
        self.max_items = max_items
        self.store: dict[str, GuidanceBundle] = {}

    def __call__(self, i0: np.ndarray, i1: np.ndarray) -> GuidanceBundle:
        key = hashlib.sha1(i0.tobytes() + i1.tobytes() + str(i0.shape).encode()).hexdigest()
        if key not in self.store:
            if len(self.store) >= self.max_items:
                self.store.pop(next(iter(self.store)))
            self.store[key] = extract_guidance(i0, i1, self.cfg.guidance, self.cfg.net)
        return self.store[key]


def sample_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


@dataclass
class TrainResult:
    model: FCSIN
    state: OptimState
    losses: list[tuple[int, float, float, float]]
    checkpoint: Path | None


def _triplets(data: DatasetIndex | Sequence[Triplet]) -> list[Triplet]:
    if isinstance(data, DatasetIndex):
        return [data.load(i) for i in range(len(data))]
    return list(data)


def make_batch(
    triplets: Sequence[Triplet], cache: GuidanceCache, dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    gs = [cache(t.frame0, t.frame1).tensors(dtype) for t in triplets]
    pixel, trace, region = (torch.stack(x) for x in zip(*gs))
    target = torch.stack([torch.as_tensor(t.frame_mid, dtype=dtype)[None] for t in triplets])
    return pixel, trace, region, target


def train(
    cfg: Config,
    dataset: DatasetIndex | Sequence[Triplet],
    epochs: int | None = None,
    seed: int | None = None,
    out_dir: str | os.PathLike | None = None,
    resume: str | os.PathLike | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Train from scratch or resume; returns the model, optimiser state and loss log.

    Sample order and augmentation are derived from ``(seed, epoch, index)``
    alone, so a resumed run replays exactly what an uninterrupted one would.
    With ``out_dir`` set, checkpoints go to ``out_dir/last.ckpt`` every
    ``ckpt_every`` steps and at the end, and losses to ``out_dir/losses.csv``.
    """
    tc = cfg.train
    epochs = tc.epochs if epochs is None else epochs
    seed = tc.seed if seed is None else seed
    triplets = _triplets(dataset)
    if not triplets:
        raise ValueError("training set is empty")
    torch.set_num_threads(max(1, tc.threads))
    if resume is not None:
        ck = load_checkpoint(resume)
        model, state = ck.model, ck.state
    else:
        model, state = FCSIN(cfg.net, seed=seed), OptimState()
    params = dict(model.named_parameters())
    cache = GuidanceCache(cfg)
    n = len(triplets)
    per_epoch = math.ceil(n / tc.batch_size)
    total_steps = epochs * per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = None
    csv_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path = out / "last.ckpt"
        new = resume is None or not (out / "losses.csv").exists()
        csv_file = open(out / "losses.csv", "w" if new else "a", newline="")
        writer = csv.writer(csv_file)
        if new:
            writer.writerow(["step", "l1", "lpips", "total"])
        if resume is None:
            save_checkpoint(ckpt_path, model, cfg, state, seed)
    losses = []
    model.train()
    try:
        # rejected updates still consume their batch, so position = updates + faults
        while state.step + state.faults < total_steps:
            step = state.step + state.faults
            epoch, b = divmod(step, per_epoch)
            order = epoch_order(seed, epoch, n)[b * tc.batch_size:(b + 1) * tc.batch_size]
            batch = []
            for i in order:
                t = triplets[i]
                if tc.augment:
                    t = augment(t, sample_seed(seed, epoch, int(i)), (tc.crop_width, tc.crop_height))
                batch.append(t)
            pixel, trace, region, target = make_batch(batch, cache)
            pred = model(pixel, trace, region)
            loss, l1, lp = total_loss(pred, target, cfg.loss)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}; last good checkpoint: {ckpt_path}")
            model.zero_grad(set_to_none=True)
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if not adamax_step(params, grads, state, cfg.optim):
                log.warning("step %d rejected: non-finite gradient (%d faults)", step, state.faults)
                continue
            row = (step, l1.item(), lp.item(), loss.item())
            losses.append(row)
            if csv_file is not None:
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
                if tc.ckpt_every > 0 and state.step % tc.ckpt_every == 0:
                    csv_file.flush()
                    save_checkpoint(ckpt_path, model, cfg, state, seed)
            log.debug("step %d l1 %.5f lpips %.5f total %.5f", *row)
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, model, cfg, state, seed)
    finally:
        if csv_file is not None:
            csv_file.close()
    return TrainResult(model, state, losses, ckpt_path)
