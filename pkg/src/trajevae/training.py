"""Objective, learning-rate schedule and the seeded training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .model import DistributionStats, ModelConfig, TrajeVAE, kl_divergence
from .motion_data import PoseSequence
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig", "TrainResult", "NonFiniteLossError", "loss_mse", "loss_total", "lr_at",
    "sample_batch", "train", "save_checkpoint", "load_checkpoint",
]


class TrainConfigError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    decay: float = 0.25
    decay_every: int = 80_000  # 0 disables decay
    beta: float = 0.01
    batch_size: int = 64
    total_steps: int = 240_000
    p_mask: float = 0.85
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    log_every: int = 1

    def __post_init__(self):
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(batch_size=32, total_steps=5000, decay_every=2000, learning_rate=1e-3)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        for name in ("learning_rate", "decay", "batch_size", "total_steps", "log_every"):
            if not getattr(self, name) > 0:
                raise TrainConfigError(f"train.{name} must be positive, got {getattr(self, name)}")
        if self.beta < 0:
            raise TrainConfigError(f"train.beta must be non-negative, got {self.beta}")
        if self.decay_every < 0 or self.checkpoint_every < 0:
            raise TrainConfigError("train.decay_every and train.checkpoint_every must be >= 0")
        if self.decay_every > self.total_steps:
            raise TrainConfigError(
                f"train.decay_every ({self.decay_every}) exceeds train.total_steps "
                f"({self.total_steps}); set it to 0 to disable decay")
        if not 0.0 <= self.p_mask <= 1.0:
            raise TrainConfigError(f"train.p_mask must lie in [0, 1], got {self.p_mask}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise TrainConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def loss_mse(recon, target) -> Tensor:
    """Squared L2 error per frame, summed over frames; averaged over a leading batch axis."""
    recon = recon if isinstance(recon, Tensor) else Tensor(recon)
    if recon.shape != np.shape(target):
        raise ValueError(f"reconstruction {recon.shape} and target {np.shape(target)} differ")
    diff = recon - target
    sq = (diff * diff).sum()
    return sq * (1.0 / recon.shape[0]) if recon.ndim == 3 else sq


def loss_total(recon, target, prior: DistributionStats, posterior: DistributionStats,
               beta: float) -> tuple[Tensor, Tensor, Tensor]:
    """``(mse + beta * kl, mse, kl)``; both parts averaged over the batch."""
    mse = loss_mse(recon, target)
    kl = kl_divergence(posterior, prior)
    if recon.ndim == 3:
        kl = kl * (1.0 / recon.shape[0])
    return mse + kl * beta, mse, kl


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.decay_every <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * cfg.decay ** (step // cfg.decay_every)


def sample_batch(clips: Sequence[np.ndarray], length: int, batch_size: int, p_mask: float,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random windows of ``length`` future frames with one joint mask per element.

    ``clips`` are ``(L, 3J)`` arrays whose frames all serve as candidate initial poses.
    Returns ``(x0, frames, coordinate_mask)`` of shapes (B, 3J), (B, T, 3J), (B, 1, 3J);
    every window is re-centred on its initial pelvis.
    """
    width = clips[0].shape[1]
    joints = width // 3
    x0 = np.empty((batch_size, width))
    frames = np.empty((batch_size, length, width))
    bits = np.empty((batch_size, joints), dtype=bool)
    for b in range(batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        start = int(rng.integers(clip.shape[0] - length))
        offset = np.tile(clip[start, :3], joints)
        x0[b] = clip[start] - offset
        frames[b] = clip[start + 1:start + 1 + length] - offset
        bits[b] = rng.random(joints) >= p_mask
    return x0, frames, np.repeat(bits, 3, axis=1).astype(np.float64)[:, None, :]


@dataclass
class TrainResult:
    model: TrajeVAE
    records: list[dict] = field(default_factory=list)

    def losses(self, key: str = "total") -> np.ndarray:
        return np.array([r[key] for r in self.records])


def train(corpus: Sequence[PoseSequence], model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir=None, callback: Callable[[dict], None] | None = None,
          log_wall_time: bool = True) -> TrainResult:
    """Fit a fresh model; everything random is drawn from one generator seeded by ``train_cfg.seed``.

    With ``out_dir`` set, writes ``metrics.jsonl`` (a metadata line then one record
    per logged step) and ``final.ckpt`` plus any periodic checkpoints.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    T = model_cfg.frames
    clips = []
    for seq in corpus:
        if seq.joint_count != model_cfg.joints:
            raise ValueError(f"sequence {seq.id!r} has {seq.joint_count} joints, "
                             f"model expects {model_cfg.joints}")
        if seq.length < T:
            raise ValueError(f"sequence {seq.id!r} has {seq.length} frames, need at least {T}")
        clips.append(seq.clip())

    rng = np.random.default_rng(train_cfg.seed)
    model = TrajeVAE(model_cfg, rng)
    params = model.parameters()
    state = AdamState(lr=train_cfg.learning_rate)
    result = TrainResult(model)

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")
        meta = {"meta": {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                         "parameters": model.parameter_count()}}
        log_fh.write(json.dumps(meta, sort_keys=True) + "\n")
    try:
        t_start = time.perf_counter()
        for step in range(1, train_cfg.total_steps + 1):
            lr = lr_at(step - 1, train_cfg)
            x0, frames, cmask = sample_batch(clips, T, train_cfg.batch_size, train_cfg.p_mask, rng)
            recon, prior, posterior = model.forward_arrays(x0, frames, cmask, rng, training=True)
            total, mse, kl = loss_total(recon, frames, prior, posterior, train_cfg.beta)
            value = total.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(step, value)
            total.backward()
            state.lr = lr
            adam_step(state, params)

            rec = {"step": step, "lr": lr, "total": value, "mse": mse.item(), "kl": kl.item()}
            if log_wall_time:
                rec["wall_ms"] = round(1000.0 * (time.perf_counter() - t_start), 3)
            if step % train_cfg.log_every == 0 or step == train_cfg.total_steps:
                result.records.append(rec)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                if callback is not None:
                    callback(rec)
            if step % 500 == 0:
                log.info("step %d total %.4f mse %.4f kl %.4f", step, value, rec["mse"], rec["kl"])
            if out_dir is not None and train_cfg.checkpoint_every and \
                    step % train_cfg.checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"step_{step:07d}.ckpt", train_cfg.to_dict())
        if out_dir is not None:
            save_checkpoint(model, out_dir / "final.ckpt", train_cfg.to_dict())
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
