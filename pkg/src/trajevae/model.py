"""TrajeVAE: a conditional VAE that completes pose sequences from joint trajectories.

Data flow for one branch (trajectories ``Y`` or masked poses ``X * (1 - M)``)::

    coordinate MLP -> [h_t ; h_0] -> +pos. encoding -> shared self-attention x2
        -> DCT over time -> branch self-attention -> head -> (mu, logvar)

and for decoding::

    z -> IDCT -> [w_t ; w_0] -> input MLP -> +pos. encoding -> self-attention
        -> offset head o_t -> x_t = x_0 + cumsum(o)_t

Shapes are batched: sequences are ``(B, T, 3J)``, latents ``(B, T, D_z)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concat, dropout, layer_norm, linear, no_grad
from .dct import dct_time, idct_time
from .motion_data import JointMask, PoseSequence, TrajectorySet

# (use_learnable_prior, use_dct, use_masked_future_poses) for each ablation row
VARIANTS = {
    "base": (False, False, False),
    "prior": (True, False, False),
    "dct": (True, True, False),
    "masked": (True, True, True),
}


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    joints: int = 17
    frames: int = 30
    latent_dim: int = 256
    hidden_dim: int = 256
    heads: int = 4
    ff_dim: int = 1024
    shared_layers: int = 2
    branch_layers: int = 2
    decoder_layers: int = 2
    dropout: float = 0.1
    leaky_slope: float = 0.1
    use_learnable_prior: bool = True
    use_dct: bool = True
    use_masked_future_poses: bool = True
    logvar_min: float = -10.0
    logvar_max: float = 10.0

    def __post_init__(self):
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small widths for CPU-scale experiments."""
        base = dict(hidden_dim=32, latent_dim=32, heads=4, ff_dim=128,
                    branch_layers=1, decoder_layers=2)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def for_variant(cls, name: str, **overrides) -> "ModelConfig":
        prior, use_dct, masked = VARIANTS[name]
        return cls(use_learnable_prior=prior, use_dct=use_dct,
                   use_masked_future_poses=masked, **overrides)

    @property
    def width(self) -> int:
        """Feature width inside the self-attention stacks."""
        return 2 * self.hidden_dim

    @property
    def variant(self) -> str:
        flags = (self.use_learnable_prior, self.use_dct, self.use_masked_future_poses)
        return next(name for name, v in VARIANTS.items() if v == flags)

    def validate(self) -> None:
        for name in ("joints", "frames", "latent_dim", "hidden_dim", "heads", "ff_dim",
                     "shared_layers"):
            if getattr(self, name) < 1:
                raise ModelConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        for name in ("branch_layers", "decoder_layers"):
            if getattr(self, name) < 0:
                raise ModelConfigError(f"model.{name} must be non-negative")
        if self.width % self.heads:
            raise ModelConfigError(
                f"attention width {self.width} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")
        if self.logvar_min >= self.logvar_max:
            raise ModelConfigError("model.logvar_min must be below model.logvar_max")
        flags = (self.use_learnable_prior, self.use_dct, self.use_masked_future_poses)
        if flags not in VARIANTS.values():
            raise ModelConfigError(
                f"flag combination {flags} is not one of the ablation rows {VARIANTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ModelConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DistributionStats:
    mean: Tensor
    logvar: Tensor
    role: str = ""

    @property
    def std(self) -> Tensor:
        return (self.logvar * 0.5).exp()

    @classmethod
    def standard_normal(cls, shape) -> "DistributionStats":
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)), "standard-normal")


@dataclass
class LatentSample:
    z: Tensor
    source: str


def kl_divergence(q: DistributionStats, p: DistributionStats) -> Tensor:
    """KL(q || p) between diagonal Gaussians, summed over every element."""
    if q.mean.shape != p.mean.shape or q.logvar.shape != p.logvar.shape:
        raise ValueError(f"KL shape mismatch: q {q.mean.shape} vs p {p.mean.shape}")
    diff = q.mean - p.mean
    ratio = (q.logvar - p.logvar).exp()
    inv_var_p = (-p.logvar).exp()
    per = (ratio + diff * diff * inv_var_p - 1.0 - (q.logvar - p.logvar)) * 0.5
    return per.sum()


def sample_latent(stats: DistributionStats, mode: str = "sample",
                  rng: np.random.Generator | None = None) -> LatentSample:
    """Reparameterised draw ``mu + sigma * eps``, or the means when ``mode == "mean"``."""
    if mode == "mean":
        return LatentSample(stats.mean, f"{stats.role}-mean")
    if mode != "sample":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValueError("sampling needs a seeded generator")
    eps = rng.standard_normal(stats.mean.shape)
    return LatentSample(stats.mean + stats.std * eps, stats.role)


def positional_encoding(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _repeat_time(h: Tensor, length: int) -> Tensor:
    """(B, F) -> (B, T, F)."""
    return h.reshape(h.shape[0], 1, h.shape[1]) + np.zeros((1, length, 1))


class TrajeVAE:
    """Parameters plus the forward computations of the model."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            params = self._init_params(rng)
        self.params = params

    # -- parameters --------------------------------------------------------
    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        cfg = self.config
        p: dict[str, Tensor] = {}
        pose_dim = 3 * cfg.joints
        H, W, Dz = cfg.hidden_dim, cfg.width, cfg.latent_dim

        def lin(name, n_in, n_out, gain=1.0):
            bound = gain / np.sqrt(n_in)
            p[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (n_in, n_out)), True, f"{name}.w")
            p[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, n_out) * (gain > 0.5), True,
                                    f"{name}.b")

        def norm(name, n):
            p[f"{name}.g"] = Tensor(np.ones(n), True, f"{name}.g")
            p[f"{name}.b"] = Tensor(np.zeros(n), True, f"{name}.b")

        def mlp(name, n_in, n_hidden, n_out, final_norm=True):
            lin(f"{name}.l1", n_in, n_hidden)
            norm(f"{name}.n1", n_hidden)
            lin(f"{name}.l2", n_hidden, n_out)
            if final_norm:
                norm(f"{name}.n2", n_out)

        def attention_stack(name, layers):
            for i in range(layers):
                pre = f"{name}.{i}"
                norm(f"{pre}.ln1", W)
                lin(f"{pre}.qkv", W, 3 * W)
                lin(f"{pre}.out", W, W, gain=0.1)
                norm(f"{pre}.ln2", W)
                lin(f"{pre}.ff1", W, cfg.ff_dim)
                lin(f"{pre}.ff2", cfg.ff_dim, W, gain=0.1)
            norm(f"{name}.ln_f", W)

        mlp("enc.coord", pose_dim, H, H)
        mlp("enc.init", pose_dim, H, H)
        attention_stack("enc.shared", cfg.shared_layers)
        attention_stack("enc.traj", cfg.branch_layers)
        attention_stack("enc.pose", cfg.branch_layers)
        if cfg.use_learnable_prior:
            mlp("head.traj", W, W, 2 * Dz, final_norm=False)
        mlp("head.pose", W, W, 2 * Dz, final_norm=False)
        mlp("dec.init", pose_dim, W, W)
        dec_in = Dz + W + (0 if cfg.use_learnable_prior else W)
        mlp("dec.in", dec_in, W, W, final_norm=False)
        attention_stack("dec.attn", cfg.decoder_layers)
        mlp("dec.out", W, W, pose_dim, final_norm=False)
        return p

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- building blocks -----------------------------------------------------
    def _mlp(self, name: str, x: Tensor) -> Tensor:
        p, slope = self.params, self.config.leaky_slope
        h = linear(x, p[f"{name}.l1.w"], p[f"{name}.l1.b"])
        h = layer_norm(h, p[f"{name}.n1.g"], p[f"{name}.n1.b"]).leaky_relu(slope)
        h = linear(h, p[f"{name}.l2.w"], p[f"{name}.l2.b"])
        if f"{name}.n2.g" in p:
            h = layer_norm(h, p[f"{name}.n2.g"], p[f"{name}.n2.b"]).leaky_relu(slope)
        return h

    def _self_attention(self, pre: str, x: Tensor, training: bool, rng) -> Tensor:
        p, cfg = self.params, self.config
        B, T, W = x.shape
        h, d = cfg.heads, W // cfg.heads
        qkv = linear(x, p[f"{pre}.qkv.w"], p[f"{pre}.qkv.b"])
        qkv = qkv.reshape(B, T, 3, h, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
        attn = dropout(scores.softmax(-1), cfg.dropout, rng, training)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, W)
        return linear(out, p[f"{pre}.out.w"], p[f"{pre}.out.b"])

    def _attention_stack(self, name: str, layers: int, x: Tensor, training: bool, rng) -> Tensor:
        p, cfg = self.params, self.config
        for i in range(layers):
            pre = f"{name}.{i}"
            h = layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            x = x + dropout(self._self_attention(pre, h, training, rng), cfg.dropout, rng, training)
            h = layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            h = linear(h, p[f"{pre}.ff1.w"], p[f"{pre}.ff1.b"]).leaky_relu(cfg.leaky_slope)
            h = linear(h, p[f"{pre}.ff2.w"], p[f"{pre}.ff2.b"])
            x = x + dropout(h, cfg.dropout, rng, training)
        return layer_norm(x, p[f"{name}.ln_f.g"], p[f"{name}.ln_f.b"])

    def _head(self, name: str, features: Tensor, role: str) -> DistributionStats:
        cfg = self.config
        out = self._mlp(name, features)
        Dz = cfg.latent_dim
        mean = out[..., :Dz]
        logvar = out[..., Dz:].clip(cfg.logvar_min, cfg.logvar_max)
        return DistributionStats(mean, logvar, role)

    # -- public operations -----------------------------------------------------
    def encode_initial_pose(self, x0) -> Tensor:
        """``h_0`` for a ``(3J,)`` pose or a ``(B, 3J)`` batch."""
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        if x0.ndim == 1:
            return self._mlp("enc.init", x0.reshape(1, -1)).reshape(-1)
        return self._mlp("enc.init", x0)

    def branch_features(self, seq, h0: Tensor, branch: str, training: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
        """Output of the branch encoder, before the distribution head."""
        cfg = self.config
        if branch not in ("traj", "pose"):
            raise ValueError(f"branch must be 'traj' or 'pose', got {branch!r}")
        seq = seq if isinstance(seq, Tensor) else Tensor(seq)
        if seq.ndim != 3 or seq.shape[2] != 3 * cfg.joints or seq.shape[1] != cfg.frames:
            raise ValueError(f"expected (B, {cfg.frames}, {3 * cfg.joints}) sequences, "
                             f"got {seq.shape}")
        if h0.ndim != 2 or h0.shape != (seq.shape[0], cfg.hidden_dim):
            raise ValueError(f"h0 shape {h0.shape} does not match batch {seq.shape[0]}")
        T = seq.shape[1]
        h = self._mlp("enc.coord", seq)
        x = concat([h, _repeat_time(h0, T)], axis=-1) + positional_encoding(T, cfg.width)
        x = self._attention_stack("enc.shared", cfg.shared_layers, x, training, rng)
        if cfg.use_dct:
            x = dct_time(x)
        return self._attention_stack(f"enc.{branch}", cfg.branch_layers, x, training, rng)

    def encode_branch(self, seq, h0: Tensor, branch: str, training: bool = False,
                      rng: np.random.Generator | None = None) -> DistributionStats:
        feats = self.branch_features(seq, h0, branch, training, rng)
        role = "prior" if branch == "traj" else "posterior"
        return self._head(f"head.{branch}", feats, role)

    def decode(self, z, x0, training: bool = False, rng: np.random.Generator | None = None,
               traj_features: Tensor | None = None, return_offsets: bool = False):
        """Poses ``x_0 + cumsum(offsets)`` from frequency-domain latents ``z`` of shape (B, T, D_z)."""
        cfg = self.config
        z = z.z if isinstance(z, LatentSample) else z
        z = z if isinstance(z, Tensor) else Tensor(z)
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        B, T, _ = z.shape
        w = idct_time(z) if cfg.use_dct else z
        parts = [w, _repeat_time(self._mlp("dec.init", x0), T)]
        if not cfg.use_learnable_prior:
            if traj_features is None:
                raise ValueError("the base variant decodes with trajectory features")
            parts.append(traj_features)
        x = self._mlp("dec.in", concat(parts, axis=-1)) + positional_encoding(T, cfg.width)
        x = self._attention_stack("dec.attn", cfg.decoder_layers, x, training, rng)
        offsets = self._mlp("dec.out", x)
        poses = offsets_to_poses(offsets, x0)
        return (poses, offsets) if return_offsets else poses

    def forward_train(self, seqs: PoseSequence | Sequence[PoseSequence],
                      masks: JointMask | Sequence[JointMask],
                      rng: np.random.Generator, training: bool = True):
        """Reconstruction plus prior/posterior statistics for a batch of sequences.

        Returns ``(recon, prior, posterior)`` with ``recon`` of shape (B, T, 3J).
        """
        if isinstance(seqs, PoseSequence):
            seqs, masks = [seqs], [masks]
        x0 = np.stack([s.initial_pose for s in seqs])
        frames = np.stack([s.frames for s in seqs])
        cmask = np.stack([m.coordinate_mask() for m in masks])[:, None, :]
        if cmask.shape[2] != frames.shape[2]:
            raise ValueError(f"mask width {cmask.shape[2]} does not match poses {frames.shape[2]}")
        return self.forward_arrays(x0, frames, cmask, rng, training)

    def forward_arrays(self, x0: np.ndarray, frames: np.ndarray, coord_mask: np.ndarray,
                       rng: np.random.Generator, training: bool = True):
        cfg = self.config
        traj = frames * coord_mask
        pose_input = frames * (1.0 - coord_mask) if cfg.use_masked_future_poses else frames
        h0 = self.encode_initial_pose(x0)
        traj_feats = self.branch_features(traj, h0, "traj", training, rng)
        posterior = self.encode_branch(pose_input, h0, "pose", training, rng)
        if cfg.use_learnable_prior:
            prior = self._head("head.traj", traj_feats, "prior")
            extra = None
        else:
            prior = DistributionStats.standard_normal(posterior.mean.shape)
            extra = traj_feats
        z = sample_latent(posterior, "sample", rng)
        recon = self.decode(z, x0, training, rng, traj_features=extra)
        return recon, prior, posterior

    def prior_stats(self, x0: np.ndarray, traj: np.ndarray) -> tuple[DistributionStats, Tensor | None]:
        """Prior for a batch of trajectories (inference path, no pose encoder)."""
        h0 = self.encode_initial_pose(x0)
        feats = self.branch_features(traj, h0, "traj", False, None)
        if self.config.use_learnable_prior:
            return self._head("head.traj", feats, "prior"), None
        shape = (traj.shape[0], traj.shape[1], self.config.latent_dim)
        return DistributionStats.standard_normal(shape), feats

    def generate(self, x0, traj: TrajectorySet | np.ndarray, num_samples: int = 1,
                 mode: str = "sample", rng: np.random.Generator | None = None) -> np.ndarray:
        """``(K, T, 3J)`` pose sequences decoded from the trajectory prior.

        ``mode="mean"`` decodes the prior means once and returns a single sequence.
        """
        values = traj.values if isinstance(traj, TrajectorySet) else np.asarray(traj, float)
        x0 = np.asarray(x0, dtype=np.float64).reshape(1, -1)
        with no_grad():
            prior, feats = self.prior_stats(x0, values[None])
            if mode == "mean":
                z = prior.mean
                reps = 1
            elif mode == "sample":
                if rng is None:
                    raise ValueError("sampling needs a seeded generator")
                reps = num_samples
                eps = rng.standard_normal((num_samples,) + prior.mean.shape[1:])
                z = prior.mean + prior.std * eps
            else:
                raise ValueError(f"unknown sampling mode {mode!r}")
            if feats is not None:
                feats = feats + np.zeros((reps, 1, 1))
            poses = self.decode(z, np.repeat(x0, reps, axis=0), traj_features=feats)
        return poses.data


def offsets_to_poses(offsets: Tensor, x0: Tensor) -> Tensor:
    """``x_t = x_0 + sum_{tau <= t} o_tau`` over the time axis of (B, T, 3J) offsets.

    The running sum starts from ``x0`` so the additions happen in the same order as
    the step-by-step recurrence ``x_t = x_{t-1} + o_t``.
    """
    start = x0.reshape(x0.shape[0], 1, x0.shape[-1])
    return concat([start, offsets], axis=1).cumsum(axis=1)[:, 1:]
