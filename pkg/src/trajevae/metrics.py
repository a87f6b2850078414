"""Diversity and accuracy metrics for sets of sampled motions.

A sample set is an array ``(K, T, 3J)``; a ground truth is ``(T, 3J)``.  Frame
distances are L2 norms over the full ``3J`` pose vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .motion_data import (
    JointMask, PoseSequence, Skeleton, first_k_mask, make_trajectories,
)


def _check(samples: np.ndarray, gt: np.ndarray | None = None) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ValueError(f"samples must be (K >= 1, T, 3J), got {samples.shape}")
    if gt is not None and np.shape(gt) != samples.shape[1:]:
        raise ValueError(f"ground truth {np.shape(gt)} does not match samples {samples.shape[1:]}")
    return samples


def apd(samples) -> float:
    """Average pairwise distance between the flattened samples; 0 for a single sample."""
    samples = _check(samples)
    if samples.shape[0] < 2:
        return 0.0
    return float(pdist(samples.reshape(samples.shape[0], -1)).mean())


def ade(samples, gt) -> float:
    """min over samples of the per-frame L2 error averaged over frames."""
    samples = _check(samples, gt)
    return float(np.linalg.norm(samples - gt, axis=2).mean(axis=1).min())


def fde(samples, gt) -> float:
    """min over samples of the last-frame L2 error."""
    samples = _check(samples, gt)
    return float(np.linalg.norm(samples[:, -1] - np.asarray(gt)[-1], axis=1).min())


def build_groups(initial_poses, epsilon: float) -> list[np.ndarray]:
    """For each item, the indices of items whose initial pose lies within ``epsilon``."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x0 = np.asarray(initial_poses, dtype=np.float64)
    d = cdist(x0, x0)
    return [np.flatnonzero(row < epsilon) for row in d]


def mmade(samples, group: Sequence[int], gts) -> float:
    return float(np.mean([ade(samples, gts[j]) for j in group]))


def mmfde(samples, group: Sequence[int], gts) -> float:
    return float(np.mean([fde(samples, gts[j]) for j in group]))


def cross_pair(items: Sequence[PoseSequence], mask: JointMask,
               epsilon0: float = 0.01) -> list[tuple[int, int]]:
    """Pairs ``(a, b)``: initial pose of ``a`` with the trajectories of ``b``.

    Two items pair when the visible joints of ``a``'s initial pose lie within
    ``epsilon0`` of ``b``'s trajectory coordinates at ``t = 0``.
    """
    if epsilon0 <= 0:
        raise ValueError(f"epsilon0 must be positive, got {epsilon0}")
    cols = np.flatnonzero(mask.coordinate_mask())
    starts = np.array([s.initial_pose[cols] for s in items]).reshape(len(items), -1)
    d = cdist(starts, starts) if cols.size else np.zeros((len(items), len(items)))
    a_idx, b_idx = np.nonzero(d < epsilon0)
    return list(zip(a_idx.tolist(), b_idx.tolist()))


METRIC_NAMES = ("APD", "ADE", "FDE", "MMADE", "MMFDE")


@dataclass
class MetricTable:
    rows: dict[int, dict[str, float]]
    meta: dict = field(default_factory=dict)
    cross_pair: dict[int, dict[str, float]] | None = None

    def to_dict(self) -> dict:
        out = {"meta": self.meta, "columns": list(METRIC_NAMES),
               "rows": {str(k): v for k, v in self.rows.items()}}
        if self.cross_pair is not None:
            out["cross_pair"] = {"columns": ["APD", "ADE", "FDE", "pairs"],
                                 "rows": {str(k): v for k, v in self.cross_pair.items()}}
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format(self) -> str:
        lines = ["k  " + "  ".join(f"{m:>8s}" for m in METRIC_NAMES)]
        for k, row in self.rows.items():
            lines.append(f"{k:<2d} " + "  ".join(f"{row[m]:8.4f}" for m in METRIC_NAMES))
        if self.cross_pair:
            lines.append("cross-pair")
            lines.append("k  " + "  ".join(f"{m:>8s}" for m in ("APD", "ADE", "FDE")) + "     pairs")
            for k, row in self.cross_pair.items():
                lines.append(f"{k:<2d} " + "  ".join(f"{row[m]:8.4f}" for m in ("APD", "ADE", "FDE"))
                             + f"  {row['pairs']:8d}")
        return "\n".join(lines)


def evaluation_windows(corpus: Sequence[PoseSequence], length: int) -> list[PoseSequence]:
    """The first ``length``-frame window of each sequence, normalised."""
    return [s.window(0, length) if s.length > length else s for s in corpus
            if s.length >= length]


def evaluate(model, corpus: Sequence[PoseSequence], k_list: Sequence[int] = (0, 1, 2, 3, 4),
             num_samples: int = 50, epsilon: float = 0.5, rng: np.random.Generator | None = None,
             mode: str = "sample", skeleton: Skeleton | None = None,
             cross_pair_epsilon0: float | None = None) -> MetricTable:
    """Mean APD/ADE/FDE/MMADE/MMFDE over the corpus for each number of trajectories ``k``.

    Trajectories are added in the order right foot, left foot, right hand, left hand,
    then the remaining joints.  ``model`` needs ``config`` and ``generate``.
    """
    cfg = model.config
    skeleton = skeleton or Skeleton.with_joints(cfg.joints)
    rng = np.random.default_rng(0) if rng is None else rng
    items = evaluation_windows(corpus, cfg.frames)
    if not items:
        raise ValueError(f"no sequence has the {cfg.frames} frames the model expects")
    gts = np.stack([s.frames for s in items])
    groups = build_groups([s.initial_pose for s in items], epsilon)

    rows: dict[int, dict[str, float]] = {}
    cross: dict[int, dict[str, float]] | None = {} if cross_pair_epsilon0 else None
    for k in k_list:
        mask = first_k_mask(k, skeleton)
        acc = {m: [] for m in METRIC_NAMES}
        for i, seq in enumerate(items):
            traj = make_trajectories(seq, mask)
            samples = model.generate(seq.initial_pose, traj, num_samples, mode, rng)
            acc["APD"].append(apd(samples))
            acc["ADE"].append(ade(samples, gts[i]))
            acc["FDE"].append(fde(samples, gts[i]))
            acc["MMADE"].append(mmade(samples, groups[i], gts))
            acc["MMFDE"].append(mmfde(samples, groups[i], gts))
        rows[k] = {m: float(np.mean(v)) for m, v in acc.items()}

        if cross is not None and k > 0:
            pairs = cross_pair(items, mask, cross_pair_epsilon0)
            cp = {m: [] for m in ("APD", "ADE", "FDE")}
            for a, b in pairs:
                traj = make_trajectories(items[b], mask)
                samples = model.generate(items[a].initial_pose, traj, num_samples, mode, rng)
                cp["APD"].append(apd(samples))
                cp["ADE"].append(ade(samples, gts[b]))
                cp["FDE"].append(fde(samples, gts[b]))
            cross[k] = {m: float(np.mean(v)) if v else float("nan") for m, v in cp.items()}
            cross[k]["pairs"] = len(pairs)

    meta = {"K": num_samples, "epsilon": epsilon, "mode": mode, "items": len(items),
            "k_list": list(k_list)}
    if cross_pair_epsilon0:
        meta["epsilon0"] = cross_pair_epsilon0
    return MetricTable(rows, meta, cross)
