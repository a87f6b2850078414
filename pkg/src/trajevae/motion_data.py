"""Pose sequences, structured joint masks, trajectories and corpus files.

A pose is a flat ``3J`` vector ``[x_0, y_0, z_0, x_1, ...]`` in metres.  A
:class:`PoseSequence` holds the initial pose plus ``T`` future frames.  On
disk a sequence is a single clip of ``T + 1`` frames whose first frame is the
initial pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CANONICAL_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_foot", "l_hip", "l_knee", "l_foot",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_hand", "r_shoulder", "r_elbow", "r_hand",
)

JOINT_ALIASES = {
    "rfoot": "r_foot", "lfoot": "l_foot", "rhand": "r_hand", "lhand": "l_hand",
    "right_foot": "r_foot", "left_foot": "l_foot",
    "right_hand": "r_hand", "left_hand": "l_hand",
}

# order in which trajectories are added during evaluation
TRAJECTORY_ORDER = ("rfoot", "lfoot", "rhand", "lhand")

FAMILIES = ("sinusoidal", "random_walk", "mixed")

_REST_17 = np.array([
    [0.00, 0.0, 0.00],
    [-0.13, 0.0, 0.00], [-0.13, 0.0, -0.45], [-0.13, 0.0, -0.88],
    [0.13, 0.0, 0.00], [0.13, 0.0, -0.45], [0.13, 0.0, -0.88],
    [0.00, 0.0, 0.23], [0.00, 0.0, 0.48], [0.00, 0.0, 0.58], [0.00, 0.0, 0.70],
    [0.17, 0.0, 0.45], [0.17, 0.0, 0.17], [0.17, 0.0, -0.08],
    [-0.17, 0.0, 0.45], [-0.17, 0.0, 0.17], [-0.17, 0.0, -0.08],
])

# (joint indices, how strongly each joint follows the limb motion)
_LIMBS_17 = (
    ((1, 2, 3), (0.25, 0.6, 1.0)),
    ((4, 5, 6), (0.25, 0.6, 1.0)),
    ((7, 8, 9, 10), (0.15, 0.3, 0.4, 0.5)),
    ((11, 12, 13), (0.2, 0.6, 1.0)),
    ((14, 15, 16), (0.2, 0.6, 1.0)),
)


class MotionDataError(ValueError):
    pass


class CorpusFormatError(MotionDataError):
    pass


class UnknownJointError(MotionDataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ''


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    rest_pose: np.ndarray = field(repr=False, compare=False)
    limbs: tuple[tuple[tuple[int, ...], tuple[float, ...]], ...] = field(repr=False, compare=False)

    def __post_init__(self):
        if not self.names:
            raise MotionDataError("a skeleton needs at least one joint")
        if len(set(self.names)) != len(self.names):
            raise MotionDataError("joint names must be unique")
        if self.names[0] != "pelvis":
            raise MotionDataError("joint 0 must be the pelvis")

    @property
    def joint_count(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls) -> "Skeleton":
        return cls(CANONICAL_JOINTS, _REST_17.copy(), _LIMBS_17)

    @classmethod
    def with_joints(cls, joint_count: int) -> "Skeleton":
        """The canonical 17-joint body, or a generic chain layout for other sizes."""
        if joint_count == len(CANONICAL_JOINTS):
            return cls.default()
        if joint_count < 1:
            raise MotionDataError(f"joint count must be positive, got {joint_count}")
        names = ("pelvis",) + tuple(f"joint_{i:02d}" for i in range(1, joint_count))
        rest = np.zeros((joint_count, 3))
        limbs = []
        n_limbs = max(1, math.ceil((joint_count - 1) / 3))
        for limb in range(n_limbs):
            idx = tuple(range(1 + 3 * limb, min(joint_count, 4 + 3 * limb)))
            if not idx:
                continue
            angle = 2 * math.pi * limb / n_limbs
            depths = tuple((j + 1) / 3 for j in range(len(idx)))
            for i, d in zip(idx, depths):
                rest[i] = [0.4 * d * math.cos(angle), 0.0, 0.4 * d * math.sin(angle)]
            limbs.append((idx, depths))
        return cls(names, rest, tuple(limbs))

    def index(self, name: str) -> int:
        key = JOINT_ALIASES.get(name, name)
        try:
            return self.names.index(key)
        except ValueError:
            valid = sorted(set(self.names) | {a for a, v in JOINT_ALIASES.items() if v in self.names})
            raise UnknownJointError(f"unknown joint {name!r}; valid names: {', '.join(valid)}") from None

    def trajectory_order(self) -> tuple[int, ...]:
        """Joint indices in the order trajectories are supplied during evaluation."""
        first = [self.index(a) for a in TRAJECTORY_ORDER
                 if JOINT_ALIASES[a] in self.names]
        rest = [i for i in range(1, self.joint_count) if i not in first]
        return tuple(first + rest)


DEFAULT_SKELETON = Skeleton.default()


@dataclass(frozen=True)
class PoseSequence:
    initial_pose: np.ndarray  # (3J,)
    frames: np.ndarray  # (T, 3J)
    fps: float = 15.0
    action_label: str = ""
    id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x0 = np.asarray(self.initial_pose, dtype=np.float64)
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] % 3:
            raise MotionDataError(f"{self.id}: frames must be (T >= 1, 3J), got {frames.shape}")
        if x0.shape != (frames.shape[1],):
            raise MotionDataError(
                f"{self.id}: initial pose width {x0.shape} does not match frames {frames.shape}")
        object.__setattr__(self, "initial_pose", x0)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1] // 3

    def clip(self) -> np.ndarray:
        """All ``T + 1`` frames, initial pose first."""
        return np.vstack([self.initial_pose[None], self.frames])

    def window(self, start: int, length: int) -> "PoseSequence":
        """Normalised sub-sequence whose initial pose is clip frame ``start``."""
        clip = self.clip()
        if start < 0 or start + length >= clip.shape[0]:
            raise MotionDataError(
                f"{self.id}: window [{start}, {start + length}] exceeds {clip.shape[0]} frames")
        sub = PoseSequence(clip[start], clip[start + 1:start + 1 + length], self.fps,
                           self.action_label, self.id)
        return normalize_sequence(sub)

    def __eq__(self, other):
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (self.id == other.id and self.action_label == other.action_label
                and self.fps == other.fps
                and np.array_equal(self.initial_pose, other.initial_pose)
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True, eq=False)
class JointMask:
    """Per-joint visibility bits; a visible joint has bit 1."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool).reshape(-1))

    def __eq__(self, other):
        return isinstance(other, JointMask) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    @property
    def joint_count(self) -> int:
        return self.bits.size

    @property
    def visible_joints(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.bits))

    @property
    def k(self) -> int:
        return int(self.bits.sum())

    def coordinate_mask(self) -> np.ndarray:
        return np.repeat(self.bits.astype(np.float64), 3)

    def expand(self, length: int) -> np.ndarray:
        """The structured ``(T, 3J)`` mask ``M``: the coordinate mask on every row."""
        return np.tile(self.coordinate_mask(), (length, 1))


@dataclass(frozen=True)
class TrajectorySet:
    values: np.ndarray  # (T, 3J)
    visible_joints: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.visible_joints)


def normalize_sequence(seq: PoseSequence) -> PoseSequence:
    """Translate the whole sequence so that the initial pose's pelvis is the origin."""
    if not (np.all(np.isfinite(seq.initial_pose)) and np.all(np.isfinite(seq.frames))):
        raise MotionDataError(f"{seq.id}: sequence contains non-finite values")
    offset = np.tile(seq.initial_pose[:3], seq.joint_count)
    return PoseSequence(seq.initial_pose - offset, seq.frames - offset, seq.fps,
                        seq.action_label, seq.id, dict(seq.meta))


def sample_mask(joint_count: int, p_mask: float, rng: np.random.Generator) -> JointMask:
    """Hide each joint independently with probability ``p_mask``."""
    if not 0.0 <= p_mask <= 1.0:
        raise MotionDataError(f"p_mask must lie in [0, 1], got {p_mask}")
    return JointMask(rng.random(joint_count) >= p_mask)


def _check_mask(seq: PoseSequence, mask: JointMask) -> None:
    if mask.joint_count != seq.joint_count:
        raise MotionDataError(
            f"mask covers {mask.joint_count} joints but sequence {seq.id!r} has {seq.joint_count}")


def make_trajectories(seq: PoseSequence, mask: JointMask) -> TrajectorySet:
    _check_mask(seq, mask)
    return TrajectorySet(seq.frames * mask.coordinate_mask(), mask.visible_joints)


def mask_future_poses(seq: PoseSequence, mask: JointMask) -> np.ndarray:
    """``X * (1 - M)``: the complement of the trajectories."""
    _check_mask(seq, mask)
    return seq.frames * (1.0 - mask.coordinate_mask())


def select_named_joints(names: Iterable[str], skeleton: Skeleton = DEFAULT_SKELETON) -> JointMask:
    bits = np.zeros(skeleton.joint_count, dtype=bool)
    for name in names:
        bits[skeleton.index(name)] = True
    return JointMask(bits)


def first_k_mask(k: int, skeleton: Skeleton = DEFAULT_SKELETON) -> JointMask:
    """Mask exposing the first ``k`` joints of :meth:`Skeleton.trajectory_order`."""
    order = skeleton.trajectory_order()
    if not 0 <= k <= len(order):
        raise MotionDataError(f"k must lie in [0, {len(order)}], got {k}")
    bits = np.zeros(skeleton.joint_count, dtype=bool)
    bits[list(order[:k])] = True
    return JointMask(bits)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    fps: float = 15.0
    max_speed: float = 2.0  # m/s bound on every joint's speed
    frequency: float = 1.0  # Hz, limb oscillation of the sinusoidal family
    drift_share: float = 0.5  # fraction of max_speed available to the pelvis drift


def _unit(rng: np.random.Generator, n: int = 3) -> np.ndarray:
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def _clip_norm(v: np.ndarray, bound: float) -> np.ndarray:
    n = np.linalg.norm(v)
    return v if n <= bound else v * (bound / n)


def _sinusoidal(length, skeleton, cfg, rng):
    dt = 1.0 / cfg.fps
    t = np.arange(length) * dt
    drift_dir = np.array([*_unit(rng, 2), 0.0])
    drift = drift_dir * rng.uniform(0.0, cfg.drift_share * cfg.max_speed)
    osc_speed = (1.0 - cfg.drift_share) * cfg.max_speed
    amp_max = osc_speed / (2 * np.pi * cfg.frequency)
    pelvis = np.array([*rng.uniform(-1.0, 1.0, 2), 1.0]) + t[:, None] * drift
    pos = np.broadcast_to(skeleton.rest_pose, (length,) + skeleton.rest_pose.shape).copy()
    pos += pelvis[:, None, :]
    for joints, depths in skeleton.limbs:
        amp = rng.uniform(0.3, 1.0) * amp_max
        direction = _unit(rng)
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = amp * np.sin(2 * np.pi * cfg.frequency * t + phase)
        for j, d in zip(joints, depths):
            pos[:, j] += d * wave[:, None] * direction
    return pos


def _random_walk(length, skeleton, cfg, rng):
    dt = 1.0 / cfg.fps
    v_max = cfg.drift_share * cfg.max_speed
    u_max = (1.0 - cfg.drift_share) * cfg.max_speed
    v = _clip_norm(np.array([*rng.normal(0.0, 0.5 * v_max, 2), 0.0]), v_max)
    p = np.array([*rng.uniform(-1.0, 1.0, 2), 1.0])
    n_limbs = len(skeleton.limbs)
    u = np.array([_clip_norm(rng.normal(0.0, 0.3 * u_max, 3), u_max) for _ in range(n_limbs)])
    d = np.zeros((n_limbs, 3))
    pos = np.empty((length,) + skeleton.rest_pose.shape)
    for step in range(length):
        if step:
            v = _clip_norm(v + np.array([*rng.normal(0.0, 0.1 * v_max, 2), 0.0]), v_max)
            p = p + v * dt
            for l in range(n_limbs):
                u[l] = _clip_norm(0.9 * u[l] - 4.0 * d[l] * dt + rng.normal(0.0, 0.2 * u_max, 3), u_max)
            d = d + u * dt
        pos[step] = skeleton.rest_pose + p
        for l, (joints, depths) in enumerate(skeleton.limbs):
            for j, depth in zip(joints, depths):
                pos[step, j] += depth * d[l]
    return pos


def generate_synthetic(count: int, length: int, skeleton: Skeleton = DEFAULT_SKELETON,
                       family: str = "sinusoidal", rng: np.random.Generator | None = None,
                       config: SyntheticConfig = SyntheticConfig()) -> list[PoseSequence]:
    """``count`` normalised clips of ``length`` frames (initial pose + ``length - 1`` frames).

    Every joint moves with speed at most ``config.max_speed``.
    """
    if count < 1 or length < 2:
        raise MotionDataError("need count >= 1 and length >= 2")
    if family not in FAMILIES:
        raise MotionDataError(f"unknown motion family {family!r}; choose from {FAMILIES}")
    rng = np.random.default_rng() if rng is None else rng
    out = []
    for i in range(count):
        fam = family
        if family == "mixed":
            fam = FAMILIES[int(rng.integers(2))]
        maker = _sinusoidal if fam == "sinusoidal" else _random_walk
        clip = maker(length, skeleton, config, rng).reshape(length, -1)
        seq = PoseSequence(clip[0], clip[1:], config.fps, fam, f"syn-{i:05d}")
        out.append(normalize_sequence(seq))
    return out


# ---------------------------------------------------------------------------
# corpus files: one JSON record per line
# ---------------------------------------------------------------------------

def sequence_to_record(seq: PoseSequence) -> dict:
    rec = {
        "id": seq.id,
        "action_label": seq.action_label,
        "fps": seq.fps,
        "joints": seq.clip().reshape(seq.length + 1, seq.joint_count, 3).tolist(),
    }
    if seq.meta:
        rec["meta"] = seq.meta
    return rec


def record_to_sequence(rec: dict, lineno: int = 0, joint_count: int | None = None) -> PoseSequence:
    where = f"line {lineno}" if lineno else "record"
    for key, kind in (("id", str), ("action_label", str), ("fps", (int, float)), ("joints", list)):
        if key not in rec:
            raise CorpusFormatError(f"{where}: missing field {key!r}")
        if not isinstance(rec[key], kind) or isinstance(rec[key], bool):
            raise CorpusFormatError(f"{where}: field {key!r} has wrong type {type(rec[key]).__name__}")
    try:
        joints = np.array(rec["joints"], dtype=np.float64)
    except (ValueError, TypeError):
        raise CorpusFormatError(f"{where}: field 'joints' is not a T x J x 3 numeric array") from None
    if joints.ndim != 3 or joints.shape[2] != 3 or joints.shape[0] < 2:
        raise CorpusFormatError(
            f"{where}: field 'joints' must be T x J x 3 with T >= 2, got shape {joints.shape}")
    if joint_count is not None and joints.shape[1] != joint_count:
        raise CorpusFormatError(
            f"{where}: record {rec['id']!r} has {joints.shape[1]} joints, expected {joint_count}")
    if not np.all(np.isfinite(joints)):
        raise CorpusFormatError(f"{where}: record {rec['id']!r} contains non-finite values")
    flat = joints.reshape(joints.shape[0], -1)
    meta = rec.get("meta", {})
    return PoseSequence(flat[0], flat[1:], float(rec["fps"]), rec["action_label"], rec["id"],
                        dict(meta) if isinstance(meta, dict) else {})


def save_corpus(seqs: Sequence[PoseSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(sequence_to_record(seq)))
            fh.write("\n")


def load_corpus(path, joint_count: int | None = None, min_frames: int = 1) -> list[PoseSequence]:
    """Read a corpus file; sequences with fewer than ``min_frames`` future frames are rejected."""
    seqs = []
    seen = set()
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusFormatError(f"line {lineno}: record must be an object")
            seq = record_to_sequence(rec, lineno, joint_count)
            if seq.length < min_frames:
                raise CorpusFormatError(
                    f"line {lineno}: record {seq.id!r} has {seq.length} frames after the "
                    f"initial pose, need at least {min_frames}")
            if seq.id in seen:
                raise CorpusFormatError(f"line {lineno}: duplicate id {seq.id!r}")
            seen.add(seq.id)
            seqs.append(seq)
    return seqs
