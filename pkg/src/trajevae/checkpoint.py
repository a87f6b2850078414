"""Binary checkpoints of named float64 tensors.

Layout (all integers little-endian)::

    b"TJVAE001"
    u32 n, n bytes of UTF-8 JSON  {"model": {...}, "train": {...} | null}
    u32 tensor count
    per tensor: u32 name length, name bytes, u32 rank, rank x u64 extents,
                prod(extents) x f64 values in row-major order
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, TrajeVAE

MAGIC = b"TJVAE001"


class CheckpointError(ValueError):
    pass


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def dumps(params: dict[str, Tensor], model_config: ModelConfig, train_config: dict | None = None) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    meta = json.dumps({"model": model_config.to_dict(), "train": train_config},
                      sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<I", len(meta)))
    fh.write(meta)
    fh.write(struct.pack("<I", len(params)))
    for name, t in params.items():
        _write_tensor(fh, name, t.data)
    return fh.getvalue()


def save_checkpoint(model: TrajeVAE, path, train_config: dict | None = None) -> None:
    data = dumps(model.params, model.config, train_config)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def loads(data: bytes, expected_joints: int | None = None) -> tuple[TrajeVAE, dict | None]:
    r = _Reader(data)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    try:
        meta = json.loads(r.take(r.u32("config length"), "config block").decode("utf-8"))
        config = ModelConfig.from_dict(meta["model"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable config block: {exc}") from None
    if expected_joints is not None and config.joints != expected_joints:
        raise CheckpointError(
            f"checkpoint joint count mismatch: expected {expected_joints}, got {config.joints}")
    template = TrajeVAE(config, np.random.default_rng(0))
    count = r.u32("tensor count")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"rank of {name}")
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"extents of {name}"))
        n = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(r.take(8 * n, f"values of {name}"), dtype="<f8")
        if name not in template.params:
            raise CheckpointError(f"unexpected tensor {name!r} for this model config")
        want = template.params[name].shape
        if tuple(shape) != want:
            raise CheckpointError(f"shape mismatch for tensor {name!r}: file has {tuple(shape)}, "
                                  f"config expects {want}")
        params[name] = Tensor(values.astype(np.float64).reshape(shape), True, name)
    missing = set(template.params) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    ordered = {k: params[k] for k in template.params}
    return TrajeVAE(config, params=ordered), meta.get("train")


def load_checkpoint(path, expected_joints: int | None = None) -> tuple[TrajeVAE, dict | None]:
    with open(path, "rb") as fh:
        return loads(fh.read(), expected_joints)
