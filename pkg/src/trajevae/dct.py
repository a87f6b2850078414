"""Orthonormal DCT-II along the time axis, applied per feature column.

The transform is a dense multiply by a cached ``T x T`` basis so it is
differentiable through the ordinary ``matmul`` primitive.  Inputs may be
``(T, D)`` or batched ``(..., T, D)``; the time axis is always the second to
last one.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .autodiff import Tensor, apply_primitive


class EmptySequenceError(ValueError):
    pass


@lru_cache(maxsize=64)
def dct_basis(length: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C[k, n] = a_k cos(pi (2n + 1) k / 2T)``."""
    if length < 1:
        raise EmptySequenceError("DCT needs at least one time step")
    n = np.arange(length)
    k = n[:, None]
    basis = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * length))
    basis *= np.sqrt(2.0 / length)
    basis[0] /= np.sqrt(2.0)
    basis.setflags(write=False)
    return basis


def _apply(basis_of, x):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError(f"expected a (..., T, D) array, got shape {arr.shape}")
    if arr.shape[-2] < 1:
        raise EmptySequenceError("cannot transform an empty sequence")
    basis = basis_of(arr.shape[-2])
    if isinstance(x, Tensor):
        return apply_primitive("matmul", [basis, x])
    return basis @ arr


def dct_time(x):
    """Frequency coefficients of ``x`` along time. Returns the input's kind (Tensor or array)."""
    return _apply(dct_basis, x)


def idct_time(c):
    """Inverse of :func:`dct_time` (multiply by the basis transpose)."""
    return _apply(lambda n: dct_basis(n).T, c)
