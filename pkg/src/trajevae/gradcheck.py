"""Finite-difference gradient checks for the primitives and for composite functions."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, apply_primitive, concat, dropout, layer_norm, linear


def numeric_gradients(fn: Callable[[list[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                      h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the scalar ``fn`` with respect to every input array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = fn([Tensor(x) for x in arrays]).item()
            flat[i] = orig - h
            minus = fn([Tensor(x) for x in arrays]).item()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(fn: Callable[[list[Tensor]], Tensor],
                       arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    fn(tensors).backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def gradient_error(fn, arrays, h: float = 1e-5) -> float:
    """Relative error of the gradient with respect to all inputs, concatenated.

    Scaling by the whole gradient keeps an input whose partial derivatives are all
    tiny (layer norm over two features, say) from reporting pure round-off.
    """
    ana = analytic_gradients(fn, arrays)
    num = numeric_gradients(fn, arrays, h)
    return relative_error(np.concatenate([a.ravel() for a in ana]),
                          np.concatenate([n.ravel() for n in num]))


# ---------------------------------------------------------------------------
# random instances per primitive: (input arrays, function of tensors -> tensor)
# ---------------------------------------------------------------------------

def _shape(rng, ndim_lo=1, ndim_hi=3, lo=1, hi=4):
    return tuple(int(n) for n in rng.integers(lo, hi + 1, size=int(rng.integers(ndim_lo, ndim_hi + 1))))


def _away_from(rng, shape, points, gap=1e-2):
    """Random values no closer than ``gap`` to any of ``points`` (kinks of the primitive)."""
    x = rng.normal(size=shape)
    for p in points:
        close = np.abs(x - p) < gap
        x[close] = p + np.sign(x[close] - p + 1e-300) * gap * 2
    return x


def _case_binary(kind):
    def make(rng):
        shape = _shape(rng)
        other = tuple(1 if rng.random() < 0.3 else n for n in shape)
        a = rng.normal(size=shape)
        b = rng.normal(size=other)
        if kind == "div":
            b = np.sign(b) * (np.abs(b) + 0.5)
        return [a, b], lambda t: apply_primitive(kind, t)
    return make


def _case_matmul(rng):
    n, k, m = (int(v) for v in rng.integers(1, 5, size=3))
    batch = tuple(int(v) for v in rng.integers(1, 3, size=int(rng.integers(0, 2))))
    return [rng.normal(size=batch + (n, k)), rng.normal(size=(k, m))], \
        lambda t: t[0] @ t[1]


def _case_linear(rng):
    n, k, m = (int(v) for v in rng.integers(1, 5, size=3))
    lead = _shape(rng, 1, 2, 1, 3)
    return [rng.normal(size=lead + (k,)), rng.normal(size=(k, m)), rng.normal(size=m)], \
        lambda t: linear(*t)


def _case_concat(rng):
    lead = _shape(rng, 1, 2)
    widths = rng.integers(1, 4, size=int(rng.integers(2, 4)))
    return [rng.normal(size=lead + (int(w),)) for w in widths], lambda t: concat(t, axis=-1)


def _case_softmax(rng):
    return [rng.normal(size=_shape(rng))], lambda t: t[0].softmax(-1)


def _case_layer_norm(rng):
    shape = _shape(rng, 1, 3, 2, 5)
    n = shape[-1]
    return [rng.normal(size=shape), rng.normal(size=n), rng.normal(size=n)], \
        lambda t: layer_norm(t[0], t[1], t[2])


def _case_leaky_relu(rng):
    return [_away_from(rng, _shape(rng), [0.0])], lambda t: t[0].leaky_relu(0.1)


def _case_exp(rng):
    return [rng.normal(size=_shape(rng))], lambda t: t[0].exp()


def _case_dropout(rng):
    seed = int(rng.integers(2 ** 31))
    return [rng.normal(size=_shape(rng))], \
        lambda t: dropout(t[0], 0.1, np.random.default_rng(seed), True)


def _case_cumsum(rng):
    shape = _shape(rng, 1, 3)
    axis = int(rng.integers(len(shape)))
    return [rng.normal(size=shape)], lambda t: t[0].cumsum(axis=axis)


def _case_slice(rng):
    shape = _shape(rng, 2, 3, 2, 5)
    stop = int(rng.integers(1, shape[-1] + 1))
    return [rng.normal(size=shape)], lambda t: t[0][..., :stop][0]


def _case_reshape(rng):
    shape = _shape(rng, 2, 3)
    return [rng.normal(size=shape)], lambda t: t[0].reshape(-1)


def _case_transpose(rng):
    shape = _shape(rng, 2, 3)
    axes = tuple(int(a) for a in rng.permutation(len(shape)))
    return [rng.normal(size=shape)], lambda t: t[0].transpose(axes)


def _case_sum(rng):
    shape = _shape(rng, 2, 3)
    axis = int(rng.integers(len(shape)))
    return [rng.normal(size=shape)], lambda t: t[0].sum(axis=axis)


def _case_mean(rng):
    shape = _shape(rng, 2, 3)
    axis = int(rng.integers(len(shape)))
    return [rng.normal(size=shape)], lambda t: t[0].mean(axis=axis, keepdims=True)


def _case_clip(rng):
    return [_away_from(rng, _shape(rng), [-1.0, 1.0])], lambda t: t[0].clip(-1.0, 1.0)


def _case_neg(rng):
    return [rng.normal(size=_shape(rng))], lambda t: -t[0]


PRIMITIVE_CASES = {
    "add": _case_binary("add"),
    "sub": _case_binary("sub"),
    "mul": _case_binary("mul"),
    "div": _case_binary("div"),
    "neg": _case_neg,
    "matmul": _case_matmul,
    "linear": _case_linear,
    "concat": _case_concat,
    "softmax": _case_softmax,
    "layer_norm": _case_layer_norm,
    "leaky_relu": _case_leaky_relu,
    "exp": _case_exp,
    "dropout": _case_dropout,
    "cumsum": _case_cumsum,
    "slice": _case_slice,
    "reshape": _case_reshape,
    "transpose": _case_transpose,
    "sum": _case_sum,
    "mean": _case_mean,
    "clip": _case_clip,
}


def primitive_gradient_error(kind: str, rng: np.random.Generator, h: float = 1e-5) -> float:
    """Gradient error of one random instance of primitive ``kind``.

    The primitive output is contracted with fixed random weights so every output
    element contributes to the scalar under test.
    """
    arrays, op = PRIMITIVE_CASES[kind](rng)
    out_shape = op([Tensor(a) for a in arrays]).shape
    weights = rng.normal(size=out_shape)

    def fn(tensors):
        return (op(tensors) * weights).sum()

    return gradient_error(fn, arrays, h)
