"""Minimal dense tensor library with reverse-mode automatic differentiation.

Every differentiable operation is a *primitive* registered by name. A primitive
implements ``forward`` on plain ``numpy`` arrays and ``backward`` mapping the
upstream gradient to one gradient per input. ``apply_primitive`` runs the
forward pass and, when any input requires gradients, links the output to its
inputs so that :meth:`Tensor.backward` can traverse the graph in reverse
topological order.

All values are stored as 64-bit floats.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Any, Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64
LEAKY_SLOPE = 0.1

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


class AutodiffError(Exception):
    """Base class for errors raised by the tensor engine."""


class ShapeError(AutodiffError, ValueError):
    pass


class UnknownPrimitiveError(AutodiffError, KeyError):
    pass


class Node:
    """One recorded primitive application."""

    __slots__ = ("primitive", "inputs", "ctx")

    def __init__(self, primitive: "Primitive", inputs: tuple["Tensor", ...], ctx: dict):
        self.primitive = primitive
        self.inputs = inputs
        self.ctx = ctx


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=DTYPE, copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return apply_primitive("add", [self, other])

    def __radd__(self, other):
        return apply_primitive("add", [other, self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, other])

    def __rsub__(self, other):
        return apply_primitive("sub", [other, self])

    def __mul__(self, other):
        return apply_primitive("mul", [self, other])

    def __rmul__(self, other):
        return apply_primitive("mul", [other, self])

    def __truediv__(self, other):
        return apply_primitive("div", [self, other])

    def __rtruediv__(self, other):
        return apply_primitive("div", [other, self])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __rmatmul__(self, other):
        return apply_primitive("matmul", [other, self])

    def __getitem__(self, index):
        return apply_primitive("slice", [self], index=index)

    # -- method forms of primitives ---------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply_primitive("transpose", [self], axes=axes or None)

    def exp(self):
        return apply_primitive("exp", [self])

    def softmax(self, axis: int = -1):
        return apply_primitive("softmax", [self], axis=axis)

    def leaky_relu(self, slope: float = LEAKY_SLOPE):
        return apply_primitive("leaky_relu", [self], slope=slope)

    def cumsum(self, axis: int = 0):
        return apply_primitive("cumsum", [self], axis=axis)

    def clip(self, low: float, high: float):
        return apply_primitive("clip", [self], low=low, high=high)

    # -- reverse pass ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

class Primitive:
    name = "?"
    arity: int | None = 1  # None means variadic

    def forward(self, ctx: dict, *xs: np.ndarray, **attrs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, ctx: dict, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError


PRIMITIVES: dict[str, Primitive] = {}


def register(name: str, arity: int | None = 1) -> Callable[[type], type]:
    def deco(cls):
        cls.name = name
        cls.arity = arity
        PRIMITIVES[name] = cls()
        return cls
    return deco


def apply_primitive(kind: str, inputs: Sequence[Any], **attrs) -> Tensor:
    """Run primitive ``kind`` on ``inputs`` and record it for backward."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise UnknownPrimitiveError(
            f"unknown primitive {kind!r}; known: {sorted(PRIMITIVES)}") from None
    tensors = tuple(as_tensor(x) for x in inputs)
    if prim.arity is not None and len(tensors) != prim.arity:
        raise ShapeError(f"{kind}: expected {prim.arity} inputs, got {len(tensors)}")
    ctx: dict = {}
    out = Tensor(prim.forward(ctx, *(t.data for t in tensors), **attrs))
    if _grad_enabled and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out.node = Node(prim, tensors, ctx)
    return out


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


@register("add", 2)
class Add(Primitive):
    def forward(self, ctx, a, b):
        _broadcast_shape(self.name, a, b)
        ctx["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, ctx, g):
        sa, sb = ctx["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


@register("sub", 2)
class Sub(Primitive):
    def forward(self, ctx, a, b):
        _broadcast_shape(self.name, a, b)
        ctx["shapes"] = (a.shape, b.shape)
        return a - b

    def backward(self, ctx, g):
        sa, sb = ctx["shapes"]
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


@register("mul", 2)
class Mul(Primitive):
    def forward(self, ctx, a, b):
        _broadcast_shape(self.name, a, b)
        ctx["ab"] = (a, b)
        return a * b

    def backward(self, ctx, g):
        a, b = ctx["ab"]
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("div", 2)
class Div(Primitive):
    def forward(self, ctx, a, b):
        _broadcast_shape(self.name, a, b)
        ctx["ab"] = (a, b)
        return a / b

    def backward(self, ctx, g):
        a, b = ctx["ab"]
        ga = g / b
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a / b, b.shape)


@register("neg")
class Neg(Primitive):
    def forward(self, ctx, a):
        return -a

    def backward(self, ctx, g):
        return (-g,)


@register("matmul", 2)
class MatMul(Primitive):
    """Batched matrix product with numpy broadcasting over leading axes."""

    def forward(self, ctx, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul: inner dimensions differ, {a.shape} @ {b.shape} "
                f"({a.shape[-1]} != {b.shape[-2]})")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: batch shapes {a.shape[:-2]} and {b.shape[:-2]} "
                             "do not broadcast") from None
        ctx["ab"] = (a, b)
        return a @ b

    def backward(self, ctx, g):
        a, b = ctx["ab"]
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@register("linear", 3)
class Linear(Primitive):
    """Affine map ``x @ W + b`` over the last axis of ``x``."""

    def forward(self, ctx, x, w, b):
        if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
            raise ShapeError(f"linear: incompatible shapes x{x.shape}, W{w.shape}, b{b.shape}")
        x2 = x.reshape(-1, x.shape[-1])
        ctx["xw"] = (x2, w, x.shape)
        out = x2 @ w
        out += b
        return out.reshape(x.shape[:-1] + (w.shape[1],))

    def backward(self, ctx, g):
        x2, w, shape = ctx["xw"]
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ w.T).reshape(shape), x2.T @ g2, g2.sum(axis=0)


@register("concat", None)
class Concat(Primitive):
    def forward(self, ctx, *xs, axis: int = -1):
        if not xs:
            raise ShapeError("concat: needs at least one input")
        ref = xs[0].shape
        ax = axis % len(ref)
        for x in xs[1:]:
            if x.ndim != len(ref) or any(
                    n != m for i, (n, m) in enumerate(zip(x.shape, ref)) if i != ax):
                raise ShapeError(f"concat: shapes {[x.shape for x in xs]} differ off axis {axis}")
        ctx["splits"] = np.cumsum([x.shape[ax] for x in xs])[:-1]
        ctx["axis"] = ax
        return np.concatenate(xs, axis=ax)

    def backward(self, ctx, g):
        return np.split(g, ctx["splits"], axis=ctx["axis"])


@register("softmax")
class Softmax(Primitive):
    def forward(self, ctx, x, axis: int = -1):
        z = np.exp(x - x.max(axis=axis, keepdims=True))
        y = z / z.sum(axis=axis, keepdims=True)
        ctx["y"], ctx["axis"] = y, axis
        return y

    def backward(self, ctx, g):
        y, axis = ctx["y"], ctx["axis"]
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


@register("layer_norm", None)
class LayerNorm(Primitive):
    """Normalise the last axis to zero mean / unit variance, then optional affine.

    Inputs are ``x`` or ``(x, gamma, beta)``.
    """

    def forward(self, ctx, x, *affine, eps: float = 1e-5):
        if len(affine) not in (0, 2):
            raise ShapeError("layer_norm: expects x or (x, gamma, beta)")
        if affine and any(p.shape != x.shape[-1:] for p in affine):
            raise ShapeError(f"layer_norm: affine shapes {[p.shape for p in affine]} "
                             f"do not match feature width {x.shape[-1]}")
        avg = np.full(x.shape[-1], 1.0 / x.shape[-1])
        xc = x - (x @ avg)[..., None]
        inv = 1.0 / np.sqrt(((xc * xc) @ avg)[..., None] + eps)
        xhat = xc * inv
        ctx["xhat"], ctx["inv"], ctx["affine"], ctx["avg"] = xhat, inv, affine, avg
        if affine:
            gamma, beta = affine
            return xhat * gamma + beta
        return xhat

    def backward(self, ctx, g):
        xhat, inv, affine, avg = ctx["xhat"], ctx["inv"], ctx["affine"], ctx["avg"]
        if affine:
            gamma = affine[0]
            n = xhat.shape[-1]
            g2 = g.reshape(-1, n)
            ggamma = np.einsum("ij,ij->j", g2, xhat.reshape(-1, n))
            gbeta = g2.sum(axis=0)
            g = g * gamma
        gx = g - (g @ avg)[..., None]
        gx -= xhat * ((g * xhat) @ avg)[..., None]
        gx *= inv
        if affine:
            return gx, ggamma, gbeta
        return (gx,)


@register("leaky_relu")
class LeakyReLU(Primitive):
    def forward(self, ctx, x, slope: float = LEAKY_SLOPE):
        # bool -> float arithmetic is slow in numpy, so cast explicitly
        scale = (x > 0).astype(DTYPE)
        scale *= 1.0 - slope
        scale += slope
        ctx["scale"] = scale
        return x * scale

    def backward(self, ctx, g):
        return (g * ctx["scale"],)


@register("exp")
class Exp(Primitive):
    def forward(self, ctx, x):
        y = np.exp(x)
        ctx["y"] = y
        return y

    def backward(self, ctx, g):
        return (g * ctx["y"],)


@register("dropout")
class Dropout(Primitive):
    """Inverted dropout. Identity unless ``training`` is true and ``rate > 0``."""

    def forward(self, ctx, x, rate: float = 0.1, rng: np.random.Generator | None = None,
                training: bool = True):
        if not training or rate <= 0.0:
            ctx["scale"] = None
            return x.copy()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout: rate must lie in [0, 1), got {rate}")
        if rng is None:
            raise ValueError("dropout: a seeded generator is required in training mode")
        scale = (rng.random(x.shape, dtype=np.float32) >= rate).astype(DTYPE)
        scale *= 1.0 / (1.0 - rate)
        ctx["scale"] = scale
        return x * scale

    def backward(self, ctx, g):
        scale = ctx["scale"]
        return (g if scale is None else g * scale,)


@register("cumsum")
class CumSum(Primitive):
    def forward(self, ctx, x, axis: int = 0):
        ctx["axis"] = axis
        return np.cumsum(x, axis=axis)

    def backward(self, ctx, g):
        axis = ctx["axis"]
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)


@register("slice")
class Slice(Primitive):
    def forward(self, ctx, x, index=None):
        ctx["shape"], ctx["index"] = x.shape, index
        return np.array(x[index], dtype=DTYPE)

    def backward(self, ctx, g):
        out = np.zeros(ctx["shape"], dtype=DTYPE)
        index = ctx["index"]
        if _is_basic_index(index):
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice))
               for p in parts)


@register("reshape")
class Reshape(Primitive):
    def forward(self, ctx, x, shape=()):
        ctx["shape"] = x.shape
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(self, ctx, g):
        return (g.reshape(ctx["shape"]),)


@register("transpose")
class Transpose(Primitive):
    def forward(self, ctx, x, axes=None):
        if axes is not None and sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
            raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
        ctx["axes"] = axes
        return np.transpose(x, axes)

    def backward(self, ctx, g):
        axes = ctx["axes"]
        return (np.transpose(g, None if axes is None else np.argsort(axes)),)


@register("sum")
class Sum(Primitive):
    def forward(self, ctx, x, axis=None, keepdims: bool = False):
        ctx["shape"], ctx["axis"], ctx["keepdims"] = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, ctx, g):
        shape, axis, keepdims = ctx["shape"], ctx["axis"], ctx["keepdims"]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)


@register("mean")
class Mean(Primitive):
    def forward(self, ctx, x, axis=None, keepdims: bool = False):
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims))
        ctx["shape"], ctx["axis"], ctx["keepdims"] = x.shape, axis, keepdims
        ctx["count"] = x.size // max(out.size, 1)
        return out

    def backward(self, ctx, g):
        shape, axis, keepdims = ctx["shape"], ctx["axis"], ctx["keepdims"]
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / ctx["count"], shape).copy(),)


@register("clip")
class Clip(Primitive):
    """Clamp to ``[low, high]``; gradient is zero where the clamp is active."""

    def forward(self, ctx, x, low: float = -np.inf, high: float = np.inf):
        ctx["inside"] = ((x >= low) & (x <= high)).astype(DTYPE)
        return np.clip(x, low, high)

    def backward(self, ctx, g):
        return (g * ctx["inside"],)


# ---------------------------------------------------------------------------
# functional helpers
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return apply_primitive("concat", list(tensors), axis=axis)


def linear(x, w, b) -> Tensor:
    return apply_primitive("linear", [x, w, b])


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    inputs = [x] if gamma is None else [x, gamma, beta]
    return apply_primitive("layer_norm", inputs, eps=eps)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    return apply_primitive("dropout", [x], rate=rate, rng=rng, training=training)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root`` through recorded nodes, inputs first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf tensor."""
    if grad is None:
        if loss.size != 1:
            raise AutodiffError(f"backward: loss must be scalar, got shape {loss.shape}")
        grad = np.ones(loss.shape, dtype=DTYPE)
    if not loss.requires_grad:
        raise AutodiffError("backward: loss does not depend on any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=DTYPE)}
    for t in reversed(topological_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.primitive.backward(t.node.ctx, g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
