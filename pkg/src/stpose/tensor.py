"""Dense float64 tensors with a define-by-run reverse-mode graph.

Every operation eagerly computes its value with numpy and, when any input
requires gradients, records a vector-Jacobian closure. ``Tensor.backward``
walks the recorded graph in reverse topological order and accumulates
gradients into the leaves. Tensors are treated as immutable once created;
only ``grad`` buffers mutate.

Shape discipline: elementwise operations require exactly matching shapes
(use ``expand`` for explicit broadcasting); only ``matmul`` broadcasts its
leading batch axes.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _f64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _f64(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of the same values, cut off from the graph."""
        return Tensor(self.data)

    def clear_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar. Calling backward again on the same graph
        adds to the previously accumulated gradients unless they are cleared.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(id(parent))
                pending[id(parent)] = pg if prev is None else prev + pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add_scalar(self, other) if isinstance(other, (int, float)) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_scalar(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / other) if isinstance(other, (int, float)) else div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method mirrors ---------------------------------------------------

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, perm):
        return transpose(self, perm)

    def slice(self, axis, start, stop):
        return slice_axis(self, axis, start, stop)

    def expand(self, shape):
        return expand(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _result(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack[-1]
        if idx < len(node._parents):
            stack[-1] = (node, idx + 1)
            child = node._parents[idx]
            if id(child) not in visited:
                visited.add(id(child))
                stack.append((child, 0))
        else:
            order.append(node)
            stack.pop()
    return order


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# -- construction --------------------------------------------------------


def build(shape: Sequence[int], values: Iterable[float], requires_grad: bool = False) -> Tensor:
    """Row-major tensor from flat values; product(shape) must match."""
    flat = _f64(list(values)).ravel()
    n = int(np.prod(shape)) if len(shape) else 1
    if flat.size != n:
        raise ShapeError(f"{flat.size} values cannot fill shape {tuple(shape)}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


# -- relayout ------------------------------------------------------------


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}")
    return _result(t.data.reshape(shape), (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor, perm) -> Tensor:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise ShapeError(f"{perm} is not a permutation of rank-{t.ndim} axes")
    inv = np.argsort(perm)
    return _result(
        np.ascontiguousarray(np.transpose(t.data, perm)),
        (t,),
        lambda g: (np.transpose(g, inv),),
    )


def concat(ts: Sequence[Tensor], axis: int) -> Tensor:
    if not ts:
        raise ShapeError("concat needs at least one input")
    axis = _norm_axis(axis, ts[0].ndim)
    data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(data, tuple(ts), vjp)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _norm_axis(axis, t.ndim)
    if not 0 <= start < stop <= t.shape[axis]:
        raise ShapeError(f"empty or out-of-range slice [{start}:{stop}) on axis {axis} of {t.shape}")
    index = tuple(slice(None) if a != axis else slice(start, stop) for a in range(t.ndim))

    def vjp(g):
        full = np.zeros_like(t.data)
        full[index] = g
        return (full,)

    return _result(t.data[index].copy(), (t,), vjp)


def expand(t: Tensor, shape) -> Tensor:
    """Explicit broadcast: prepend axes and widen size-1 axes to ``shape``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < t.ndim:
        raise ShapeError(f"expand cannot drop axes: {t.shape} -> {shape}")
    lead = len(shape) - t.ndim
    for have, want in zip(t.shape, shape[lead:]):
        if have != want and have != 1:
            raise ShapeError(f"cannot expand {t.shape} to {shape}")
    try:
        data = np.broadcast_to(t.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def vjp(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        ones = tuple(a for a, n in enumerate(t.shape) if n == 1 and g.shape[a] != 1)
        if ones:
            g = g.sum(axis=ones, keepdims=True)
        return (g,)

    return _result(data, (t,), vjp)


# -- elementwise -----------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} requires matching shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "div")
    return _result(a.data / b.data, (a, b), lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def neg(t: Tensor) -> Tensor:
    return _result(-t.data, (t,), lambda g: (-g,))


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(t.data * c, (t,), lambda g: (g * c,))


def add_scalar(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(t.data + c, (t,), lambda g: (g,))


def sqrt(t: Tensor) -> Tensor:
    out = np.sqrt(t.data)
    return _result(out, (t,), lambda g: (g * 0.5 / out,))


def sin(t: Tensor) -> Tensor:
    return _result(np.sin(t.data), (t,), lambda g: (g * np.cos(t.data),))


def cos(t: Tensor) -> Tensor:
    return _result(np.cos(t.data), (t,), lambda g: (-g * np.sin(t.data),))


def sigmoid(t: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-t.data))
    return _result(out, (t,), lambda g: (g * out * (1.0 - out),))


def gelu(t: Tensor) -> Tensor:
    """Exact erf form, 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result(out, (t,), vjp)


def atan2(y: Tensor, x: Tensor) -> Tensor:
    _check_same_shape(y, x, "atan2")
    denom = y.data * y.data + x.data * x.data
    return _result(
        np.arctan2(y.data, x.data),
        (y, x),
        lambda g: (g * x.data / denom, -g * y.data / denom),
    )


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select; ``mask`` is a plain boolean array, not a tensor."""
    _check_same_shape(a, b, "where")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _result(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
    )


# -- reductions -----------------------------------------------------------


def _axis_tuple(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (_norm_axis(axis, ndim),)
    return tuple(_norm_axis(a, ndim) for a in axis)


def reduce_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, t.ndim)
    data = t.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, t.shape).copy(),)

    return _result(data, (t,), vjp)


def reduce_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, t.ndim)
    count = int(np.prod([t.shape[a] for a in axes])) if axes else 1
    data = t.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, t.shape).copy(),)

    return _result(data, (t,), vjp)


def vecnorm(t: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along one axis.

    The gradient at an exactly-zero vector is taken as 0 (the minimum-norm
    subgradient), so norm penalties on zero-initialized parameters stay finite.
    """
    axis = _norm_axis(axis, t.ndim)
    n = np.sqrt((t.data * t.data).sum(axis=axis, keepdims=True))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        unit = np.divide(t.data, n, out=np.zeros_like(t.data), where=n > 0.0)
        return (g * unit,)

    return _result(n if keepdims else n.squeeze(axis), (t,), vjp)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``."""
    axis = _norm_axis(axis, t.ndim)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (t,), vjp)


# -- linear algebra --------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    ones = tuple(a for a, n in enumerate(shape) if n == 1 and g.shape[a] != 1)
    if ones:
        g = g.sum(axis=ones, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product batched over (broadcastable) leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner extents disagree: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _result(data, (a, b), vjp)


# -- composites ------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},)")
    mu = reduce_mean(x, axis=-1, keepdims=True)
    xc = sub(x, expand(mu, x.shape))
    var = reduce_mean(mul(xc, xc), axis=-1, keepdims=True)
    xhat = div(xc, expand(sqrt(add_scalar(var, eps)), x.shape))
    pshape = (1,) * (x.ndim - 1) + (d,)
    return add(mul(xhat, expand(reshape(gain, pshape), x.shape)),
               expand(reshape(bias, pshape), x.shape))


def stack_last(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new trailing axis."""
    shape = parts[0].shape + (1,)
    return concat([reshape(p, shape) for p in parts], axis=-1)
