"""Reverse-mode automatic differentiation over dense float64 tensors.

The graph is recorded define-by-run: every operation on a Tensor creates a
new node holding references to its parents and a closure computing the local
backward rule. Calling ``backward(loss)`` walks the graph once in reverse
topological order and accumulates gradients into the variable leaves.

Broadcasting is deliberately restricted: elementwise ops accept operands of
identical shape, a python scalar, or a 1-D vector broadcast over the rows of
a 2-D matrix. Anything else raises ShapeError.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A computation left the valid numeric domain (log of <=0, NaN, ...)."""


# When False, operations do not record parents/backward closures. Used for
# inference-mode scoring where no gradients are needed.
_grad_enabled = True


class no_grad:
    """Context manager disabling graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-dimensional array of float64 values, node of the tape."""

    __slots__ = ("data", "grad", "_parents", "_backward", "variable", "name")

    def __init__(self, data, parents=(), backward=None, variable=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents if _grad_enabled else ()
        self._backward = backward if _grad_enabled else None
        self.variable = variable
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def __float__(self):
        return self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def variable(data, name=None):
    """Create a trainable leaf tensor."""
    return Tensor(data, variable=True, name=name)


def constant(data):
    return Tensor(data)


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _bcast_check(a, b, opname):
    """Validate the restricted broadcast rules, return the reducer for b."""
    if a.shape == b.shape:
        return None
    if b.ndim == 0:
        return "scalar"
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return "rows"
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_grad(g, mode):
    """Undo the broadcast applied to the second operand."""
    if mode is None:
        return g
    if mode == "scalar":
        return g.sum()
    return g.sum(axis=0)  # rows


def add(a, b):
    a, b = _lift(a), _lift(b)
    mode = _bcast_check(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        return g, _reduce_grad(g, mode)

    return Tensor(out, (a, b), bwd)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    mode = _bcast_check(a, b, "sub")
    out = a.data - b.data

    def bwd(g):
        return g, -_reduce_grad(g, mode)

    return Tensor(out, (a, b), bwd)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    mode = _bcast_check(a, b, "mul")
    out = a.data * b.data

    def bwd(g):
        return g * b.data, _reduce_grad(g * a.data, mode)

    return Tensor(out, (a, b), bwd)


def neg(a):
    a = _lift(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, (a, b), bwd)


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = _lift(a)
    # stable logistic: exp only ever sees non-positive arguments
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    a = _lift(a)
    out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericError("exp overflowed to non-finite values")
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a):
    a = _lift(a)
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    out = np.log(a.data)
    return Tensor(out, (a,), lambda g: (g / a.data,))


def softplus(a):
    """log(1+exp(x)) via the overflow-safe form max(x,0)+log1p(exp(-|x|))."""
    a = _lift(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    # d/dx softplus = sigmoid(x), reuse the stable form
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor(out, (a,), lambda g: (g * s,))


def clip(a, lo, hi):
    """Elementwise clamp; gradient is zero outside [lo, hi]."""
    a = _lift(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor(out, (a,), lambda g: (g * mask,))


def tsum(a, axis=None):
    a = _lift(a)
    out = a.data.sum(axis=axis)
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.repeat(np.expand_dims(g, axis), shape[axis], axis=axis),)

    return Tensor(out, (a,), bwd)


def tmean(a, axis=None):
    a = _lift(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def concat(tensors, axis=-1):
    """Concatenate along the last axis (or axis 0 for 1-D operands)."""
    tensors = [_lift(t) for t in tensors]
    nd = tensors[0].ndim
    if any(t.ndim != nd for t in tensors):
        raise ShapeError("concat: mixed ranks "
                         f"{[t.shape for t in tensors]}")
    ax = (nd - 1) if axis == -1 else axis
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    widths = [t.shape[ax] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor(out, tuple(tensors), bwd)


def slice_rows(a, start, stop):
    """Slice along the first axis."""
    a = _lift(a)
    out = a.data[start:stop]
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return Tensor(out, (a,), bwd)


def broadcast_rows(v, n):
    """Tile a 1-D vector into an [n, d] matrix."""
    v = _lift(v)
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got shape {v.shape}")
    out = np.broadcast_to(v.data, (n, v.shape[0])).copy()
    return Tensor(out, (v,), lambda g: (g.sum(axis=0),))


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss, variables=None):
    """Reverse accumulation from a scalar loss.

    Returns a dict mapping variable tensor id -> gradient ndarray, and also
    stores each gradient on the tensor's ``.grad``. When ``variables`` is
    given, every listed variable appears in the map, with a zero gradient if
    it does not participate in the loss.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.variable:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._backward = None  # free closures as we go
        node._parents = ()
    result = {}
    seen = set()
    for node in order:
        if node.variable and id(node) not in seen:
            seen.add(id(node))
            if node.grad is not None:
                result[id(node)] = node.grad
    if variables is not None:
        for v in variables:
            if id(v) not in result:
                result[id(v)] = np.zeros_like(v.data)
                v.grad = result[id(v)]
    return result


def zero_grads(variables):
    for v in variables:
        v.grad = None


def finite_difference_check(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. The error per coordinate is
    |analytic - central| / max(1, |analytic|); the max over coordinates is
    returned.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x0 = np.array(x.data, dtype=np.float64)
    var = variable(x0)
    out = f(var)
    backward(out, [var])
    analytic = var.grad.ravel()
    numeric = np.empty_like(analytic)
    flat = x0.ravel()
    for i in range(flat.size):
        bump = np.array(flat)
        bump[i] = flat[i] + h
        fp = float(f(Tensor(bump.reshape(x0.shape))).data)
        bump[i] = flat[i] - h
        fm = float(f(Tensor(bump.reshape(x0.shape))).data)
        numeric[i] = (fp - fm) / (2.0 * h)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise NumericError("non-finite value in gradient check")
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
