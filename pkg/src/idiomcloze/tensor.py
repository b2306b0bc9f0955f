"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

The op set is exactly what the cloze model needs: matmul, elementwise
add/multiply, dot, softmax, log, max-over-axis, layer norm, GELU,
embedding lookup, concatenate, masked fill, plus the reshaping glue
(reshape / transpose / sum / gather) required to batch a transformer.

Every op checks its output for NaN/Inf and raises ``NumericalError``
rather than propagating garbage.  Gradients of every op are verified
against central differences in the test suite.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class NumericalError(ArithmeticError):
    """Raised when an op produces NaN or Inf."""


class Tensor:
    """A dense float64 array with an optional gradient accumulator.

    Gradient bookkeeping: each non-leaf tensor remembers its parents and
    a backward closure mapping the upstream gradient to per-parent
    gradients.  ``backward()`` replays the recorded ops in reverse
    topological order, visiting each exactly once and accumulating
    additively.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ShapeError("backward", self.data.shape)
        topo = _toposort(self)
        pending = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad and (t._backward_fn is None or t.op == "leaf"):
                t.grad = g.copy() if t.grad is None else t.grad + g
            if t._backward_fn is not None:
                for parent, pg in t._backward_fn(g):
                    pg = np.asarray(pg, dtype=np.float64)
                    key = id(parent)
                    if key in pending:
                        pending[key] = pending[key] + pg
                    else:
                        pending[key] = pg


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op, parents, backward_fn):
    out = Tensor(data)
    if not np.isfinite(out.data).all():
        raise NumericalError(f"{op}: non-finite output")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    out.op = op
    return out


def _unbroadcast(grad, shape):
    """Sum the gradient of a broadcast result back to the operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    """Elementwise add; numpy broadcasting allowed (covers bias add)."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _result(data, "add", (a, b), backward)


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    """Elementwise multiply; broadcasting covers the vector-against-rows case."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def backward(g):
        return [(a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape))]

    return _result(data, "mul", (a, b), backward)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        return [(a, g * c)]

    return _result(a.data * c, "scale", (a,), backward)


def matmul(a, b):
    """Matrix product, batched over leading axes like numpy.matmul."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return [(a, _unbroadcast(ga, a.data.shape)), (b, _unbroadcast(gb, b.data.shape))]

    return _result(data, "matmul", (a, b), backward)


def dot(a, b):
    """Inner product of two 1-D vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError("dot", a.shape, b.shape)
    data = np.dot(a.data, b.data)

    def backward(g):
        return [(a, g * b.data), (b, g * a.data)]

    return _result(data, "dot", (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.data.shape).copy())]
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return [(a, np.broadcast_to(g, a.data.shape).copy())]

    return _result(data, "sum", (a,), backward)


def softmax(a, axis=-1):
    """Numerically-stable softmax (max-subtracted) along one axis."""
    a = as_tensor(a)
    if a.data.size == 0:
        raise ShapeError("softmax", a.shape)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return [(a, (g - inner) * y)]

    return _result(y, "softmax", (a,), backward)


def log(a):
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NumericalError("log: non-positive input")
    data = np.log(a.data)

    def backward(g):
        return [(a, g / a.data)]

    return _result(data, "log", (a,), backward)


def clamp_min(a, lo):
    """max(x, lo); gradient passes only where x was not clamped."""
    a = as_tensor(a)
    lo = float(lo)
    keep = a.data >= lo

    def backward(g):
        return [(a, g * keep)]

    return _result(np.maximum(a.data, lo), "clamp_min", (a,), backward)


def max_over_axis(a, axis=-1):
    """Max along one axis.  Returns (values, argmax indices).

    Ties break to the lowest index; backward routes the full upstream
    gradient to that single index per reduced slice.
    """
    a = as_tensor(a)
    if a.data.shape[axis] == 0:
        raise ShapeError("max_over_axis", a.shape)
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return [(a, ga)]

    return _result(data, "max_over_axis", (a,), backward), idx


def layer_norm(a, gain, bias, eps=1e-12):
    """Normalize over the last axis, then apply elementwise gain and bias."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm", a.shape, gain.shape, bias.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        ggain = _unbroadcast(g * xhat, gain.data.shape)
        gbias = _unbroadcast(g, bias.data.shape)
        gx = g * gain.data
        gxhat_mean = gx.mean(axis=-1, keepdims=True)
        gxhat_dot = (gx * xhat).mean(axis=-1, keepdims=True)
        ga = inv * (gx - gxhat_mean - xhat * gxhat_dot)
        return [(a, ga), (gain, ggain), (bias, gbias)]

    return _result(data, "layer_norm", (a, gain, bias), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """GELU, tanh approximation (the BERT-family activation)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
        return [(a, g * da)]

    return _result(data, "gelu", (a,), backward)


def embedding(table, ids):
    """Row lookup: ids of any shape index the first axis of the table."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {table.data.shape[0]} rows")
    data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return [(table, gt)]

    return _result(data, "embedding", (table,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return list(zip(tensors, pieces))

    return _result(data, "concat", tuple(tensors), backward)


def masked_fill(a, mask, value):
    """Replace entries where mask is True by a constant; no gradient there."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    data = np.where(mask, float(value), a.data)

    def backward(g):
        return [(a, np.where(mask, 0.0, g))]

    return _result(data, "masked_fill", (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        return [(a, g.reshape(old))]

    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _result(data, "reshape", (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)

    def backward(g):
        return [(a, g.transpose(inv))]

    return _result(a.data.transpose(axes), "transpose", (a,), backward)


def gather_positions(x, positions):
    """Pick one row per leading index: x (B, T, d), positions (B,) -> (B, d)."""
    x = as_tensor(x)
    positions = np.asarray(positions)
    B = x.data.shape[0]
    data = x.data[np.arange(B), positions]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[np.arange(B), positions] = g
        return [(x, gx)]

    return _result(data, "gather_positions", (x,), backward)


def gather_last(x, idx):
    """Pick one entry along the last axis per leading index."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    lead = np.indices(idx.shape)
    data = x.data[(*lead, idx)]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (*lead, idx), g)
        return [(x, gx)]

    return _result(data, "gather_last", (x,), backward)


def check_gradient(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor.  The error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    x = as_tensor(x)
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise ShapeError("check_gradient", out.shape)
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(probe.data.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(probe.data.copy())).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    numeric = numeric.reshape(probe.data.shape)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
