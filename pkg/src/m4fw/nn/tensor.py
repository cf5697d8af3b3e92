"""A deliberately small reverse-mode autodiff engine over numpy arrays.

Every primitive takes an optional :class:`~m4fw.nn.trace.OpTrace` and, when
given one, appends an entry with its operator kind and FLOP count.  FLOP
convention: an (m x k) @ (k x n) product costs 2*m*k*n; elementwise and
normalisation primitives cost one FLOP per output element; pure data movement
(Embedding, Transpose, Concat, Slice) costs zero.  Head split/merge reshapes
are layout views and are not traced.
"""

from __future__ import annotations

import math

import numpy as np

from .trace import OpTrace

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=DTYPE)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def _record(trace: OpTrace | None, kind: str, flops: int, shape) -> None:
    if trace is not None:
        trace.record(kind, flops, shape)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b, trace: OpTrace | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"dimension mismatch: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)
    m, k = a.data.shape[-2], a.data.shape[-1]
    n = b.data.shape[-1]
    batch = int(np.prod(out.shape[:-2])) if out.ndim > 2 else 1
    _record(trace, "MatMul", 2 * m * k * n * batch, out.shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, gb)

    return _make(out, (a, b), backward)


def transpose(x, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, -1, -2)
    _record(trace, "Transpose", 0, out.shape)
    return _make(out, (x,), lambda g: _accum(x, np.swapaxes(g, -1, -2)))


# -- elementwise --------------------------------------------------------------

def add(a, b, trace: OpTrace | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    _record(trace, "Add", out.size, out.shape)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out, (a, b), backward)


def mul(a, b, trace: OpTrace | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    _record(trace, "Mul", out.size, out.shape)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _make(out, (a, b), backward)


def scale(x, c: float, trace: OpTrace | None = None) -> Tensor:
    """Multiply by a Python scalar (traced as Mul)."""
    x = as_tensor(x)
    out = x.data * c
    _record(trace, "Mul", out.size, out.shape)
    return _make(out, (x,), lambda g: _accum(x, g * c))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    v = x.data
    v2 = v * v  # explicit products; float pow is far slower
    inner = _GELU_C * (v + 0.044715 * v2 * v)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)
    _record(trace, "GELU", out.size, out.shape)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * d_inner
        _accum(x, g * d)

    return _make(out, (x,), backward)


def tanh(x, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    _record(trace, "Tanh", out.size, out.shape)
    return _make(out, (x,), lambda g: _accum(x, g * (1.0 - out**2)))


def sigmoid(x, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    _record(trace, "Sigmoid", out.size, out.shape)
    return _make(out, (x,), lambda g: _accum(x, g * out * (1.0 - out)))


def sin(x, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    out = np.sin(x.data)
    _record(trace, "Sin", out.size, out.shape)
    return _make(out, (x,), lambda g: _accum(x, g * np.cos(x.data)))


# -- normalisation / reductions -------------------------------------------------

def softmax(x, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    _record(trace, "Softmax", out.size, out.shape)

    def backward(g):
        _accum(x, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _make(out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5, trace: OpTrace | None = None) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _record(trace, "LayerNorm", out.size, out.shape)

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, g * xhat)
        if beta.requires_grad:
            _accum(beta, g)
        if x.requires_grad:
            gx = g * gamma.data
            n = x.data.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            _accum(x, dx)

    return _make(out, (x, gamma, beta), backward)


def mean(x, axis: int = -2, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    _record(trace, "ReduceMean", x.data.size, out.shape)
    n = x.data.shape[axis]

    def backward(g):
        _accum(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.data.shape))

    return _make(out, (x,), backward)


def masked_mean(x, mask, trace: OpTrace | None = None) -> Tensor:
    """Mean over the token axis counting only positions where ``mask`` is true.

    ``x`` is (..., tokens, dim) and ``mask`` is (..., tokens).  Traced as ReduceMean.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=DTYPE)
    counts = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    w = (m / counts)[..., None]
    out = (x.data * w).sum(axis=-2)
    _record(trace, "ReduceMean", x.data.size, out.shape)
    return _make(out, (x,), lambda g: _accum(x, np.expand_dims(g, -2) * w))


def l2_normalize(x, eps: float = 1e-12, trace: OpTrace | None = None) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt((x.data**2).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom
    _record(trace, "LpNormalization", out.size, out.shape)

    def backward(g):
        _accum(x, (g - out * (g * out).sum(axis=-1, keepdims=True)) / denom)

    return _make(out, (x,), backward)


# -- data movement ------------------------------------------------------------

def embedding(table, ids, trace: OpTrace | None = None) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("token id out of range")
    out = table.data[ids]
    _record(trace, "Embedding", 0, out.shape)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accum(table, gt)

    return _make(out, (table,), backward)


def concat(xs, axis: int = -2, trace: OpTrace | None = None) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    _record(trace, "Concat", 0, out.shape)
    sizes = np.cumsum([x.data.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accum(x, part)

    return _make(out, tuple(xs), backward)


def slice_rows(x, start: int, stop: int, trace: OpTrace | None = None) -> Tensor:
    """Slice along the token (second-to-last) axis."""
    x = as_tensor(x)
    out = x.data[..., start:stop, :]
    _record(trace, "Slice", 0, out.shape)

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop, :] = g
        _accum(x, full)

    return _make(out, (x,), backward)


def view(x, shape_fn, inverse_fn) -> Tensor:
    """Untraced layout change (head split/merge)."""
    x = as_tensor(x)
    out = shape_fn(x.data)
    return _make(out, (x,), lambda g: _accum(x, inverse_fn(g)))


def argmax(x, trace: OpTrace | None = None) -> np.ndarray:
    x = as_tensor(x)
    out = np.argmax(x.data, axis=-1)
    _record(trace, "ArgMax", x.data.size, np.shape(out))
    return out


# -- losses (never traced: training-only) ----------------------------------------

def cross_entropy(logits, targets, ignore_index: int | None = None) -> Tensor:
    """Mean token-level cross-entropy; ``targets`` are integer class ids.

    Positions whose target equals ``ignore_index`` are excluded from the mean.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    flat = logits.data.reshape(-1, logits.data.shape[-1])
    tf = t.reshape(-1)
    keep = np.ones(tf.size, dtype=bool) if ignore_index is None else tf != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise ValueError("no target positions to score")
    rows = np.nonzero(keep)[0]
    z = flat - flat.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = -logp[rows, tf[rows]].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, tf[rows]] -= 1.0
        p[~keep] = 0.0
        _accum(logits, (g * p / n).reshape(logits.data.shape))

    return _make(np.asarray(loss), (logits,), backward)
