"""Minimal reverse-mode autodiff over dense numpy arrays.

Tensors are immutable once produced; backward closures capture the numpy
arrays they need. Only the ops this project uses are provided (no general
graph machinery). Dtype follows the data: float32 for training, float64
for gradient checking.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    """A dense array plus an optional backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        if isinstance(data, np.generic):
            data = np.asarray(data)  # keep numpy scalar dtype (0-d results)
        elif not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor (scalar unless grad given)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar tensor")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad_graph(self):
        """Clear accumulated grads in the subgraph rooted here."""
        stack, seen = [self], set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            node.grad = None
            stack.extend(node._parents)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def item(self):
        return float(self.data.reshape(-1)[0])


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None and not isinstance(x, (np.ndarray, np.generic)):
        dtype = np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Sum gradient g down to the given broadcasted-from shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _coerce(a, b):
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    return a, b


def add(a, b):
    a, b = _coerce(a, b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def mul(a, b):
    a, b = _coerce(a, b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def matmul(a, b):
    a, b = _coerce(a, b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accum(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accum(_unbroadcast(gb, b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def power(a, p):
    a = as_tensor(a)
    out_data = a.data**p

    def bwd(g):
        if a.requires_grad:
            a._accum(g * p * a.data ** (p - 1))

    return Tensor(out_data, parents=(a,), backward=bwd)


def square(a):
    return power(a, 2.0)


def sqrt(a):
    return power(a, 0.5)


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * out_data)

    return Tensor(out_data, parents=(a,), backward=bwd)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return Tensor(out_data, parents=(a,), backward=bwd)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * (1.0 - out_data**2))

    return Tensor(out_data, parents=(a,), backward=bwd)


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            a._accum(g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(a,), backward=bwd)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    out_data = a.data * mask

    def bwd(g):
        if a.requires_grad:
            a._accum(g * mask)

    return Tensor(out_data, parents=(a,), backward=bwd)


def softplus(a):
    a = as_tensor(a)
    # stable: log(1+exp(x)) = max(x,0) + log1p(exp(-|x|))
    out_data = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))

    def bwd(g):
        if a.requires_grad:
            a._accum(g / (1.0 + np.exp(-a.data)))

    return Tensor(out_data, parents=(a,), backward=bwd)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(gg, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).astype(a.data.dtype))

    return Tensor(np.asarray(out_data), parents=(a,), backward=bwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    return Tensor(out_data, parents=(a,), backward=bwd)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return Tensor(out_data, parents=tuple(tensors), backward=bwd)


def index(a, idx):
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

    return Tensor(out_data, parents=(a,), backward=bwd)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - logsumexp
    probs = np.exp(out_data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g - probs * g.sum(axis=axis, keepdims=True))

    return Tensor(out_data, parents=(a,), backward=bwd)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


class _SurrogateMemo:
    """Freezes stop-gradient values across repeated surrogate evaluations.

    Finite differences on a loss with sg(...) must hold the sg'ed branches
    constant, otherwise the numeric gradient includes contributions the
    surrogate deliberately drops. Calls are matched by order, so the loss
    must be structurally deterministic.
    """

    def __init__(self):
        self.values = []
        self.idx = 0

    def begin_pass(self):
        self.idx = 0

    def lookup(self, data):
        if self.idx < len(self.values):
            val = self.values[self.idx]
        else:
            val = data.copy()
            self.values.append(val)
        self.idx += 1
        return val


_surrogate_memo = None


class surrogate_mode:
    """Context manager enabling frozen stop-gradient semantics."""

    def __enter__(self):
        global _surrogate_memo
        _surrogate_memo = _SurrogateMemo()
        return _surrogate_memo

    def __exit__(self, *exc):
        global _surrogate_memo
        _surrogate_memo = None
        return False


def begin_surrogate_pass():
    if _surrogate_memo is not None:
        _surrogate_memo.begin_pass()


def stop_gradient(a):
    """Identity forward, zero gradient backward."""
    a = as_tensor(a)
    if _surrogate_memo is not None:
        return Tensor(_surrogate_memo.lookup(a.data).copy())
    return Tensor(a.data.copy())


def straight_through(a, value):
    """Forward returns `value`; backward passes the gradient to `a` unchanged.

    Standard straight-through estimator for discrete selections
    (quantized codes); `value` itself receives no gradient here.
    """
    a = as_tensor(a)
    value = as_tensor(value)
    if a.data.shape != value.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {value.data.shape}")
    if _surrogate_memo is not None:
        # surrogate form a + frozen(value - a): finite differences then see
        # the identity Jacobian this estimator defines
        delta = _surrogate_memo.lookup(value.data - a.data)
        return add(a, Tensor(delta.copy()))

    def bwd(g):
        if a.requires_grad:
            a._accum(g)

    return Tensor(value.data.copy(), parents=(a,), backward=bwd)
