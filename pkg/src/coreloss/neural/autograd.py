"""Minimal reverse-mode differentiation over numpy arrays.

Every operation returns a ``Tensor`` that remembers its parents and a closure
that pushes the output gradient back to them. ``Tensor.backward`` walks the
graph in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import DataError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Run operations without recording the graph (inference)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """(..., n, k) @ (k, m); the right operand is a 2-D weight matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DataError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (np.where(out > 0, g, 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))  # overflow-free form of 1/(1+e^-x)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out**2),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def select(x: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing, e.g. one time step ``x[:, t, :]``."""

    def backward(g):
        out = np.zeros_like(x.data)
        out[key] = g
        return (out,)

    return _make(x.data[key], (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.asarray(x.data.mean()), (x,), lambda g: (np.full(x.shape, g / n),))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    diff = pred.data - target
    n = diff.size
    return _make(np.asarray(np.mean(diff**2)), (pred,), lambda g: (g * 2.0 * diff / n,))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def embedding(table: Tensor, index) -> Tensor:
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise DataError(f"embedding index out of range for vocabulary of {table.shape[0]}")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(table.data[index], (table,), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 1) -> Tensor:
    """Cross-correlation of (B, C_in, L) with (C_out, C_in, K) plus bias."""
    B, C, L = x.shape
    O, C_w, K = weight.shape
    if C != C_w or bias.shape != (O,):
        raise DataError(f"conv1d shape mismatch: input {x.shape}, kernel {weight.shape}, bias {bias.shape}")
    L_out = L + 2 * padding - K + 1
    if L_out <= 0:
        raise DataError("conv1d input shorter than kernel")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    cols = np.stack([xp[:, :, k : k + L_out] for k in range(K)], axis=2)  # B, C, K, L_out
    cols2 = cols.transpose(1, 2, 0, 3).reshape(C * K, B * L_out)
    w2 = weight.data.reshape(O, C * K)
    out = (w2 @ cols2).reshape(O, B, L_out).transpose(1, 0, 2) + bias.data[None, :, None]

    def backward(g):
        g2 = g.transpose(1, 0, 2).reshape(O, B * L_out)
        gw = (g2 @ cols2.T).reshape(weight.shape)
        gb = g.sum(axis=(0, 2))
        if not x.requires_grad:
            return None, gw, gb
        gcols = (w2.T @ g2).reshape(C, K, B, L_out).transpose(2, 0, 1, 3)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, :, k : k + L_out] += gcols[:, :, k, :]
        gx = gxp[:, :, padding : padding + L] if padding else gxp
        return gx, gw, gb

    return _make(np.ascontiguousarray(out), (x, weight, bias), backward)


def maxpool1d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max over windows of ``kernel``; ties go to the first element."""
    B, C, L = x.shape
    if L % kernel:
        raise DataError(f"maxpool1d needs a length divisible by {kernel}, got {L}")
    out = x.data[:, :, 0::kernel]
    arg = np.zeros(out.shape, dtype=np.int8)
    for k in range(1, kernel):
        candidate = x.data[:, :, k::kernel]
        better = candidate > out  # strict, so the earliest maximum is kept
        arg = np.where(better, np.int8(k), arg)
        out = np.where(better, candidate, out)

    def backward(g):
        gx = np.zeros_like(x.data)
        for k in range(kernel):
            gx[:, :, k::kernel] = np.where(arg == k, g, 0.0)
        return (gx,)

    return _make(np.ascontiguousarray(out), (x,), backward)
