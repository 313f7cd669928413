"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the ops the fusion network needs are provided. Each op records its
parents and a closure that pushes the output gradient back to them.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tensor that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, o: matmul(self, o)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data + b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data - b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * b.data, a.shape),
                                       _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return Tensor(a.data @ b.data, _parents=(a, b),
                  _backward=lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` applied over the last axis of ``x`` (any leading shape)."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ValidationError(f"linear expects last dim {w.shape[0]}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1]))
    out = matmul(flat, w)
    if b is not None:
        out = add(out, b)
    return reshape(out, lead + (w.shape[1],))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=lambda g: (g * mask,))


def abs_(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return Tensor(np.abs(x.data), _parents=(x,), _backward=lambda g: (g * sign,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * out,))


def power(x, p: float) -> Tensor:
    """``x ** p`` for x >= 0 (gradient taken as 0 where x = 0 and p < 1)."""
    x = as_tensor(x)
    out = x.data ** p
    if p == 0:
        return Tensor(out, _parents=(x,), _backward=lambda g: (np.zeros_like(g),))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(x.data != 0, p * x.data ** (p - 1), 0.0 if p < 1 else (1.0 if p == 1 else 0.0))
    return Tensor(out, _parents=(x,), _backward=lambda g: (g * d,))


def clamp_min(x, lo: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data >= lo
    return Tensor(np.where(keep, x.data, lo), _parents=(x,), _backward=lambda g: (g * keep,))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=lambda g: (g.reshape(old),))


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor(x.data.sum(axis=axis), _parents=(x,), _backward=back)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].data.ndim
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return Tensor(np.concatenate([t.data for t in ts], axis=ax), _parents=tuple(ts), _backward=back)


def gather_rows(x, idx) -> Tensor:
    """``x[idx]`` along axis 0; ``idx`` may have any shape."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValidationError(f"row index out of range for {x.shape[0]} rows")

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        return (out,)

    return Tensor(x.data[idx], _parents=(x,), _backward=back)


def gather_max(features, neighbor_idx) -> Tensor:
    """``out[m, c] = max_k features[neighbor_idx[m, k], c]``.

    The gradient goes to the arg-max neighbor; ties resolve to the lowest k.
    """
    f = as_tensor(features)
    idx = np.asarray(neighbor_idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] < 1:
        raise ValidationError("neighbor_idx must be M×K with K >= 1")
    if f.data.ndim != 2:
        raise ValidationError("features must be S×C")
    if idx.size and (idx.min() < 0 or idx.max() >= f.shape[0]):
        raise ValidationError(f"neighbor index out of range for {f.shape[0]} rows")
    g3 = f.data[idx]  # M×K×C
    arg = np.argmax(g3, axis=1)  # first maximum wins
    src = np.take_along_axis(idx[:, :, None], arg[:, None, :], axis=1)[:, 0, :]  # M×C rows
    out = np.take_along_axis(g3, arg[:, None, :], axis=1)[:, 0, :]
    cols = np.broadcast_to(np.arange(f.shape[1]), src.shape)

    def back(g):
        grad = np.zeros_like(f.data)
        np.add.at(grad, (src.reshape(-1), cols.reshape(-1)), g.reshape(-1))
        return (grad,)

    return Tensor(out, _parents=(f,), _backward=back)


def reduce_max(x, axis=1) -> Tensor:
    """Max over ``axis`` of a 3-D tensor; ties go to the lowest index."""
    x = as_tensor(x)
    arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis)

    def back(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, arg, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return Tensor(np.squeeze(out, axis), _parents=(x,), _backward=back)


def log_softmax(x) -> Tensor:
    """Row-wise log-softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return Tensor(out, _parents=(x,), _backward=back)


def pick(x, labels) -> Tensor:
    """``x[i, labels[i]]`` for a 2-D tensor."""
    x = as_tensor(x)
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    rows = np.arange(len(lab))

    def back(g):
        out = np.zeros_like(x.data)
        out[rows, lab] = g
        return (out,)

    return Tensor(x.data[rows, lab], _parents=(x,), _backward=back)


def numerical_grad(fn, x: np.ndarray, h: float = 1e-6, indices=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``x`` (modified in place, then restored)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Max over entries of ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max(initial=0.0))
