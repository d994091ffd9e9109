"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Only the handful of primitives the cone operators, the scene-graph
transformer and ComplEx need are provided. Every primitive records a
closure that maps the output gradient to parent gradients; ``backward``
walks the tape in reverse topological order.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "as_tensor", "concat", "stack", "where", "minimum", "maximum",
    "softmax", "atan2", "spmm", "relu", "tanh", "sigmoid", "log_sigmoid",
    "softplus", "sin", "cos", "exp", "log", "sqrt",
]


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    @staticmethod
    def _make(data, parents, backward):
        parents = tuple(p for p in parents if p.requires_grad)
        if not parents:
            return Tensor(data)
        return Tensor(data, True, parents, backward)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data + b.data

        def back(g):
            return [_unbroadcast(g, p.shape) for p in (a, b) if p.requires_grad]
        return Tensor._make(out, (a, b), back)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: [-g])

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data * b.data

        def back(g):
            res = []
            if a.requires_grad:
                res.append(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                res.append(_unbroadcast(g * a.data, b.shape))
            return res
        return Tensor._make(out, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = a.data / b.data

        def back(g):
            res = []
            if a.requires_grad:
                res.append(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                res.append(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
            return res
        return Tensor._make(out, (a, b), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        a = self
        out = a.data ** p
        return Tensor._make(out, (a,), lambda g: [g * p * a.data ** (p - 1)])

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = np.matmul(a.data, b.data)

        def back(g):
            res = []
            if a.requires_grad:
                if b.ndim == 1:
                    ga = np.multiply.outer(g, b.data)
                else:
                    ga = np.matmul(g if a.ndim > 1 else g[..., None, :],
                                   np.swapaxes(b.data, -1, -2))
                    if a.ndim == 1:
                        ga = ga[..., 0, :]
                res.append(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if a.ndim == 1:
                    gb = np.multiply.outer(a.data, g)
                else:
                    ad = np.swapaxes(a.data, -1, -2)
                    gb = np.matmul(ad, g if b.ndim > 1 else g[..., None])
                    if b.ndim == 1:
                        gb = gb[..., 0]
                res.append(_unbroadcast(gb, b.shape))
            return res
        return Tensor._make(out, (a, b), back)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- shape ops ---------------------------------------------------------
    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: [g.reshape(a.shape)])

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: [g.transpose(inv)])

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        a = self
        if isinstance(idx, Tensor):
            idx = idx.data.astype(np.int64)
        out = a.data[idx]

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return [full]
        return Tensor._make(out, (a,), back)

    # -- reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return [np.broadcast_to(g, a.shape).copy()]
        return Tensor._make(out, (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def min(self, axis):
        return _extreme(self, axis, np.argmin)

    def max(self, axis):
        return _extreme(self, axis, np.argmax)

    def abs(self):
        a = self
        return Tensor._make(np.abs(a.data), (a,), lambda g: [g * np.sign(a.data)])


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _extreme(a, axis, argfn):
    idx = argfn(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out = np.squeeze(out, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return [full]
    return Tensor._make(out, (a,), back)


def _unary(a, fn, dfn):
    a = as_tensor(a)
    out = fn(a.data)
    return Tensor._make(out, (a,), lambda g: [g * dfn(a.data, out)])


def sin(a):
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def cos(a):
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    return _unary(a, _sigmoid_np, lambda x, y: y * (1.0 - y))


def softplus(a):
    return _unary(a, lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid_np(x))


def log_sigmoid(a):
    return _unary(a, lambda x: -np.logaddexp(0.0, -x), lambda x, y: _sigmoid_np(-x))


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        parts = np.split(g, bounds, axis=axis)
        return [p for t, p in zip(ts, parts) if t.requires_grad]
    return Tensor._make(out, ts, back)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def back(g):
        return [np.take(g, i, axis=axis) for i, t in enumerate(ts) if t.requires_grad]
    return Tensor._make(out, ts, back)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def back(g):
        res = []
        if a.requires_grad:
            res.append(_unbroadcast(np.where(cond, g, 0.0), a.shape))
        if b.requires_grad:
            res.append(_unbroadcast(np.where(cond, 0.0, g), b.shape))
        return res
    return Tensor._make(out, (a, b), back)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data <= b.data, a, b)


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data >= b.data, a, b)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return [out * (g - (g * out).sum(axis=axis, keepdims=True))]
    return Tensor._make(out, (a,), back)


def atan2(y, x):
    """Quadrant-aware arctangent, result in [-pi, pi)."""
    y, x = as_tensor(y), as_tensor(x)
    out = np.arctan2(y.data, x.data)
    out = np.where(out >= np.pi, out - 2 * np.pi, out)
    r2 = x.data * x.data + y.data * y.data

    def back(g):
        safe = np.where(r2 > 0, r2, 1.0)
        res = []
        if y.requires_grad:
            res.append(_unbroadcast(g * x.data / safe, y.shape))
        if x.requires_grad:
            res.append(_unbroadcast(-g * y.data / safe, x.shape))
        return res
    return Tensor._make(out, (y, x), back)


def spmm(matrix, x):
    """Constant (possibly scipy-sparse) matrix times a tensor."""
    x = as_tensor(x)
    out = np.asarray(matrix @ x.data)
    return Tensor._make(out, (x,), lambda g: [np.asarray(matrix.T @ g)])
