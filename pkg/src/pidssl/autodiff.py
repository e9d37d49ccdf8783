"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations needed by the networks and SSL losses are provided.
Every op records its parents and a closure that pushes the output gradient
back to them; ``Tensor.backward`` walks the graph in reverse topological
order.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that were added or stretched by broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = _as_array(grad).copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(ensure(other)))

    def __rsub__(self, other):
        return add(ensure(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(ensure(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)


def ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def add(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _node(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.data.shape))

    return _node(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return _node(a.data**exponent, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = ensure(a), ensure(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g.T)

    return _node(a.data.T, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _node(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return _node(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return _node(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _node(a.data[index], (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [ensure(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    shift = a.data.max(axis=axis, keepdims=True)
    exps = np.exp(a.data - shift)
    total = exps.sum(axis=axis, keepdims=True)
    out = (np.log(total) + shift).squeeze(axis)

    def backward(g):
        a._accumulate(np.expand_dims(g, axis) * exps / total)

    return _node(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shift = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - shift
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _node(out, (a,), backward)


def row_norms(x: np.ndarray) -> np.ndarray:
    """Euclidean row norms, rescaled by the row max so tiny or huge entries do not under/overflow."""
    peak = np.abs(x).max(axis=1, keepdims=True)
    safe_peak = np.where(peak > 0, peak, 1.0)
    return peak * np.sqrt(((x / safe_peak) ** 2).sum(axis=1, keepdims=True))


def l2_normalize_rows(a: Tensor) -> Tensor:
    norms = row_norms(a.data)
    nonzero = norms > 0
    safe = np.where(nonzero, norms, 1.0)
    out = a.data / safe

    def backward(g):
        radial = (out * g).sum(axis=1, keepdims=True)
        a._accumulate(np.where(nonzero, (g - out * radial) / safe, g))

    return _node(out, (a,), backward)


def cholesky(a: Tensor) -> Tensor:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    The backward pass returns the symmetric gradient
    ``0.5 * (S + S^T)`` with ``S = L^-T Phi(L^T dL) L^-1``, where ``Phi``
    keeps the lower triangle and halves the diagonal.
    """
    factor = np.linalg.cholesky(a.data)

    def backward(g):
        inner = factor.T @ np.tril(g)
        phi = np.tril(inner)
        phi[np.diag_indices_from(phi)] *= 0.5
        left = scipy.linalg.solve_triangular(factor, phi, lower=True, trans="T")
        s = scipy.linalg.solve_triangular(factor, left.T, lower=True, trans="T").T
        a._accumulate(0.5 * (s + s.T))

    return _node(factor, (a,), backward)


def solve_lower(lower: Tensor, rhs: Tensor) -> Tensor:
    """Solve ``L X = B`` for lower-triangular ``L``."""
    x = scipy.linalg.solve_triangular(lower.data, rhs.data, lower=True)

    def backward(g):
        grad_rhs = scipy.linalg.solve_triangular(lower.data, g, lower=True, trans="T")
        if rhs.requires_grad:
            rhs._accumulate(grad_rhs)
        if lower.requires_grad:
            lower._accumulate(np.tril(-grad_rhs @ x.T))

    return _node(x, (lower, rhs), backward)
