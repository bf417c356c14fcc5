"""Reverse-mode automatic differentiation over numpy float64 arrays.

A minimal tape: each op records its parents and a vector-Jacobian closure.
Ops skip recording entirely when no input requires a gradient, so the same
forward code doubles as a fast no-grad evaluation path.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach its shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """Node in the computation tape; data is always a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _make(data, parents, vjp) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)
        return Tensor(data)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other
        data = a.data + b.data

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return self._make(data, (a, b), vjp)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return self._make(-a.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other
        data = a.data * b.data

        def vjp(g):
            return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

        return self._make(data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other
        data = a.data / b.data

        def vjp(g):
            ga = _unbroadcast(g / b.data, a.data.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            return ga, gb

        return self._make(data, (a, b), vjp)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent: float):
        a = self
        data = a.data ** exponent

        def vjp(g):
            return (g * exponent * a.data ** (exponent - 1.0),)

        return self._make(data, (a,), vjp)

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self, other
        data = a.data @ b.data

        def vjp(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

        return self._make(data, (a, b), vjp)

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)
        return self._make(data, (a,), lambda g: (g * data,))

    def log(self):
        a = self
        return self._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def tanh(self):
        a = self
        data = np.tanh(a.data)
        return self._make(data, (a,), lambda g: (g * (1.0 - data * data),))

    def softplus(self):
        """log(1 + exp(x)), numerically stable in both tails."""
        a = self
        data = np.logaddexp(0.0, a.data)
        return self._make(data, (a,), lambda g: (g * _sigmoid(a.data),))

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        a = self
        old = a.data.shape
        return self._make(a.data.reshape(*shape), (a,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        a = self
        inv = np.argsort(axes)
        return self._make(a.data.transpose(*axes), (a,), lambda g: (g.transpose(*inv),))

    def __getitem__(self, key):
        """Basic slicing only; duplicate-index gathers go through take_rows/pick."""
        a = self
        data = a.data[key]

        def vjp(g):
            out = np.zeros_like(a.data)
            out[key] += g
            return (out,)

        return self._make(data, (a,), vjp)

    def take_rows(self, indices: np.ndarray):
        """Gather rows along axis 0 (embedding lookup)."""
        a = self
        idx = np.asarray(indices)
        data = a.data[idx]

        def vjp(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)

        return self._make(data, (a,), vjp)

    def pick(self, cols: np.ndarray):
        """For a 2D tensor, select element (i, cols[i]) of every row."""
        a = self
        cols = np.asarray(cols)
        rows = np.arange(a.data.shape[0])
        data = a.data[rows, cols]

        def vjp(g):
            out = np.zeros_like(a.data)
            np.add.at(out, (rows, cols), g)
            return (out,)

        return self._make(data, (a,), vjp)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.data.shape).copy(),)

        return self._make(data, (a,), vjp)

    # -- nonlinearity composites ----------------------------------------------

    def softmax_lastaxis(self):
        """Softmax over the last axis with a detached max shift; -inf entries map to 0."""
        shift = self - np.max(self.data, axis=-1, keepdims=True)
        e = shift.exp()
        return e / e.sum(axis=-1, keepdims=True)

    def log_softmax_lastaxis(self):
        """Log-softmax over the last axis with a detached max shift."""
        shift = self - np.max(self.data, axis=-1, keepdims=True)
        lse = shift.exp().sum(axis=-1, keepdims=True).log()
        return shift - lse

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar into the tape."""
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)
