"""Minimal define-by-run reverse-mode differentiation over dense 2-D arrays.

Every value is a float64 matrix.  Operations on tensors that require gradients
record their parents and a backward rule; :func:`backward` walks the recorded
graph in reverse topological order.  Operations whose inputs need no gradient
are not recorded at all, so inference paths carry no tape overhead.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(shape, float(x)))


def make(values: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap ``values`` as the output of an operation.

    ``backward_fn`` maps the output gradient to one gradient (or ``None``)
    per parent.  It is only kept when some parent requires a gradient.
    """
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_same(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def back(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return make(av @ bv, (a, b), back, "matmul")


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make(a.values + c, (a,), lambda g: (g,), "add")
    _check_same(a, b, "add")
    return make(a.values + b.values, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make(a.values - c, (a,), lambda g: (g,), "sub")
    _check_same(a, b, "sub")
    return make(a.values - b.values, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    av, bv = a.values, b.values

    def back(g):
        return (g * bv if a.requires_grad else None,
                g * av if b.requires_grad else None)

    return make(av * bv, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make(a.values * c, (a,), lambda g: (g * c,), "scale")


def transpose(a: Tensor) -> Tensor:
    return make(a.values.T, (a,), lambda g: (g.T,), "transpose")


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = a.shape
    return make(np.array([[a.values.sum()]]), (a,),
                lambda g: (np.full(shape, g[0, 0]),), "sum")


def vstack(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"vstack: column counts differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make(np.vstack([p.values for p in parts]), tuple(parts), back, "vstack")


def time_sum(a: Tensor, steps: int) -> Tensor:
    """Collapse a time-major ``(steps*B, n)`` tensor to ``(B, n)`` sums over time."""
    rows, n = a.shape
    if steps < 1 or rows % steps:
        raise ShapeError(f"time_sum: {rows} rows not divisible into {steps} steps")
    batch = rows // steps
    out = a.values.reshape(steps, batch, n).sum(axis=0)

    def back(g):
        return (np.broadcast_to(g, (steps, batch, n)).reshape(rows, n).copy(),)

    return make(out, (a,), back, "time_sum")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = logits.shape
    if labels.shape[0] != batch:
        raise ShapeError(f"softmax_cross_entropy: {batch} rows but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got {labels.min()}..{labels.max()}")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    loss = np.mean(logsum - z[rows, labels])

    def back(g):
        p = softmax(logits.values)
        p[rows, labels] -= 1.0
        return (p * (g[0, 0] / batch),)

    return make(np.array([[loss]]), (logits,), back, "softmax_ce")


def fast_sigmoid_grad(x: np.ndarray, slope: float) -> np.ndarray:
    """Derivative of the fast sigmoid, ``1 / (slope*|x| + 1)**2``."""
    return 1.0 / (slope * np.abs(x) + 1.0) ** 2


def spike_threshold(u: Tensor, u_thr: float, slope: float = 25.0) -> Tensor:
    """Heaviside ``u > u_thr`` with a fast-sigmoid surrogate derivative."""
    centred = u.values - u_thr
    out = (centred > 0).astype(np.float64)

    def back(g):
        return (g * fast_sigmoid_grad(centred, slope),)

    return make(out, (u,), back, "spike")


def topological_order(root: Tensor) -> list[Tensor]:
    """Recorded operations reachable from ``root``, inputs before outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every recorded ``t``."""
    if root.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1x1) root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
    for node in reversed(topological_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def finite_difference_gradient(f: Callable[[Tensor], "Tensor | float"], x: Tensor,
                               h: float = 1e-5) -> Tensor:
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")

    def value(arr):
        out = f(Tensor(arr))
        return out.item() if isinstance(out, Tensor) else float(out)

    base = x.values
    grad = np.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (value(plus) - value(minus)) / (2.0 * h)
    return Tensor(grad)
