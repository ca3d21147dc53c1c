"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

The op set is deliberately small and closed: matrix product, row-broadcast
bias, ReLU, a handful of elementwise maps, reductions, and same-shape (or
scalar) arithmetic. Every backward rule is simple enough to check by hand,
and all of them are verified against central finite differences in the test
suite. There is no general broadcasting and no higher-order differentiation.

A fresh graph is built on every forward pass; ``Tape.trace`` recovers the
topological order from the scalar loss and replays it in reverse. Gradients
of intermediate nodes live only for the duration of one backward pass, while
leaf tensors with ``requires_grad`` accumulate into ``.grad`` until cleared,
so calling backward twice doubles leaf gradients exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class DomainError(ValueError):
    """An elementwise op was applied outside its domain (log of <= 0 etc.)."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backprop.

    ``data`` is the value, ``grad`` the accumulated gradient buffer (same
    shape, allocated on demand for leaves that require it). ``_parents`` and
    ``_vjp`` describe how this node was produced; both are empty for leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None  # callable(grad_out) -> tuple of per-parent grads

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return self._vjp is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Scalar / same-shape arithmetic sugar. Scalars may be python numbers or
    # 0-d tensors; anything else must match shapes exactly.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, -1.0)


class Parameter(Tensor):
    """A named leaf tensor that always participates in differentiation."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Only scalar-vs-array mixing is ever allowed, so the reduction is a sum.
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


# ---------------------------------------------------------------------------
# binary arithmetic (same shape, or one side scalar)
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _node(out, (a, b), vjp)


def sub(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _node(out, (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "mul")
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _reduce_to(g * b_data, a.shape), _reduce_to(g * a_data, b.shape)

    return _node(out, (a, b), vjp)


def div(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_same_shape(a, b, "div")
    if np.any(b.data == 0.0):
        idx = int(np.flatnonzero(b.data == 0.0)[0])
        raise DomainError(f"div: zero divisor at flat index {idx}")
    out = a.data / b.data
    a_data, b_data = a.data, b.data

    def vjp(g):
        ga = _reduce_to(g / b_data, a.shape)
        gb = _reduce_to(-g * a_data / (b_data * b_data), b.shape)
        return ga, gb

    return _node(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m,k] and b [k,n]; dL/da = g b^T, dL/db = a^T g."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    a_data, b_data = a.data, b.data

    def vjp(g):
        return g @ b_data.T, a_data.T @ g

    return _node(out, (a, b), vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast addition of a bias vector b [n] to x [m,n]."""
    if x.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(f"add_bias: expected x [m,n] and b [n], got {x.shape} and {b.shape}")
    if x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: trailing dims disagree: {x.shape} vs {b.shape}")
    out = x.data + b.data[None, :]

    def vjp(g):
        return g, g.sum(axis=0)

    return _node(out, (x, b), vjp)


# ---------------------------------------------------------------------------
# elementwise maps
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient at exactly 0 is 0."""
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _node(out, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return _node(out, (x,), vjp)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        idx = int(np.flatnonzero(x.data <= 0.0)[0])
        raise DomainError(f"log: nonpositive input at flat index {idx}")
    out = np.log(x.data)
    x_data = x.data

    def vjp(g):
        return (g / x_data,)

    return _node(out, (x,), vjp)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data
    x_data = x.data

    def vjp(g):
        return (2.0 * g * x_data,)

    return _node(out, (x,), vjp)


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0.0):
        idx = int(np.flatnonzero(x.data == 0.0)[0])
        raise DomainError(f"reciprocal: zero input at flat index {idx}")
    out = 1.0 / x.data

    def vjp(g):
        return (-g * out * out,)

    return _node(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic map; d/dx = s(x)(1-s(x))."""
    z = x.data
    out = np.where(z >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only strictly inside the range."""
    if not lo < hi:
        raise ValueError(f"clamp: lo {lo} must be < hi {hi}")
    out = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def vjp(g):
        return (g * mask,)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_mean(x: Tensor) -> Tensor:
    """Arithmetic mean to a 0-d scalar; backward spreads 1/size to each slot."""
    if x.size == 0:
        raise ShapeError("reduce_mean: empty tensor")
    out = np.mean(x.data)
    shape, n = x.shape, x.size

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return _node(out, (x,), vjp)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum to a 0-d scalar; backward broadcasts the scalar gradient."""
    if x.size == 0:
        raise ShapeError("reduce_sum: empty tensor")
    out = np.sum(x.data)
    shape = x.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return _node(out, (x,), vjp)


def row_sum(x: Tensor) -> Tensor:
    """Sum each row of x [m,n] into a column [m,1]."""
    if x.data.ndim != 2:
        raise ShapeError(f"row_sum: expected a 2-d tensor, got {x.shape}")
    out = x.data.sum(axis=1, keepdims=True)
    n = x.shape[1]

    def vjp(g):
        return (np.repeat(g, n, axis=1),)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# tape and backward
# ---------------------------------------------------------------------------

@dataclass
class Tape:
    """Topologically ordered trace of the graph below a root tensor.

    ``nodes`` lists every tensor reachable from the root through ``_parents``,
    parents strictly before consumers; replaying it in reverse visits each
    node exactly once.
    """

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def check_topological(self) -> bool:
        position = {id(node): i for i, node in enumerate(self.nodes)}
        for i, node in enumerate(self.nodes):
            for parent in node._parents:
                if position[id(parent)] >= i:
                    return False
        return True

    def backward(self) -> None:
        """Replay the tape in reverse, accumulating into leaf ``.grad``.

        Intermediate gradients are pass-local, so repeated calls without
        zeroing add exactly one more copy of the gradient to every leaf.
        """
        root = self.nodes[-1]
        if root.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            elif node.requires_grad:
                node.ensure_grad()
                node.grad += g


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` of every leaf reachable from the scalar ``loss``."""
    Tape.trace(loss).backward()


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)


def _rel_error(a: float, n: float) -> float:
    scale = max(abs(a), abs(n))
    if scale < 1e-8:
        return 0.0
    return abs(a - n) / scale


def gradient_check(params: list[Parameter], loss_closure, tol: float = 1e-4,
                   corrupt: bool = False) -> GradCheckReport:
    """Compare analytic gradients of ``loss_closure`` with central differences.

    ``loss_closure`` must rebuild the forward pass from the current parameter
    values and return a scalar Tensor. Step size per entry is 1e-5 * (|θ|+1).
    Failures are report entries, never exceptions. ``corrupt`` scales the
    first parameter's analytic gradient by 1.01 as a negative control for the
    checker itself.
    """
    for p in params:
        p.ensure_grad()
        p.zero_grad()
    loss = loss_closure()
    backward(loss)

    entries = []
    for k, p in enumerate(params):
        analytic = p.grad.copy()
        if corrupt and k == 0:
            analytic = analytic * 1.01 + 1e-3
        worst = 0.0
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            theta = flat[i]
            h = 1e-5 * (abs(theta) + 1.0)
            flat[i] = theta + h
            up = loss_closure().item()
            flat[i] = theta - h
            down = loss_closure().item()
            flat[i] = theta
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, _rel_error(float(analytic.reshape(-1)[i]), numeric))
        entries.append(GradCheckEntry(p.name, worst, worst < tol))
    return GradCheckReport(entries, tol)
