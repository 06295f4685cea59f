"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every value in the computation graph is a matrix (scalars are 1x1).  Ops are
plain functions that accept either numpy arrays or :class:`Var` nodes; when at
least one operand is a ``Var`` the op is recorded and becomes differentiable,
otherwise it is evaluated eagerly in numpy.  This keeps a single numeric code
path for model math, standalone use, and finite-difference checking.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.special import expit

LOG_FLOOR = 1e-12


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def rng_from_seed(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64): same seed, same stream, any platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(x, name: str = "value") -> np.ndarray:
    """Coerce to a finite 2-D float64 array; 1-D input becomes a row vector."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatchError(f"{name}: expected at most 2 dimensions, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeMismatchError(f"{name}: empty matrix (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return arr


class Var:
    """A node in the computation graph: a matrix value plus gradient plumbing.

    Leaf nodes are created directly (``Var(value, trainable=True)`` for
    parameters); interior nodes are created by the op functions below.  After
    ``loss.backward()`` every node reached from the loss has its ``grad``
    populated; the loss node's own adjoint is exactly 1.
    """

    __slots__ = ("value", "grad", "name", "trainable", "_parents", "_backward")

    def __init__(self, value, name: str = "", trainable: bool = False,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.value = as_matrix(value, name or "Var")
        self.grad: np.ndarray | None = None
        self.name = name
        self.trainable = trainable
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeMismatchError(f"item(): not a scalar, shape {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        tag = self.name or "Var"
        return f"{tag}{self.value.shape}"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this node, which must be scalar (1x1)."""
        if self.value.shape != (1, 1):
            raise ShapeMismatchError(
                f"backward() requires a scalar loss node, got shape {self.value.shape}")
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; non-Var operands are treated as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return multiply(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def _topological_order(root: Var) -> list[Var]:
    """Iterative DFS post-order: every node's parents precede it."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
    return order


def _split(x, name: str):
    """Return (value array, Var-or-None) for an operand."""
    if isinstance(x, Var):
        return x.value, x
    return as_matrix(x, name), None


def _make(value: np.ndarray, parents: Iterable[Var | None], backward) -> Var:
    live = tuple(p for p in parents if p is not None)
    return Var(value, _parents=live, _backward=backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] > 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    for axis in (0, 1):
        if a.shape[axis] != b.shape[axis] and 1 not in (a.shape[axis], b.shape[axis]):
            raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not align")


def matmul(a, b):
    """Matrix product; differentiable in both operands."""
    av, an = _split(a, "matmul lhs")
    bv, bn = _split(b, "matmul rhs")
    if av.shape[1] != bv.shape[0]:
        raise ShapeMismatchError(f"matmul: inner dimensions differ, {av.shape} @ {bv.shape}")
    out = av @ bv
    if an is None and bn is None:
        return out

    def backward(g):
        if an is not None:
            an._accumulate(g @ bv.T)
        if bn is not None:
            bn._accumulate(av.T @ g)

    return _make(out, (an, bn), backward)


def add(a, b):
    av, an = _split(a, "add lhs")
    bv, bn = _split(b, "add rhs")
    _check_broadcast(av, bv, "add")
    out = av + bv
    if an is None and bn is None:
        return out

    def backward(g):
        if an is not None:
            an._accumulate(_unbroadcast(g, av.shape))
        if bn is not None:
            bn._accumulate(_unbroadcast(g, bv.shape))

    return _make(out, (an, bn), backward)


def subtract(a, b):
    av, an = _split(a, "subtract lhs")
    bv, bn = _split(b, "subtract rhs")
    _check_broadcast(av, bv, "subtract")
    out = av - bv
    if an is None and bn is None:
        return out

    def backward(g):
        if an is not None:
            an._accumulate(_unbroadcast(g, av.shape))
        if bn is not None:
            bn._accumulate(_unbroadcast(-g, bv.shape))

    return _make(out, (an, bn), backward)


def multiply(a, b):
    """Elementwise (Hadamard) product with row/column broadcasting."""
    av, an = _split(a, "multiply lhs")
    bv, bn = _split(b, "multiply rhs")
    _check_broadcast(av, bv, "multiply")
    out = av * bv
    if an is None and bn is None:
        return out

    def backward(g):
        if an is not None:
            an._accumulate(_unbroadcast(g * bv, av.shape))
        if bn is not None:
            bn._accumulate(_unbroadcast(g * av, bv.shape))

    return _make(out, (an, bn), backward)


def square(a):
    av, an = _split(a, "square")
    out = av * av
    if an is None:
        return out

    def backward(g):
        an._accumulate(g * (2.0 * av))

    return _make(out, (an,), backward)


def relu(a):
    av, an = _split(a, "relu")
    out = np.maximum(av, 0.0)
    if an is None:
        return out

    def backward(g):
        an._accumulate(g * (av > 0.0))

    return _make(out, (an,), backward)


def sigmoid(a):
    """Logistic function, evaluated in the overflow-free branch per sign."""
    av, an = _split(a, "sigmoid")
    out = expit(av)
    if an is None:
        return out

    def backward(g):
        an._accumulate(g * out * (1.0 - out))

    return _make(out, (an,), backward)


def row_softmax(a):
    """Softmax along each row, with per-row max subtraction for stability."""
    av, an = _split(a, "row_softmax")
    shifted = av - av.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    if an is None:
        return out

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        an._accumulate(out * (g - inner))

    return _make(out, (an,), backward)


def log(a):
    """Natural log with the argument floored at LOG_FLOOR to stay finite."""
    av, an = _split(a, "log")
    clamped = np.maximum(av, LOG_FLOOR)
    out = np.log(clamped)
    if an is None:
        return out

    def backward(g):
        an._accumulate(g / clamped)

    return _make(out, (an,), backward)


def total(a):
    """Sum of all entries: float for arrays, 1x1 Var for graph nodes."""
    av, an = _split(a, "total")
    s = av.sum()
    if an is None:
        return float(s)

    def backward(g):
        an._accumulate(np.full(av.shape, g[0, 0]))

    return _make(np.array([[s]]), (an,), backward)


def transpose(a):
    av, an = _split(a, "transpose")
    if an is None:
        return av.T.copy()

    def backward(g):
        an._accumulate(g.T)

    return _make(av.T, (an,), backward)


def concat_cols(parts):
    """Column-wise concatenation of matrices with equal row counts."""
    parts = list(parts)
    vals, nodes = [], []
    for k, p in enumerate(parts):
        v, n = _split(p, f"concat_cols[{k}]")
        vals.append(v)
        nodes.append(n)
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1:
        raise ShapeMismatchError(
            f"concat_cols: row counts differ: {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=1)
    if all(n is None for n in nodes):
        return out

    offsets = np.cumsum([0] + [v.shape[1] for v in vals])

    def backward(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n is not None:
                n._accumulate(g[:, lo:hi])

    return _make(out, nodes, backward)


def gather_rows(a, index):
    """Select rows by integer index."""
    av, an = _split(a, "gather_rows")
    idx = np.asarray(index, dtype=np.intp).ravel()
    out = av[idx, :]
    if an is None:
        return out

    def backward(g):
        full = np.zeros(av.shape)
        np.add.at(full, idx, g)
        an._accumulate(full)

    return _make(out, (an,), backward)


def scatter_rows(a, index, n_rows: int):
    """Place the rows of `a` at the given indices of an otherwise-zero matrix."""
    av, an = _split(a, "scatter_rows")
    idx = np.asarray(index, dtype=np.intp).ravel()
    if idx.size != av.shape[0]:
        raise ShapeMismatchError(
            f"scatter_rows: {av.shape[0]} rows but {idx.size} target indices")
    out = np.zeros((int(n_rows), av.shape[1]))
    out[idx, :] = av
    if an is None:
        return out

    def backward(g):
        an._accumulate(g[idx, :])

    return _make(out, (an,), backward)


def dropout(a, rate: float, rng: np.random.Generator | None):
    """Inverted dropout: identity when rate is 0 or no generator is supplied."""
    if rng is None or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    av = a.value if isinstance(a, Var) else as_matrix(a, "dropout")
    keep = 1.0 - rate
    mask = (rng.random(av.shape) >= rate) / keep
    return multiply(a, mask)


def gradients(loss: Var, params: Mapping[str, Var]) -> dict[str, np.ndarray]:
    """Run backward from `loss` and return one gradient per named parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var recorded on the graph")
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros(p.value.shape)
    return out


def finite_diff_check(loss_fn: Callable[[Mapping[str, object]], object],
                      params: Mapping[str, np.ndarray],
                      epsilon: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``loss_fn`` must accept a dict of operands and return a scalar; it is
    called once on Vars (for the analytic gradients) and twice per parameter
    entry on plain arrays.  The relative-error denominator is floored at 1e-8
    so near-zero gradients do not produce spurious failures.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    var_params = {k: Var(np.array(v, dtype=np.float64), name=k, trainable=True)
                  for k, v in params.items()}
    loss = loss_fn(var_params)
    if not isinstance(loss, Var):
        raise TypeError("loss_fn must build a Var loss when given Var parameters")
    analytic = gradients(loss, var_params)

    work = {k: v.value.copy() for k, v in var_params.items()}

    def value_at() -> float:
        out = loss_fn(work)
        return out.item() if isinstance(out, Var) else float(np.asarray(out).reshape(()))

    worst = 0.0
    for name, arr in work.items():
        grad = analytic[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            f_plus = value_at()
            arr[idx] = orig - epsilon
            f_minus = value_at()
            arr[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(grad[idx]), 1e-8)
            worst = max(worst, abs(numeric - grad[idx]) / denom)
    return worst


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform(-s, s) with s = sqrt(6 / (rows + cols))."""
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols))
