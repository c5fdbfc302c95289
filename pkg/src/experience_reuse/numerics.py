"""Dense linear algebra helpers and a small reverse-mode autodiff tape.

Matrices are plain ``numpy`` float arrays. The tape records whole-array
operations, so a forward pass through an MLP is a handful of nodes rather
than one node per scalar.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg

PIVOT_FLOOR = 1e-12
SYMMETRY_TOL = 1e-10


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot falls to or below ``PIVOT_FLOOR``."""


class NonScalarOutput(ValueError):
    pass


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float array."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a``.

    Raises
    ------
    ValueError
        If ``a`` is not square or not symmetric to ``SYMMETRY_TOL`` (relative).
    NotPositiveDefinite
        If any pivot ``L[k, k]**2`` is at or below ``PIVOT_FLOOR``.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(L) ** 2
    if np.any(pivots <= PIVOT_FLOOR) or not np.all(np.isfinite(L)):
        raise NotPositiveDefinite(f"smallest pivot {pivots.min():.3e}")
    return L


def log_det(a) -> float:
    """Log-determinant of an SPD matrix via its Cholesky factor."""
    L = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a x = b`` for SPD ``a``; ``b`` may be a vector or a matrix."""
    L = cholesky(a)
    return scipy.linalg.cho_solve((L, True), np.asarray(b, dtype=float))


def inv_spd(a) -> np.ndarray:
    L = cholesky(a)
    return scipy.linalg.cho_solve((L, True), np.eye(L.shape[0]))


def trace_inv_spd(a) -> float:
    """``tr(a^{-1})`` by solving against the standard basis."""
    return float(np.trace(inv_spd(a)))


# ---------------------------------------------------------------------------
# reverse-mode tape


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    __slots__ = ("tape", "index", "value", "parents", "op", "fn", "vjp", "name")

    def __init__(self, tape, index, value, parents=(), op="leaf", fn=None, vjp=None, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.op = op
        self.fn = fn
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, self.tape.mul(other, -1.0))

    def __rsub__(self, other):
        return self.tape.add(other, self.tape.mul(self, -1.0))

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __rmatmul__(self, other):
        return self.tape.matmul(other, self)

    def __repr__(self):
        return f"Node({self.op}, shape={self.shape})"


class Tape:
    """Records array operations for a single backward pass.

    Leaves created with :meth:`variable` are parameters and receive
    gradients; leaves from :meth:`constant` do not. A tape is not
    thread-safe and should be discarded after use.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Node] = []

    def _push(self, value, parents=(), op="leaf", fn=None, vjp=None, name=None) -> Node:
        node = Node(self, len(self.nodes), value, tuple(parents), op, fn, vjp, name)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.constant(x)

    def variable(self, value, name: str | None = None) -> Node:
        node = self._push(np.array(value, dtype=float), name=name or f"p{len(self.params)}")
        self.params.append(node)
        return node

    def constant(self, value) -> Node:
        return self._push(np.asarray(value, dtype=float), op="const")

    def apply(self, op: str, fn: Callable, vjp: Callable, *inputs) -> Node:
        """Record ``fn(*input_values)``.

        ``vjp(g, out, *input_values)`` must return one cotangent (or ``None``)
        per input.
        """
        parents = [self._lift(x) for x in inputs]
        value = fn(*[p.value for p in parents])
        return self._push(value, parents, op, fn, vjp)

    # primitives ------------------------------------------------------------

    def add(self, a, b) -> Node:
        return self.apply(
            "add", np.add,
            lambda g, out, x, y: (_unbroadcast(g, np.shape(x)), _unbroadcast(g, np.shape(y))),
            a, b,
        )

    def mul(self, a, b) -> Node:
        return self.apply(
            "mul", np.multiply,
            lambda g, out, x, y: (_unbroadcast(g * y, np.shape(x)), _unbroadcast(g * x, np.shape(y))),
            a, b,
        )

    def matmul(self, a, b) -> Node:
        def vjp(g, out, x, y):
            gx = g @ y.T if y.ndim == 2 else np.outer(g, y)
            gy = x.T @ g if x.ndim == 2 else np.outer(x, g)
            return gx, gy

        return self.apply("matmul", np.matmul, vjp, a, b)

    def tanh(self, a) -> Node:
        return self.apply("tanh", np.tanh, lambda g, out, x: (g * (1.0 - out**2),), a)

    def relu(self, a) -> Node:
        return self.apply(
            "relu", lambda x: np.maximum(x, 0.0), lambda g, out, x: (g * (x > 0),), a
        )

    def log(self, a) -> Node:
        return self.apply("log", np.log, lambda g, out, x: (g / x,), a)

    def square(self, a) -> Node:
        return self.apply("square", np.square, lambda g, out, x: (2.0 * g * x,), a)

    def sum(self, a) -> Node:
        return self.apply(
            "sum", lambda x: np.asarray(np.sum(x)), lambda g, out, x: (np.full(np.shape(x), g),), a
        )

    # replay ----------------------------------------------------------------

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded op from the leaf values."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.fn is None:
                values.append(node.value)
            else:
                values.append(node.fn(*[values[p.index] for p in node.parents]))
        return values


def gradient(tape: Tape, output: Node, params: Sequence[Node] | None = None) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``output`` with respect to every tape parameter.

    Returns a dict keyed by parameter name.
    """
    if np.size(output.value) != 1:
        raise NonScalarOutput(f"output has shape {output.shape}")
    adjoint: dict[int, np.ndarray] = {output.index: np.ones_like(output.value, dtype=float)}
    for node in reversed(tape.nodes[: output.index + 1]):
        g = adjoint.pop(node.index, None)
        if g is None or node.vjp is None:
            if g is not None:
                adjoint[node.index] = g
            continue
        grads = node.vjp(g, node.value, *[p.value for p in node.parents])
        for parent, pg in zip(node.parents, grads):
            if pg is None or parent.op == "const":
                continue
            if parent.index in adjoint:
                adjoint[parent.index] = adjoint[parent.index] + pg
            else:
                adjoint[parent.index] = pg
    params = tape.params if params is None else params
    return {
        p.name: np.asarray(adjoint.get(p.index, np.zeros_like(p.value)), dtype=float).reshape(p.shape)
        for p in params
    }
