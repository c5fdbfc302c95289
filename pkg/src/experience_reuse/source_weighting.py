"""Weighting source tasks by expected distance between posterior weight vectors.

For weights ``a`` over the sources, the expected squared distance between
the target weights and the ``a``-mixture of source weights reduces to the
quadratic program::

    min_a  -mu_t^T M a + 1/2 a^T (M^T M + S) a   s.t.  sum(a) = 1, a >= 0

with ``M = [mu_1 .. mu_N]`` and ``S = diag(E[s2_i] tr(Sigma_i))``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .neural_linear import NIGHead
from .numerics import NotPositiveDefinite, cholesky, trace_inv_spd  # noqa: F401

KKT_TOL = 1e-8


class AlphaTooSmall(ValueError):
    """The inverse-gamma mean ``beta / (alpha - 1)`` is undefined for ``alpha <= 1``."""


@dataclass(frozen=True)
class QPInstance:
    M: np.ndarray
    S: np.ndarray
    mu_target: np.ndarray

    @property
    def n_sources(self) -> int:
        return self.M.shape[1]

    @property
    def hessian(self) -> np.ndarray:
        return self.M.T @ self.M + self.S

    @property
    def linear(self) -> np.ndarray:
        return self.M.T @ self.mu_target

    def objective(self, a) -> float:
        a = np.asarray(a, dtype=float)
        return float(-self.linear @ a + 0.5 * a @ self.hessian @ a)


@dataclass(frozen=True)
class SourceWeights:
    a: np.ndarray
    kkt_residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a probability vector: {a}")
        object.__setattr__(self, "a", a)

    def __len__(self):
        return len(self.a)

    def __getitem__(self, i):
        return self.a[i]

    @classmethod
    def uniform(cls, n: int) -> "SourceWeights":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def one_hot(cls, n: int, i: int) -> "SourceWeights":
        a = np.zeros(n)
        a[i] = 1.0
        return cls(a)


def variance_penalty(head: NIGHead) -> float:
    """``E[s2] * tr(Sigma)`` for one head."""
    if head.alpha <= 1.0:
        raise AlphaTooSmall(f"alpha = {head.alpha} <= 1")
    return head.beta / (head.alpha - 1.0) * trace_inv_spd(head.precision)


def build_qp(heads: Sequence[NIGHead], target: NIGHead) -> QPInstance:
    if not heads:
        raise ValueError("need at least one source head")
    dim = target.dim
    if any(h.dim != dim for h in heads):
        raise ValueError("all heads must share their dimension")
    M = np.column_stack([h.mu for h in heads])
    S = np.diag([variance_penalty(h) for h in heads])
    return QPInstance(M, S, target.mu.copy())


def kkt_residual(qp: QPInstance, a) -> float:
    """Largest violation of the simplex KKT conditions at ``a``.

    On the support the gradient must be constant (the multiplier); off the
    support it must be no smaller than that constant.
    """
    a = np.asarray(a, dtype=float)
    g = qp.hessian @ a - qp.linear
    support = a > 0
    if not support.any():
        return float("inf")
    nu = float(np.mean(g[support]))
    stationarity = np.max(np.abs(g[support] - nu))
    dual = np.max(np.maximum(nu - g[~support], 0.0), initial=0.0)
    primal = max(abs(a.sum() - 1.0), np.max(np.maximum(-a, 0.0)))
    return float(max(stationarity, dual, primal))


def _equality_solve(H: np.ndarray, c: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Minimise over the face ``{a : a[~free] = 0, sum(a) = 1}``."""
    n = len(c)
    idx = np.flatnonzero(free)
    Hf = H[np.ix_(idx, idx)]
    L = cholesky(Hf)
    u = scipy.linalg.cho_solve((L, True), c[idx])
    v = scipy.linalg.cho_solve((L, True), np.ones(len(idx)))
    nu = (1.0 - u.sum()) / v.sum()
    a = np.zeros(n)
    a[idx] = u + nu * v
    return a


def solve_qp(qp: QPInstance, warm_start: SourceWeights | np.ndarray | None = None,
             max_iter: int | None = None) -> SourceWeights:
    """Exact minimiser on the probability simplex by a primal active-set method.

    ``warm_start`` seeds the starting point; the answer does not depend on it
    because the objective is strictly convex.
    """
    H = qp.hessian
    H = 0.5 * (H + H.T)
    c = qp.linear
    n = len(c)
    cholesky(H)  # raises NotPositiveDefinite up front
    if n == 1:
        return SourceWeights(np.ones(1), 0.0, 0)
    max_iter = 50 * n if max_iter is None else max_iter

    if warm_start is None:
        a = np.full(n, 1.0 / n)
    else:
        a = np.clip(np.asarray(getattr(warm_start, "a", warm_start), dtype=float), 0.0, None)
        a = a / a.sum() if a.sum() > 0 else np.full(n, 1.0 / n)
    free = a > 0

    it = 0
    for it in range(1, max_iter + 1):
        target = _equality_solve(H, c, free)
        step = target - a
        shrinking = free & (target < 0)
        if shrinking.any():
            # move toward the face optimum until the first coordinate hits zero
            ratios = a[shrinking] / (a[shrinking] - target[shrinking])
            t = float(np.min(ratios))
            a = a + t * step
            hit = free & (a <= 1e-15)
            hit[np.flatnonzero(shrinking)[np.argmin(ratios)]] = True
            a[hit] = 0.0
            free &= ~hit
            a = np.maximum(a, 0.0)
            a /= a.sum()
            continue
        a = target
        g = H @ a - c
        nu = float(np.mean(g[free]))
        reduced = np.where(free, np.inf, g - nu)
        j = int(np.argmin(reduced))
        if reduced[j] >= -KKT_TOL:
            break
        free[j] = True
    a = np.where(free, np.maximum(a, 0.0), 0.0)
    a /= a.sum()
    return SourceWeights(a, kkt_residual(qp, a), it)


def expected_distance(a, heads: Sequence[NIGHead], target: NIGHead) -> float:
    """Closed-form ``E ||w_t - sum_i a_i w_i||^2`` over both posteriors.

    ``a`` may be any real vector; the target's own variance term is included.
    """
    a = np.asarray(a, dtype=float)
    if len(a) != len(heads):
        raise ValueError("one weight per source head is required")
    gap = target.mu - sum((ai * h.mu for ai, h in zip(a, heads)), np.zeros(target.dim))
    spread = sum(ai**2 * variance_penalty(h) for ai, h in zip(a, heads))
    return float(variance_penalty(target) + spread + gap @ gap)


class WeightTraceWriter:
    """Appends ``iteration, a_1, ..., a_N`` rows to a CSV file."""

    def __init__(self, path, n_sources: int, names: Sequence[str] | None = None):
        self.path = path
        self.n_sources = n_sources
        with open(path, "w", newline="") as fh:
            cols = [f"a_{i + 1}" for i in range(n_sources)] if names is None else [f"a_{s}" for s in names]
            csv.writer(fh).writerow(["iteration", *cols])

    def append(self, iteration: int, weights) -> None:
        a = np.asarray(getattr(weights, "a", weights), dtype=float)
        if len(a) != self.n_sources:
            raise ValueError("weight vector width does not match the trace")
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([iteration, *(repr(float(v)) for v in a)])
