import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from experience_reuse.numerics import (
    NonScalarOutput,
    NotPositiveDefinite,
    Tape,
    cholesky,
    gradient,
    log_det,
    solve_spd,
)


def random_spd(rng, n):
    B = rng.normal(size=(n, n))
    return B.T @ B + np.eye(n)


def cofactor_det(A):
    """Laplace expansion along the first row; exponential time, small inputs only."""
    n = len(A)
    if n == 1:
        return A[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in A[1:]]
        total += (-1) ** j * A[0][j] * cofactor_det(minor)
    return total


def adjugate_inverse_3x3(A):
    A = [list(map(float, r)) for r in A]
    det = cofactor_det(A)
    cof = [[0.0] * 3 for _ in range(3)]
    for i, j in itertools.product(range(3), range(3)):
        minor = [[A[r][c] for c in range(3) if c != j] for r in range(3) if r != i]
        cof[i][j] = (-1) ** (i + j) * (minor[0][0] * minor[1][1] - minor[0][1] * minor[1][0])
    return np.array(cof).T / det


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    @pytest.mark.parametrize("n", [1, 2, 5, 16, 64])
    def test_round_trip(self, n):
        rng = np.random.default_rng(n)
        A = random_spd(rng, n)
        L = cholesky(A)
        assert np.all(np.diag(L) > 0)
        np.testing.assert_array_equal(L, np.tril(L))
        assert np.linalg.norm(L @ L.T - A) <= 1e-10 * np.linalg.norm(A)

    def test_rejects_indefinite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_pivot_floor(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, 1e-13]))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            cholesky(np.array([[np.nan]]))


class TestLogDet:
    def test_identity(self):
        assert log_det(np.eye(5)) == 0.0

    def test_diag_e(self):
        assert log_det(np.diag([math.e, math.e])) == pytest.approx(2.0, abs=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_cofactor(self, seed):
        A = random_spd(np.random.default_rng(seed), 4)
        assert log_det(A) == pytest.approx(math.log(cofactor_det(A.tolist())), rel=1e-12)

    @pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 10.0])
    @pytest.mark.parametrize("n", [1, 3, 7])
    def test_scaled_identity(self, c, n):
        assert log_det(c * np.eye(n)) == pytest.approx(n * math.log(c), abs=1e-12)

    def test_propagates(self):
        with pytest.raises(NotPositiveDefinite):
            log_det(-np.eye(2))


class TestSolve:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(solve_spd(np.eye(3), b), b)

    def test_diagonal(self):
        np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_against_adjugate(self, seed):
        rng = np.random.default_rng(seed)
        A = random_spd(rng, 3)
        b = rng.normal(size=3)
        x = solve_spd(A, b)
        np.testing.assert_allclose(x, adjugate_inverse_3x3(A) @ b, rtol=1e-10, atol=1e-12)
        assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)

    def test_not_pd(self):
        with pytest.raises(NotPositiveDefinite):
            solve_spd(np.zeros((2, 2)), [1.0, 1.0])


def central_difference(f, params, h=1e-5):
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            up = [q.copy() for q in params]
            dn = [q.copy() for q in params]
            up[k][idx] += h
            dn[k][idx] -= h
            g[idx] = (f(up) - f(dn)) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


class TestTape:
    def test_square(self):
        t = Tape()
        x = t.variable(3.0, "x")
        assert gradient(t, t.square(x))["x"] == pytest.approx(6.0)

    def test_tanh_at_zero(self):
        t = Tape()
        x = t.variable(0.0, "x")
        assert gradient(t, t.tanh(x))["x"] == pytest.approx(1.0)

    def test_non_scalar(self):
        t = Tape()
        x = t.variable(np.ones(3), "x")
        with pytest.raises(NonScalarOutput):
            gradient(t, t.tanh(x))

    def test_unused_param_gets_zero(self):
        t = Tape()
        x = t.variable(1.0, "x")
        t.variable(np.ones(2), "unused")
        g = gradient(t, t.square(x))
        np.testing.assert_array_equal(g["unused"], np.zeros(2))

    def test_reused_node_accumulates(self):
        t = Tape()
        x = t.variable(2.0, "x")
        y = x * x + x
        assert gradient(t, y)["x"] == pytest.approx(5.0)

    @staticmethod
    def two_layer(t, params, X):
        W1, b1, W2, b2 = params
        h = t.relu(t.add(t.matmul(X, W1), b1))
        o = t.tanh(t.add(t.matmul(h, W2), b2))
        return t.sum(t.square(o)) + t.sum(t.log(t.add(t.square(o), 1.0)))

    @pytest.mark.parametrize("seed", range(5))
    def test_two_layer_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-2, 2, size=(6, 3))
        params = [rng.uniform(-2, 2, size=s) for s in [(3, 4), (4,), (4, 2), (2,)]]

        def f(ps):
            t = Tape()
            return float(self.two_layer(t, [t.variable(p) for p in ps], X).value)

        t = Tape()
        nodes = [t.variable(p, f"p{k}") for k, p in enumerate(params)]
        out = self.two_layer(t, nodes, X)
        g = gradient(t, out)
        assert rel_err([g[f"p{k}"] for k in range(4)], central_difference(f, params)) < 1e-6

    def test_replay_reproduces_values(self):
        rng = np.random.default_rng(0)
        t = Tape()
        X = rng.normal(size=(5, 3))
        nodes = [t.variable(rng.normal(size=s)) for s in [(3, 4), (4,), (4, 2), (2,)]]
        self.two_layer(t, nodes, X)
        for node, value in zip(t.nodes, t.replay()):
            np.testing.assert_array_equal(node.value, value)

    def test_backward_visits_each_node_once(self):
        t = Tape()
        x = t.variable(1.5, "x")
        calls = []

        def fn(v):
            return v * 2.0

        def vjp(g, out, v):
            calls.append(1)
            return (2.0 * g,)

        y = t.apply("double", fn, vjp, x)
        z = y * y + y
        gradient(t, z)
        assert len(calls) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["tanh", "relu", "square", "logsq", "mul"]))
def test_elementwise_ops_match_finite_differences(seed, op):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-2, 2, size=4)
    w0 = rng.uniform(-2, 2, size=4)

    def build(t, x, w):
        if op == "tanh":
            y = t.tanh(x * w)
        elif op == "relu":
            y = t.relu(x * w) * x
        elif op == "square":
            y = t.square(x + w)
        elif op == "logsq":
            y = t.log(t.square(x) + 1.0) * w
        else:
            y = x * w * x
        return t.sum(y)

    def f(ps):
        t = Tape()
        return float(build(t, t.variable(ps[0]), t.variable(ps[1])).value)

    t = Tape()
    out = build(t, t.variable(x0, "x"), t.variable(w0, "w"))
    g = gradient(t, out)
    if op == "relu" and np.min(np.abs(x0 * w0)) < 1e-4:
        return  # kink inside the difference stencil
    assert rel_err([g["x"], g["w"]], central_difference(f, [x0, w0])) < 1e-4
