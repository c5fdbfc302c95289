import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from experience_reuse import neural_linear as nl
from oracles import nig_batch_posterior, nig_evidence_quadrature


def random_prior(rng, dim):
    B = rng.normal(size=(dim, dim))
    return nl.NIGPrior(rng.normal(size=dim), B.T @ B + np.eye(dim), rng.uniform(1, 3), rng.uniform(0.5, 2))


class TestConjugateUpdate:
    def test_worked_example(self):
        head = nl.NIGHead.from_prior(nl.NIGPrior.isotropic(1))
        post = nl.nig_update(head, [[1.0]], [2.0])
        assert post.precision[0, 0] == pytest.approx(2.0)
        assert post.mu[0] == pytest.approx(1.0)
        assert post.alpha == pytest.approx(1.5)
        assert post.beta == pytest.approx(2.0)

    def test_empty_batch_is_identity(self):
        head = nl.NIGHead.from_prior(nl.NIGPrior.isotropic(3))
        assert nl.nig_update(head, np.zeros((0, 3)), []) is head

    def test_dimension_mismatch(self):
        head = nl.NIGHead.from_prior(nl.NIGPrior.isotropic(3))
        with pytest.raises(nl.DimensionMismatch):
            nl.nig_update(head, np.ones((2, 2)), [1.0, 2.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_textbook_batch(self, seed):
        rng = np.random.default_rng(seed)
        prior = random_prior(rng, 4)
        Phi, y = rng.normal(size=(30, 4)), rng.normal(size=30)
        post = nl.nig_update(nl.NIGHead.from_prior(prior), Phi, y)
        mu, Lam, a, b = nig_batch_posterior(prior.mu, prior.precision, prior.alpha, prior.beta, Phi, y)
        np.testing.assert_allclose(post.mu, mu, rtol=1e-9)
        np.testing.assert_allclose(post.precision, Lam, rtol=1e-12)
        assert post.alpha == a
        assert post.beta == pytest.approx(b, rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.data())
    def test_sequential_equals_batch(self, seed, n, data):
        rng = np.random.default_rng(seed)
        prior = random_prior(rng, 3)
        Phi, y = rng.normal(size=(n, 3)), rng.normal(size=n) * 3
        k = data.draw(st.integers(0, n))
        head = nl.NIGHead.from_prior(prior)
        seq = nl.nig_update(nl.nig_update(head, Phi[:k], y[:k]), Phi[k:], y[k:])
        bat = nl.nig_update(head, Phi, y)
        for u, v in [(seq.mu, bat.mu), (seq.precision, bat.precision)]:
            np.testing.assert_allclose(u, v, rtol=1e-8, atol=1e-8)
        assert seq.alpha == pytest.approx(bat.alpha, abs=1e-8)
        assert seq.beta == pytest.approx(bat.beta, abs=1e-8)
        assert seq.n == n

    def test_beta_never_below_prior(self):
        # y lies exactly in the span: the residual term is pure rounding
        head = nl.NIGHead.from_prior(nl.NIGPrior(np.zeros(2), 1e-12 * np.eye(2), 1.0, 1e-3))
        Phi = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        post = nl.nig_update(head, Phi, Phi @ np.array([1e4, -3e3]))
        assert post.beta >= 1e-3


class TestEvidence:
    def test_empty_is_zero(self):
        assert nl.log_marginal_likelihood(nl.NIGPrior.isotropic(2), np.zeros((0, 2)), []) == 0.0

    def test_single_point_closed_form(self):
        # one point, unit everything: Student-t with 2 dof, scale^2 = 2
        y = 0.7
        got = nl.log_marginal_likelihood(nl.NIGPrior.isotropic(1), [[1.0]], [y])
        expect = math.log(math.gamma(1.5) / (math.gamma(1.0) * math.sqrt(2 * math.pi * 2))) \
            - 1.5 * math.log(1 + y * y / 4)
        assert got == pytest.approx(expect, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_quadrature(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(1, 6))
        phi, y = rng.uniform(-1.5, 1.5, n), rng.normal(size=n)
        mu0, lam0, a0, b0 = rng.uniform(-1, 1), rng.uniform(0.5, 2), rng.uniform(2, 4), rng.uniform(0.5, 2)
        got = nl.log_marginal_likelihood(nl.NIGPrior(np.array([mu0]), np.array([[lam0]]), a0, b0), phi[:, None], y)
        assert got == pytest.approx(nig_evidence_quadrature(phi, y, mu0, lam0, a0, b0), abs=1e-3)

    def test_chain_rule_of_evidence(self):
        # log p(y1, y2) = log p(y1) + log p(y2 | y1)
        rng = np.random.default_rng(3)
        prior = random_prior(rng, 3)
        Phi, y = rng.normal(size=(12, 3)), rng.normal(size=12)
        whole = nl.log_marginal_likelihood(prior, Phi, y)
        first = nl.log_marginal_likelihood(prior, Phi[:5], y[:5])
        post = nl.nig_update(nl.NIGHead.from_prior(prior), Phi[:5], y[:5])
        assert whole == pytest.approx(first + nl.log_marginal_likelihood(post, Phi[5:], y[5:]), abs=1e-10)


def tiny_model(rng, in_dim=3, hidden=(2,), d=2, n_heads=2, l2=1e-3):
    enc = nl.Encoder.init(in_dim, hidden, d, rng=rng, l2=l2)
    for W in enc.weights:
        W *= 2.0
    enc.biases = [rng.normal(size=b.shape) * 0.3 for b in enc.biases]
    return nl.MultiHeadModel.create(enc, [f"t{i}" for i in range(n_heads)])


def finite_difference_objective_grad(model, batches, h=1e-6):
    params = model.encoder.params()
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1, -1):
                ps = [q.copy() for q in params]
                ps[k][idx] += sign * h
                vals.append(float(nl.objective(model, batches, ps)[1].value))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        grads.append(g)
    return grads


@pytest.mark.parametrize("seed", range(4))
def test_encoder_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = tiny_model(rng)
    batches = {i: (rng.normal(size=(7, 3)), rng.normal(size=7)) for i in range(2)}
    tape, out, _ = nl.objective(model, batches)
    g = nl.gradient(tape, out)
    analytic = np.concatenate([g[f"theta{k}"].ravel() for k in range(4)])
    numeric = np.concatenate([x.ravel() for x in finite_difference_objective_grad(model, batches)])
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4


def test_recompute_heads_matches_direct_update():
    rng = np.random.default_rng(0)
    model = tiny_model(rng, hidden=(5,), d=3)
    data = {0: nl.Dataset("a", rng.normal(size=(50, 3)), rng.normal(size=50)),
            1: nl.Dataset("b", rng.normal(size=(9, 3)), rng.normal(size=9))}
    nl.recompute_heads(model, data, chunk=7)
    for i, ds in data.items():
        ref = nl.nig_update(model.heads[i].reset(), model.design(ds.X), ds.y)
        np.testing.assert_allclose(model.heads[i].mu, ref.mu, rtol=1e-10, atol=1e-12)
        assert model.heads[i].n == len(ds)


def test_pooled_batches_are_proportional():
    rng = np.random.default_rng(1)
    data = {0: nl.Dataset("a", np.zeros((900, 1)), np.zeros(900)),
            1: nl.Dataset("b", np.ones((100, 1)), np.ones(100))}
    counts = np.zeros(2)
    for _ in range(200):
        b = nl.sample_pooled_batches(data, 64, rng)
        counts += [len(b.get(k, ([], []))[1]) for k in (0, 1)]
    assert counts.sum() == 200 * 64
    assert counts[1] / counts.sum() == pytest.approx(0.1, abs=0.01)


def test_balanced_batches_split_evenly():
    rng = np.random.default_rng(2)
    data = {0: nl.Dataset("a", np.zeros((900, 1)), np.zeros(900)),
            1: nl.Dataset("b", np.ones((3, 1)), np.ones(3))}
    counts = np.zeros(2)
    for _ in range(200):
        b = nl.sample_pooled_batches(data, 64, rng, balanced=True)
        counts += [len(b.get(k, ([], []))[1]) for k in (0, 1)]
    assert counts[1] / counts.sum() == pytest.approx(0.5, abs=0.02)


def test_pretraining_raises_evidence():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, size=(400, 2))
    sources = [nl.Dataset("s0", X, np.sin(X[:, 0]) + X[:, 1] ** 2),
               nl.Dataset("s1", X, np.cos(X[:, 1]) - X[:, 0])]
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (16, 16), 4, rng=rng), ["s0", "s1"])
    batches = {i: (ds.X, ds.y) for i, ds in enumerate(sources)}
    before = nl.objective(model, batches)[1].value
    nl.pretrain(model, sources, n_batches=300, rng=rng, optimizer=nl.Adam(1e-2))
    after = nl.objective(model, batches)[1].value
    assert after > before + 50
    assert all(h.n == 400 for h in model.heads)


def test_pretrain_rejects_empty_source():
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (3,), 2), ["a"])
    with pytest.raises(nl.EmptyDataset):
        nl.pretrain(model, [nl.Dataset("a", dim=2)], n_batches=1)


def test_predict_single_and_batch_agree():
    rng = np.random.default_rng(5)
    model = tiny_model(rng)
    model.heads[0] = nl.nig_update(model.heads[0], model.design(rng.normal(size=(10, 3))), rng.normal(size=10))
    X = rng.normal(size=(4, 3))
    batch = nl.predict(model, "t0", X)
    np.testing.assert_allclose([nl.predict(model, 0, x) for x in X], batch, rtol=1e-12)


def test_unknown_head():
    model = tiny_model(np.random.default_rng(0))
    with pytest.raises(nl.UnknownHead):
        model.head("nope")


def test_checkpoint_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(6)
    model = tiny_model(rng, hidden=(4, 3), d=2)
    X = rng.normal(size=(20, 3))
    model.heads[1] = nl.nig_update(model.heads[1], model.design(X), rng.normal(size=20))
    nl.save_model(model, tmp_path / "m.json")
    back = nl.load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.design(X), model.design(X))
    for a, b in zip(back.heads, model.heads):
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.precision, b.precision)
        assert (a.alpha, a.beta, a.n) == (b.alpha, b.beta, b.n)
    assert back.task_ids == model.task_ids


class TestDataset:
    def test_append_and_best(self):
        ds = nl.Dataset("t")
        for v in [3.0, 1.0, 2.0]:
            ds.append(nl.Demonstration(np.array([v, -v]), v))
        assert len(ds) == 3
        assert ds.best().y == 1.0
        assert ds.best(minimize=False).y == 3.0

    def test_width_mismatch(self):
        ds = nl.Dataset("t", np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(nl.DimensionMismatch):
            ds.extend(np.zeros((1, 4)), [0.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            nl.Demonstration(np.array([np.nan]), 1.0)

    def test_empty_best(self):
        with pytest.raises(nl.EmptyDataset):
            nl.Dataset("t", dim=2).best()

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = nl.Dataset("src", rng.normal(size=(5, 3)), rng.normal(size=5))
        ds.save_csv(tmp_path / "d.csv")
        back = nl.Dataset.load_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)
        assert back.task_id == "src" and back.fingerprint() == ds.fingerprint()


def test_train_step_does_not_decrease_single_head_objective():
    rng = np.random.default_rng(8)
    X = rng.uniform(-1, 1, size=(64, 2))
    w_true = np.array([1.5, -0.5, 0.3])
    y = nl.augment(np.tanh(X @ np.array([[1.0, 0.2], [-0.3, 0.8]]))) @ w_true + 0.05 * rng.normal(size=64)
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (6,), 2, rng=rng, l2=0.0), ["only"])
    batches = {0: (X, y)}
    opt = nl.GradientAscent(1e-3)
    values = [nl.train_step(model, batches, opt)["objective"] for _ in range(50)]
    assert all(b >= a - 1e-6 for a, b in zip(values, values[1:]))


def test_zero_gradient_leaves_params():
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (3,), 2, rng=np.random.default_rng(0), l2=0.0), ["a"])
    before = [p.copy() for p in model.encoder.params()]
    nl.train_step(model, {0: (np.zeros((0, 2)), np.zeros(0))}, nl.GradientAscent(1.0))
    for a, b in zip(before, model.encoder.params()):
        np.testing.assert_array_equal(a, b)


def test_pretrain_zero_batches_sets_heads_on_initial_features():
    rng = np.random.default_rng(9)
    ds = nl.Dataset("a", rng.normal(size=(30, 2)), rng.normal(size=30))
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (4,), 2, rng=rng), ["a"])
    before = [p.copy() for p in model.encoder.params()]
    nl.pretrain(model, [ds], n_batches=0)
    np.testing.assert_array_equal(before[0], model.encoder.params()[0])
    ref = nl.nig_update(model.heads[0].reset(), model.design(ds.X), ds.y)
    np.testing.assert_allclose(model.heads[0].mu, ref.mu)


def test_identical_sources_get_identical_heads():
    rng = np.random.default_rng(10)
    X, y = rng.normal(size=(50, 2)), rng.normal(size=50)
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (4,), 2, rng=rng), ["a", "b"])
    nl.pretrain(model, [nl.Dataset("a", X, y), nl.Dataset("b", X, y)], n_batches=30, rng=rng)
    assert np.max(np.abs(model.heads[0].mu - model.heads[1].mu)) < 1e-6


def test_refine_with_empty_target_uses_sources_only():
    rng = np.random.default_rng(11)
    src = nl.Dataset("a", rng.normal(size=(40, 2)), rng.normal(size=40))
    model = nl.MultiHeadModel.create(nl.Encoder.init(2, (4,), 2, rng=rng), ["a"], target="t")
    nl.refine(model, {0: src, 1: nl.Dataset("t", dim=2)}, n_batches=3, rng=rng)
    assert model.heads[1].n == 0 and model.heads[0].n == 40
