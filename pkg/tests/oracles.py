"""Independent reference computations used by the unit and acceptance tests.

Nothing here imports the package's numerical code; each oracle takes the
slow, obvious route (quadrature, grid search, sampling, counting).
"""

import itertools
import math

import numpy as np
from scipy import integrate, special


def nig_evidence_quadrature(phi, y, mu0, lam0, a0, b0, w_range=(-10.0, 10.0)):
    """log p(y) for a one-weight NIG model by 2-D numerical integration.

    Integrates over the weight ``w`` in ``w_range`` and the noise precision
    ``tau = 1 / s2`` on ``(0, inf)``.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)

    def log_joint(w, tau):
        # N(y | phi w, 1/tau) * N(w | mu0, 1/(lam0 tau)) * Gamma(tau | a0, rate=b0)
        ll = 0.5 * n * math.log(tau / (2 * math.pi)) - 0.5 * tau * float(np.sum((y - phi * w) ** 2))
        lp = 0.5 * math.log(lam0 * tau / (2 * math.pi)) - 0.5 * lam0 * tau * (w - mu0) ** 2
        lg = a0 * math.log(b0) - special.gammaln(a0) + (a0 - 1) * math.log(tau) - b0 * tau
        return ll + lp + lg

    # shift by the log joint at a crude mode to keep the integrand O(1)
    ws = np.linspace(*w_range, 401)
    taus = np.exp(np.linspace(-8, 6, 281))
    shift = max(log_joint(w, t) for w in ws[::8] for t in taus[::4])

    def inner(tau):
        val, _ = integrate.quad(lambda w: math.exp(log_joint(w, tau) - shift), *w_range,
                                limit=200, epsabs=0, epsrel=1e-10)
        return val

    # integrate over log tau for a well-conditioned outer integrand
    total, _ = integrate.quad(lambda s: inner(math.exp(s)) * math.exp(s), -30, 12,
                              limit=400, epsabs=0, epsrel=1e-9)
    return math.log(total) + shift


def nig_batch_posterior(mu0, lam0, a0, b0, Phi, y):
    """Textbook batch NIG posterior via explicit inverses."""
    Lam = lam0 + Phi.T @ Phi
    cov = np.linalg.inv(Lam)
    mu = cov @ (lam0 @ mu0 + Phi.T @ y)
    a = a0 + len(y) / 2
    b = b0 + 0.5 * (y @ y + mu0 @ lam0 @ mu0 - mu @ Lam @ mu)
    return mu, Lam, a, b


def simplex_grid(n, step):
    k = int(round(1 / step))
    for combo in itertools.product(range(k + 1), repeat=n - 1):
        s = sum(combo)
        if s <= k:
            yield np.array([*combo, k - s], dtype=float) / k


def qp_grid_minimum(H, c, step=0.005):
    """Minimum of ``c.a + 0.5 a^T H a`` over a regular simplex grid (N = 3)."""
    n = len(c)
    k = int(round(1 / step))
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    mask = i + j <= k
    A = np.stack([i[mask], j[mask], k - i[mask] - j[mask]], axis=1) / k
    assert n == 3
    vals = A @ c + 0.5 * np.einsum("ni,ij,nj->n", A, H, A)
    best = int(np.argmin(vals))
    return float(vals[best]), A[best]


def monte_carlo_distance(a, heads, target, n_samples, rng):
    """Sample ``|| w_target - sum_i a_i w_i ||^2`` from the NIG posteriors.

    Each head is ``(mu, precision, alpha, beta)``; s2 ~ InvGamma(alpha, beta)
    and w | s2 ~ N(mu, s2 precision^-1). Returns (mean, standard error).
    """
    def draw(h):
        mu, lam, al, be = h
        s2 = 1.0 / rng.gamma(al, 1.0 / be, size=n_samples)
        L = np.linalg.cholesky(np.linalg.inv(lam))
        z = rng.standard_normal((n_samples, len(mu)))
        return mu + np.sqrt(s2)[:, None] * (z @ L.T)

    mix = sum(ai * draw(h) for ai, h in zip(a, heads))
    d = np.sum((draw(target) - mix) ** 2, axis=1)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n_samples))


def count_de_evaluations(n_pop, generations):
    """Objective calls made by generational DE: initial population plus one trial per agent."""
    return n_pop + n_pop * generations
