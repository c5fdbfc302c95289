"""Multi-headed Bayesian neural-linear regression.

A shared MLP encoder maps inputs to ``d`` tanh features plus a constant bias
feature. Every task owns a normal-inverse-gamma (NIG) head over the
``d + 1`` linear weights::

    y = phi(x)^T w + eps,  eps ~ N(0, s2),  w ~ N(mu, s2 Lambda^-1),  s2 ~ InvGamma(alpha, beta)

The encoder is fitted by gradient ascent on the sum of per-head log
evidences; head posteriors are then recomputed in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from .numerics import NotPositiveDefinite, Node, Tape, gradient, log_det, solve_spd

LOG_2PI = math.log(2.0 * math.pi)


class DimensionMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class UnknownHead(KeyError):
    pass


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Demonstration:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        if not (np.all(np.isfinite(x)) and math.isfinite(self.y)):
            raise ValueError("demonstration must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


class Dataset:
    """Append-only collection of ``(x, y)`` pairs for one task.

    Rows are buffered and materialised into arrays on demand, so the target
    dataset can grow one demonstration at a time cheaply.
    """

    def __init__(self, task_id: str, X=None, y=None, dim: int | None = None):
        self.task_id = task_id
        self._blocks_X: list[np.ndarray] = []
        self._blocks_y: list[np.ndarray] = []
        self._X: np.ndarray | None = None
        self._y: np.ndarray | None = None
        self.dim = dim
        if X is not None:
            self.extend(X, y)

    def __len__(self) -> int:
        return sum(len(b) for b in self._blocks_y)

    def __iter__(self) -> Iterator[Demonstration]:
        X, y = self.X, self.y
        for i in range(len(y)):
            yield Demonstration(X[i], y[i])

    def extend(self, X, y) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} targets")
        if X.shape[0] == 0:
            return
        if self.dim is None:
            self.dim = X.shape[1]
        elif X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected inputs of width {self.dim}, got {X.shape[1]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("demonstrations must be finite")
        self._blocks_X.append(X.copy())
        self._blocks_y.append(y.copy())
        self._X = self._y = None

    def append(self, demo: Demonstration) -> None:
        self.extend(demo.x[None, :], [demo.y])

    def _materialise(self):
        if self._X is None:
            if self._blocks_X:
                self._X = np.concatenate(self._blocks_X)
                self._y = np.concatenate(self._blocks_y)
                self._blocks_X, self._blocks_y = [self._X], [self._y]
            else:
                self._X = np.zeros((0, self.dim or 0))
                self._y = np.zeros(0)

    @property
    def X(self) -> np.ndarray:
        self._materialise()
        return self._X

    @property
    def y(self) -> np.ndarray:
        self._materialise()
        return self._y

    def subset(self, idx) -> "Dataset":
        return Dataset(self.task_id, self.X[idx], self.y[idx], dim=self.dim)

    def best(self, minimize: bool = True) -> Demonstration:
        if len(self) == 0:
            raise EmptyDataset(f"dataset {self.task_id!r} is empty")
        i = int(np.argmin(self.y) if minimize else np.argmax(self.y))
        return Demonstration(self.X[i], self.y[i])

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.task_id.encode())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()[:16]

    def save_csv(self, path) -> None:
        header = ",".join([f"x{i}" for i in range(self.dim or 0)] + ["y", "task_id"])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row, target in zip(self.X, self.y):
                fh.write(",".join(repr(float(v)) for v in row) + f",{float(target)!r},{self.task_id}\n")

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        dim = len(header) - 2
        if not rows:
            return cls(Path(path).stem, dim=dim)
        task_id = rows[0][-1]
        arr = np.array([[float(v) for v in r[:-1]] for r in rows])
        return cls(task_id, arr[:, :dim], arr[:, dim], dim=dim)


# ---------------------------------------------------------------------------
# encoder


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Encoder:
    """ReLU MLP with a tanh output layer of width ``d``.

    ``weights[k]`` has shape ``(fan_in, fan_out)``; the last layer is the
    feature layer.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    l2: float = 1e-4

    @classmethod
    def init(cls, in_dim: int, hidden: Sequence[int] = (200, 200), d: int = 20,
             rng: np.random.Generator | None = None, l2: float = 1e-4) -> "Encoder":
        rng = np.random.default_rng() if rng is None else rng
        sizes = [in_dim, *hidden, d]
        weights = [glorot_uniform(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(weights, biases, l2)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    def copy(self) -> "Encoder":
        return Encoder([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.l2)

    def features(self, X) -> np.ndarray:
        """Tanh features without the bias column, shape ``(n, d)``."""
        h = np.atleast_2d(np.asarray(X, dtype=float))
        if h.shape[1] != self.in_dim:
            raise DimensionMismatch(f"expected inputs of width {self.in_dim}, got {h.shape[1]}")
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            h = np.tanh(h) if k == last else np.maximum(h, 0.0)
        return h

    def tape_features(self, tape: Tape, params: Sequence[Node], X) -> Node:
        h: Node | np.ndarray = np.asarray(X, dtype=float)
        last = len(self.weights) - 1
        for k in range(len(self.weights)):
            h = tape.add(tape.matmul(h, params[2 * k]), params[2 * k + 1])
            h = tape.tanh(h) if k == last else tape.relu(h)
        return h


def augment(features: np.ndarray) -> np.ndarray:
    """Append the constant bias feature."""
    return np.hstack([features, np.ones((features.shape[0], 1))])


def encode(enc: Encoder, x) -> np.ndarray:
    """Feature vector of width ``d + 1`` for a single input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("encode takes a single input vector")
    return augment(enc.features(x[None, :]))[0]


# ---------------------------------------------------------------------------
# NIG heads


@dataclass(frozen=True)
class NIGPrior:
    mu: np.ndarray
    precision: np.ndarray
    alpha: float
    beta: float

    @classmethod
    def isotropic(cls, dim: int, alpha: float = 1.0, beta: float = 1.0, scale: float = 1.0) -> "NIGPrior":
        return cls(np.zeros(dim), np.eye(dim) / scale, alpha, beta)


@dataclass(frozen=True)
class NIGHead:
    mu: np.ndarray
    precision: np.ndarray
    alpha: float
    beta: float
    prior: NIGPrior
    n: int = 0

    @classmethod
    def from_prior(cls, prior: NIGPrior) -> "NIGHead":
        return cls(prior.mu.copy(), prior.precision.copy(), prior.alpha, prior.beta, prior, 0)

    def as_prior(self) -> NIGPrior:
        return NIGPrior(self.mu, self.precision, self.alpha, self.beta)

    def reset(self) -> "NIGHead":
        return NIGHead.from_prior(self.prior)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        """``Sigma = Lambda^-1`` (the weight covariance per unit noise variance)."""
        return solve_spd(self.precision, np.eye(self.dim))

    @property
    def noise_mean(self) -> float:
        """Posterior mean of the noise variance; needs ``alpha > 1``."""
        return self.beta / (self.alpha - 1.0)


@dataclass
class SufficientStats:
    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int

    @classmethod
    def zeros(cls, dim: int) -> "SufficientStats":
        return cls(np.zeros((dim, dim)), np.zeros(dim), 0.0, 0)

    @classmethod
    def from_data(cls, Phi, y) -> "SufficientStats":
        Phi = np.asarray(Phi, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(Phi.T @ Phi, Phi.T @ y, float(y @ y), len(y))

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(self.gram + other.gram, self.xty + other.xty,
                               self.yty + other.yty, self.n + other.n)


def _posterior(prior: NIGPrior, stats: SufficientStats):
    precision = prior.precision + stats.gram
    precision = 0.5 * (precision + precision.T)
    eta = prior.precision @ prior.mu + stats.xty
    mu = solve_spd(precision, eta)
    alpha = prior.alpha + 0.5 * stats.n
    quad0 = float(prior.mu @ prior.precision @ prior.mu)
    beta = prior.beta + 0.5 * (stats.yty + quad0 - float(mu @ eta))
    # beta >= beta0 holds exactly; only rounding can push it below
    beta = max(beta, prior.beta)
    return mu, precision, alpha, beta


def _check_data(head_dim: int, Phi, y):
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size == 0:
        return np.zeros((0, head_dim)), y
    if Phi.shape != (y.shape[0], head_dim):
        raise DimensionMismatch(f"features {Phi.shape} do not match {y.shape[0]} targets of width {head_dim}")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(y))):
        raise ValueError("features and targets must be finite")
    return Phi, y


def nig_update(head: NIGHead, Phi, y) -> NIGHead:
    """Conjugate update of ``head`` with features ``Phi`` (n, d+1) and targets ``y``.

    The head's current parameters act as the prior, so sequential updates
    compose; the base prior stored on the head is carried through unchanged.
    """
    Phi, y = _check_data(head.dim, Phi, y)
    return nig_update_stats(head, SufficientStats.from_data(Phi, y))


def nig_update_stats(head: NIGHead, stats: SufficientStats) -> NIGHead:
    if stats.n == 0:
        return head
    mu, precision, alpha, beta = _posterior(head.as_prior(), stats)
    return NIGHead(mu, precision, alpha, beta, head.prior, head.n + stats.n)


def log_marginal_likelihood(prior: NIGPrior | NIGHead, Phi, y) -> float:
    """Log evidence ``log p(y | Phi)`` with weights and noise integrated out."""
    if isinstance(prior, NIGHead):
        prior = prior.as_prior()
    Phi, y = _check_data(prior.mu.shape[0], Phi, y)
    return _log_evidence(prior, SufficientStats.from_data(Phi, y))


def _log_evidence(prior: NIGPrior, stats: SufficientStats) -> float:
    if stats.n == 0:
        return 0.0
    _, precision, alpha, beta = _posterior(prior, stats)
    return float(
        -0.5 * stats.n * LOG_2PI
        + 0.5 * log_det(prior.precision) - 0.5 * log_det(precision)
        + prior.alpha * math.log(prior.beta) - alpha * math.log(beta)
        + gammaln(alpha) - gammaln(prior.alpha)
    )


def evidence_node(tape: Tape, features: Node, y, prior: NIGPrior) -> Node:
    """Log evidence of ``y`` given tape features ``(n, d)``; bias column added inside.

    The backward pass uses the closed-form derivative with respect to the
    augmented design matrix ``Phi``::

        d/dPhi = -Phi Lambda_n^-1 + (alpha_n / beta_n) (y - Phi mu_n) mu_n^T
    """
    y = np.asarray(y, dtype=float)

    def fn(F):
        Phi = augment(F)
        return np.asarray(_log_evidence(prior, SufficientStats.from_data(Phi, y)))

    def vjp(g, out, F):
        if len(y) == 0:
            return (np.zeros_like(F),)
        Phi = augment(F)
        mu, precision, alpha, beta = _posterior(prior, SufficientStats.from_data(Phi, y))
        G = -solve_spd(precision, Phi.T).T + (alpha / beta) * np.outer(y - Phi @ mu, mu)
        return (g * G[:, :-1],)

    return tape.apply("nig_evidence", fn, vjp, features)


# ---------------------------------------------------------------------------
# model


@dataclass
class MultiHeadModel:
    """Shared encoder plus one NIG head per task.

    ``task_ids`` orders the heads; by convention sources come first and the
    target (when there is one) is last.
    """

    encoder: Encoder
    task_ids: list[str]
    heads: list[NIGHead]
    transforms: list[str] = field(default_factory=list)
    target: int | None = None

    @classmethod
    def create(cls, encoder: Encoder, task_ids: Sequence[str], prior: NIGPrior | None = None,
               target: str | None = None, transforms: Sequence[str] | None = None) -> "MultiHeadModel":
        prior = NIGPrior.isotropic(encoder.d + 1) if prior is None else prior
        if prior.mu.shape[0] != encoder.d + 1:
            raise DimensionMismatch("prior must have dimension d + 1")
        ids = list(task_ids)
        if target is not None:
            ids.append(target)
        heads = [NIGHead.from_prior(prior) for _ in ids]
        tags = list(transforms) if transforms is not None else ["identity"] * len(ids)
        return cls(encoder, ids, heads, tags, len(ids) - 1 if target is not None else None)

    def index(self, head_id) -> int:
        if isinstance(head_id, (int, np.integer)) and 0 <= head_id < len(self.heads):
            return int(head_id)
        try:
            return self.task_ids.index(head_id)
        except ValueError:
            raise UnknownHead(head_id) from None

    def head(self, head_id) -> NIGHead:
        return self.heads[self.index(head_id)]

    @property
    def source_indices(self) -> list[int]:
        return [i for i in range(len(self.heads)) if i != self.target]

    def design(self, X) -> np.ndarray:
        return augment(self.encoder.features(X))


def predict(model: MultiHeadModel, head_id, x) -> float | np.ndarray:
    """Posterior-mean prediction ``phi(x)^T mu`` for one input or a batch."""
    mu = model.head(head_id).mu
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(encode(model.encoder, x) @ mu)
    return model.design(x) @ mu


def recompute_heads(model: MultiHeadModel, datasets: dict[int, Dataset], chunk: int = 8192) -> None:
    """Closed-form head posteriors from full datasets under current features.

    Features are streamed in chunks into sufficient statistics, so large
    datasets never materialise a full design matrix.
    """
    for i, ds in datasets.items():
        head = model.heads[i].reset()
        stats = SufficientStats.zeros(head.dim)
        for start in range(0, len(ds), chunk):
            Phi = model.design(ds.X[start:start + chunk])
            stats = stats + SufficientStats.from_data(Phi, ds.y[start:start + chunk])
        model.heads[i] = nig_update_stats(head, stats)


# ---------------------------------------------------------------------------
# training


class GradientAscent:
    def __init__(self, lr: float = 1e-4):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        return [p + self.lr * g for p, g in zip(params, grads)]


class Adam:
    """Adam on the ascent direction."""

    def __init__(self, lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            out.append(p + self.lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


def make_optimizer(name: str = "sgd", lr: float = 1e-4):
    if name == "sgd":
        return GradientAscent(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def objective(model: MultiHeadModel, batches: dict[int, tuple[np.ndarray, np.ndarray]],
              params: Sequence[np.ndarray] | None = None):
    """Tape the training objective ``sum_i logML_i - l2 * ||theta||^2``.

    Returns ``(tape, output_node, per_head_values)``.
    """
    enc = model.encoder
    tape = Tape()
    values = enc.params() if params is None else params
    nodes = [tape.variable(p, name=f"theta{k}") for k, p in enumerate(values)]
    total: Node | None = None
    per_head = {}
    for i, (X, y) in batches.items():
        if len(y) == 0:
            continue
        node = evidence_node(tape, enc.tape_features(tape, nodes, X), y, model.heads[i].prior)
        per_head[i] = float(node.value)
        total = node if total is None else total + node
    if total is None:
        total = tape.constant(0.0)
    if enc.l2:
        penalty = None
        for p in nodes:
            s = tape.sum(tape.square(p))
            penalty = s if penalty is None else penalty + s
        total = total - enc.l2 * penalty
    return tape, total, per_head


def train_step(model: MultiHeadModel, batches: dict[int, tuple[np.ndarray, np.ndarray]],
               optimizer, datasets: dict[int, Dataset] | None = None) -> dict:
    """One ascent step on the encoder; optionally recompute heads afterwards."""
    tape, out, per_head = objective(model, batches)
    grads = gradient(tape, out)
    params = model.encoder.params()
    model.encoder.set_params(optimizer.step(params, [grads[f"theta{k}"] for k in range(len(params))]))
    if datasets is not None:
        recompute_heads(model, datasets)
    return {"objective": float(out.value), "log_evidence": per_head}


def sample_pooled_batches(datasets: dict[int, Dataset], batch_size: int,
                          rng: np.random.Generator, balanced: bool = False) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Uniform draw with replacement over the union of ``datasets``, split by head.

    With ``balanced`` every non-empty head is equally likely, so small
    datasets (a young target task) are not drowned out by large ones.
    """
    keys = [k for k, ds in datasets.items() if len(ds) > 0]
    if not keys:
        raise EmptyDataset("no data to sample from")
    if balanced:
        heads = rng.integers(0, len(keys), size=batch_size)
        out = {}
        for j, k in enumerate(keys):
            m = int(np.sum(heads == j))
            if m:
                idx = rng.integers(0, len(datasets[k]), size=m)
                out[k] = (datasets[k].X[idx], datasets[k].y[idx])
        return out
    sizes = np.array([len(datasets[k]) for k in keys])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    draws = rng.integers(0, offsets[-1], size=batch_size)
    out = {}
    for j, k in enumerate(keys):
        idx = draws[(draws >= offsets[j]) & (draws < offsets[j + 1])] - offsets[j]
        if len(idx):
            out[k] = (datasets[k].X[idx], datasets[k].y[idx])
    return out


def _fit(model, datasets, n_batches, batch_size, rng, optimizer):
    history = []
    for _ in range(n_batches):
        batches = sample_pooled_batches(datasets, batch_size, rng)
        history.append(train_step(model, batches, optimizer)["objective"])
    recompute_heads(model, datasets)
    return history


def pretrain(model: MultiHeadModel, source_datasets: Sequence[Dataset], n_batches: int = 4000,
             batch_size: int = 64, rng: np.random.Generator | None = None, optimizer=None):
    """Fit the encoder on pooled source data and set the source heads."""
    if not source_datasets:
        raise EmptyDataset("need at least one source dataset")
    if any(len(ds) == 0 for ds in source_datasets):
        raise EmptyDataset("source datasets must be non-empty")
    rng = np.random.default_rng() if rng is None else rng
    optimizer = make_optimizer() if optimizer is None else optimizer
    datasets = dict(zip(model.source_indices, source_datasets))
    _fit(model, datasets, n_batches, batch_size, rng, optimizer)
    return model


def refine(model: MultiHeadModel, all_datasets: Sequence[Dataset] | dict[int, Dataset], n_batches: int = 1,
           batch_size: int = 64, rng: np.random.Generator | None = None, optimizer=None,
           train_sources: bool = True, balanced: bool = True):
    """Continue training on source and target data and recompute every head.

    Batches are stratified over heads by default (``balanced``), so a young
    target dataset is represented from the first episode on.
    With ``train_sources=False`` only the target head's data drives the
    encoder update; all heads are still recomputed.
    """
    rng = np.random.default_rng() if rng is None else rng
    optimizer = make_optimizer() if optimizer is None else optimizer
    datasets = all_datasets if isinstance(all_datasets, dict) else dict(enumerate(all_datasets))
    train_sets = datasets
    if not train_sources and model.target is not None:
        train_sets = {model.target: datasets[model.target]}
    if any(len(ds) for ds in train_sets.values()):
        for _ in range(n_batches):
            train_step(model, sample_pooled_batches(train_sets, batch_size, rng, balanced), optimizer)
    recompute_heads(model, {k: ds for k, ds in datasets.items()})
    return model


# ---------------------------------------------------------------------------
# checkpoints


def _head_to_dict(h: NIGHead) -> dict:
    return {
        "mu": h.mu.tolist(), "precision": h.precision.tolist(), "alpha": h.alpha, "beta": h.beta, "n": h.n,
        "prior": {"mu": h.prior.mu.tolist(), "precision": h.prior.precision.tolist(),
                  "alpha": h.prior.alpha, "beta": h.prior.beta},
    }


def _head_from_dict(d: dict) -> NIGHead:
    p = d["prior"]
    prior = NIGPrior(np.array(p["mu"]), np.array(p["precision"]), p["alpha"], p["beta"])
    return NIGHead(np.array(d["mu"]), np.array(d["precision"]), d["alpha"], d["beta"], prior, d["n"])


def save_model(model: MultiHeadModel, path) -> None:
    """Write a JSON checkpoint; floats use shortest round-trip repr, so reloads are exact."""
    doc = {
        "format": "neural-linear/1",
        "in_dim": model.encoder.in_dim,
        "d": model.encoder.d,
        "l2": model.encoder.l2,
        "weights": [W.tolist() for W in model.encoder.weights],
        "biases": [b.tolist() for b in model.encoder.biases],
        "task_ids": model.task_ids,
        "transforms": model.transforms,
        "target": model.target,
        "heads": [_head_to_dict(h) for h in model.heads],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> MultiHeadModel:
    doc = json.loads(Path(path).read_text())
    enc = Encoder([np.array(W, dtype=float).reshape(len(W), -1) for W in doc["weights"]],
                  [np.array(b, dtype=float) for b in doc["biases"]], doc["l2"])
    return MultiHeadModel(enc, doc["task_ids"], [_head_from_dict(h) for h in doc["heads"]],
                          doc["transforms"], doc["target"])
