"""Bayesian experience reuse: the episodic transfer loop and its baselines.

Each episode the base learner takes ``horizon`` steps. Before every step a
coin with probability ``p_m`` decides whether the learner is fed a batch
from a source task (chosen by the current source weights) or from the
target's own data. After the episode the neural-linear model is refined on
all data and the source-weighting QP is re-solved.

Three independent random streams are used: ``env`` (the base learner and
its environment), ``reuse`` (coins and source draws) and ``train`` (model
minibatches). With ``p_m = 0`` the ``env`` stream sees exactly the calls a
standalone run would make.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffevo
from .benchmarks import model_target_transform
from .neural_linear import (
    Dataset,
    Demonstration,
    EmptyDataset,
    MultiHeadModel,
    make_optimizer,
    pretrain,
    refine,
)
from .source_weighting import SourceWeights, build_qp, solve_qp
from .supply_chain import SupplyChainEnv, encode_sa


class EmptySourceData(ValueError):
    pass


# ---------------------------------------------------------------------------
# schedules, sampling, bandits


@dataclass(frozen=True)
class ReuseSchedule:
    mode: str = "geometric"
    rate: float = 0.99

    def __post_init__(self):
        if self.mode not in ("geometric", "constant"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("schedule parameter must lie in [0, 1]")

    @classmethod
    def geometric(cls, rate: float) -> "ReuseSchedule":
        return cls("geometric", rate)

    @classmethod
    def constant(cls, p: float) -> "ReuseSchedule":
        return cls("constant", p)

    def __call__(self, m: int) -> float:
        return schedule_p(self, m)


def schedule_p(schedule: ReuseSchedule, m: int) -> float:
    if m < 1:
        raise ValueError("episodes are numbered from 1")
    return schedule.rate**m if schedule.mode == "geometric" else schedule.rate


def sample_source(a, rng: np.random.Generator) -> int:
    """Index ``i`` with probability ``a[i]``; zero-weight sources are never drawn."""
    a = np.asarray(getattr(a, "a", a), dtype=float)
    cdf = np.cumsum(a)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if i >= len(a):
        i = int(np.flatnonzero(a > 0)[-1])
    return i


def ucb_select(counts, reward_sums, t: int, c: float = math.sqrt(2.0)) -> int:
    """UCB1: unpulled arms first, then the largest ``mean + c sqrt(log t / n)``."""
    counts = np.asarray(counts, dtype=float)
    if t < 1:
        raise ValueError("t must be at least 1")
    unpulled = np.flatnonzero(counts == 0)
    if len(unpulled):
        return int(unpulled[0])
    means = np.asarray(reward_sums, dtype=float) / counts
    # c * sqrt(log t / n) equals sqrt(2 log t / n) for c = sqrt(2)
    return int(np.argmax(means + c * np.sqrt(math.log(t) / counts)))


# ---------------------------------------------------------------------------
# learners


@dataclass
class Batch:
    source: int | None
    items: list[Demonstration]


class BaseLearner(ABC):
    """Contract for the algorithm being accelerated.

    ``train_on`` only mutates the learner; ``explore`` interacts with the
    target task and returns the demonstration it produced.
    """

    horizon: int = 1
    uses_target_batches: bool = True

    def reset(self) -> list[Demonstration]:
        return []

    def begin_episode(self, m: int) -> None:
        pass

    @abstractmethod
    def train_on(self, batch: Batch) -> None: ...

    @abstractmethod
    def explore(self) -> Demonstration: ...

    @abstractmethod
    def end_episode(self) -> float:
        """Finish the episode and report its objective value."""


class DELearner(BaseLearner):
    """DE where a source batch supplies the first mutation candidate.

    An episode is one generation; each step evaluates one agent's trial.
    Demonstrations carry ``log(1 + fitness)`` as their target.
    """

    uses_target_batches = False

    def __init__(self, f: Callable, cfg: diffevo.DEConfig, rng: np.random.Generator,
                 transform: Callable[[float], float] = model_target_transform):
        self.f = f
        self.cfg = cfg
        self.rng = rng
        self.transform = transform
        self.horizon = cfg.NP
        self.pop: diffevo.Population | None = None
        self._runner: diffevo.GenerationRunner | None = None
        self._donor: np.ndarray | None = None
        self.history: list[tuple[int, float, float]] = []

    def reset(self) -> list[Demonstration]:
        raw: list[tuple[np.ndarray, float]] = []
        self.pop = diffevo.init_population(self.f, self.cfg, self.rng, lambda x, fx: raw.append((x, fx)))
        self.history = [(0, float(self.pop.fitness.min()), float(self.pop.fitness.mean()))]
        return [Demonstration(x, self.transform(fx)) for x, fx in raw]

    def begin_episode(self, m: int) -> None:
        self._runner = diffevo.GenerationRunner(self.pop, self.f, self.cfg, self.rng)

    def train_on(self, batch: Batch) -> None:
        self._donor = None
        if batch.source is not None and batch.items:
            best = min(batch.items, key=lambda d: d.y)
            self._donor = best.x

    def explore(self) -> Demonstration:
        y, fy = self._runner.step(self._donor)
        self._donor = None
        return Demonstration(y, self.transform(fy))

    def end_episode(self) -> float:
        self.pop = self._runner.commit()
        gen = len(self.history)
        self.history.append((gen, float(self.pop.fitness.min()), float(self.pop.fitness.mean())))
        return float(self.pop.fitness.min())

    @property
    def best(self) -> tuple[np.ndarray, float]:
        return self.pop.best


class PolicyLearner(BaseLearner):
    """Runs a fixed stochastic policy in the supply-chain environment.

    Stands in for an actor-critic learner: it records which source each
    reused batch came from but does not update the policy.
    """

    def __init__(self, env: SupplyChainEnv, policy: Callable, n_sources: int):
        self.env = env
        self.policy = policy
        self.horizon = env.econ.horizon
        self.source_counts = np.zeros(n_sources, dtype=int)
        self.target_batches = 0
        self._return = 0.0

    def begin_episode(self, m: int) -> None:
        self.env.reset()
        self._return = 0.0

    def train_on(self, batch: Batch) -> None:
        if batch.source is None:
            self.target_batches += 1
        else:
            self.source_counts[batch.source] += 1

    def explore(self) -> Demonstration:
        state = self.env.state
        action = self.policy(state, self.env.rng)
        nxt, reward, _, _ = self.env.step(action)
        self._return += reward
        return Demonstration(encode_sa(state, action, nxt, self.env.econ.capacity), reward)

    def end_episode(self) -> float:
        return self._return


def run_standalone(base: BaseLearner, episodes: int) -> list[float]:
    """The base learner on its own: no reuse, no model."""
    base.reset()
    out = []
    for m in range(1, episodes + 1):
        base.begin_episode(m)
        for _ in range(base.horizon):
            base.train_on(Batch(None, []))
            base.explore()
        out.append(base.end_episode())
    return out


# ---------------------------------------------------------------------------
# selection strategies


class FixedSelector:
    def __init__(self, weights: SourceWeights):
        self.weights = weights

    def begin_episode(self, m: int) -> None:
        pass

    def pick(self, rng: np.random.Generator) -> int:
        return sample_source(self.weights, rng)

    def end_episode(self, objective: float) -> None:
        pass


class UCBSelector:
    """One arm per episode; reward is the min-max normalised improvement in the best value."""

    def __init__(self, n_sources: int, window: int = 50):
        self.counts = np.zeros(n_sources)
        self.sums = np.zeros(n_sources)
        self.window: deque[float] = deque(maxlen=window)
        self.arm = 0
        self.t = 0
        self.last: float | None = None

    @property
    def weights(self) -> SourceWeights:
        total = self.counts.sum()
        if total == 0:
            return SourceWeights.uniform(len(self.counts))
        return SourceWeights(self.counts / total)

    def begin_episode(self, m: int) -> None:
        self.t += 1
        self.arm = ucb_select(self.counts, self.sums, self.t)

    def pick(self, rng: np.random.Generator) -> int:
        return self.arm

    def end_episode(self, objective: float) -> None:
        gain = 0.0 if self.last is None else max(self.last - objective, 0.0)
        self.last = objective if self.last is None else min(self.last, objective)
        self.window.append(gain)
        lo, hi = min(self.window), max(self.window)
        reward = (gain - lo) / (hi - lo) if hi > lo else 0.0
        self.counts[self.arm] += 1
        self.sums[self.arm] += reward


# ---------------------------------------------------------------------------
# the loop


@dataclass
class RNGStreams:
    env: np.random.Generator
    reuse: np.random.Generator
    train: np.random.Generator
    seed: int | None = None

    @classmethod
    def from_seed(cls, seed: int) -> "RNGStreams":
        env, reuse, train = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
        return cls(env, reuse, train, seed)


@dataclass
class TrainSettings:
    pretrain_batches: int = 4000
    refine_batches: int = 1
    batch_size: int = 64
    optimizer: str = "sgd"
    lr: float = 1e-4
    train_sources: bool = True
    balanced_refine: bool = True


@dataclass
class RunTrace:
    seed: int | None
    source_names: list[str]
    p: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    target_size: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.objective)

    def record(self, p: float, objective: float, weights, target_size: int) -> None:
        self.p.append(float(p))
        self.objective.append(float(objective))
        self.weights.append(np.array(getattr(weights, "a", weights), dtype=float))
        self.target_size.append(int(target_size))

    def weight_matrix(self) -> np.ndarray:
        return np.vstack(self.weights) if self.weights else np.zeros((0, len(self.source_names)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "p_m", "objective", *[f"a_{s}" for s in self.source_names]])
            for m, (p, obj, a) in enumerate(zip(self.p, self.objective, self.weights), start=1):
                w.writerow([m, repr(p), repr(obj), *(repr(float(v)) for v in a)])

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (np.array(self.p), np.array(self.objective), self.weight_matrix()):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def write_manifest(path, seed, config: dict, datasets: Sequence[Dataset], extra: dict | None = None) -> None:
    blob = json.dumps(config, sort_keys=True, default=str)
    doc = {
        "seed": seed,
        "config": config,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "datasets": {ds.task_id: {"size": len(ds), "sha256": ds.fingerprint()} for ds in datasets},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)


def _source_batch(ds: Dataset, mode: str, size: int, rng: np.random.Generator, minimize: bool) -> list[Demonstration]:
    if mode == "best":
        return [ds.best(minimize)]
    idx = rng.integers(0, len(ds), size=size)
    return [Demonstration(ds.X[i], ds.y[i]) for i in idx]


def _solve(model: MultiHeadModel, sources: Sequence[int], target: int, warm=None) -> SourceWeights:
    qp = build_qp([model.heads[i] for i in sources], model.heads[target])
    return solve_qp(qp, warm_start=warm)


def run_bers(sources: Sequence[Dataset], base: BaseLearner, model: MultiHeadModel | None,
             schedule: ReuseSchedule, episodes: int, rng: RNGStreams, strategy: str = "bers",
             settings: TrainSettings | None = None, pretrained: bool = False,
             source_batch: str = "best", reuse_batch_size: int = 32, minimize: bool = True,
             accept: Callable[[Demonstration], bool] | None = None,
             on_episode: Callable[[int, MultiHeadModel | None, SourceWeights], None] | None = None,
             ) -> tuple[BaseLearner, RunTrace]:
    """Transfer loop.

    ``strategy`` is ``"bers"`` (QP weights, refreshed each episode),
    ``"equal"``, ``"single:<i>"``, ``"ucb"`` or ``"none"`` (never reuse).
    The model is only needed, and only trained, for ``"bers"``.
    """
    if not sources or any(len(ds) == 0 for ds in sources):
        raise EmptySourceData("every source needs at least one demonstration")
    settings = settings or TrainSettings()
    n = len(sources)
    names = [ds.task_id for ds in sources]
    target_data = Dataset("target", dim=sources[0].dim)

    weights: SourceWeights
    selector = None
    optimizer = None
    if strategy == "bers":
        if model is None or model.target is None:
            raise ValueError("strategy 'bers' needs a model with a target head")
        optimizer = make_optimizer(settings.optimizer, settings.lr)
        if not pretrained:
            pretrain(model, sources, settings.pretrain_batches, settings.batch_size, rng.train, optimizer)
        weights = _solve(model, model.source_indices, model.target)
    elif strategy == "equal":
        weights = SourceWeights.uniform(n)
    elif strategy.startswith("single"):
        weights = SourceWeights.one_hot(n, int(strategy.split(":", 1)[1]))
    elif strategy == "ucb":
        selector = UCBSelector(n)
        weights = selector.weights
    elif strategy == "none":
        weights = SourceWeights.uniform(n)
        schedule = ReuseSchedule.constant(0.0)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if selector is None:
        selector = FixedSelector(weights)

    for d in base.reset():
        if accept is None or accept(d):
            target_data.append(d)
    trace = RunTrace(rng.seed, names)
    if on_episode is not None:
        on_episode(0, model, weights)

    for m in range(1, episodes + 1):
        p = schedule_p(schedule, m)
        selector.begin_episode(m)
        base.begin_episode(m)
        for _ in range(base.horizon):
            if rng.reuse.random() < p:
                i = selector.pick(rng.reuse)
                batch = Batch(i, _source_batch(sources[i], source_batch, reuse_batch_size, rng.reuse, minimize))
            elif base.uses_target_batches and len(target_data):
                idx = rng.reuse.integers(0, len(target_data), size=reuse_batch_size)
                batch = Batch(None, [Demonstration(target_data.X[j], target_data.y[j]) for j in idx])
            else:
                batch = Batch(None, [])
            base.train_on(batch)
            d = base.explore()
            if accept is None or accept(d):
                target_data.append(d)
        objective = base.end_episode()

        if strategy == "bers":
            datasets = dict(zip(model.source_indices, sources))
            datasets[model.target] = target_data
            refine(model, datasets, settings.refine_batches, settings.batch_size, rng.train, optimizer,
                   train_sources=settings.train_sources, balanced=settings.balanced_refine)
            weights = _solve(model, model.source_indices, model.target, warm=weights)
            selector.weights = weights
        selector.end_episode(objective)
        if strategy == "ucb":
            weights = selector.weights
        trace.record(p, objective, weights, len(target_data))
        if on_episode is not None:
            on_episode(m, model, weights)
    base.target_data = target_data
    return base, trace


def run_multitask(learners: Sequence[BaseLearner], model: MultiHeadModel, schedule: ReuseSchedule,
                  episodes: int, rng: RNGStreams, settings: TrainSettings | None = None,
                  minimize: bool = True) -> list[RunTrace]:
    """Solve all tasks at once; task ``k`` reuses the best demonstrations of the others.

    One QP per task weights the other tasks, so trace ``k`` has ``N - 1`` columns.
    """
    settings = settings or TrainSettings()
    n = len(learners)
    if len(model.heads) != n or model.target is not None:
        raise ValueError("multi-task model needs one head per task and no designated target")
    data = [Dataset(tid) for tid in model.task_ids]
    for k, learner in enumerate(learners):
        for d in learner.reset():
            data[k].append(d)
    optimizer = make_optimizer(settings.optimizer, settings.lr)
    others = [[j for j in range(n) if j != k] for k in range(n)]
    refine(model, dict(enumerate(data)), settings.pretrain_batches, settings.batch_size, rng.train, optimizer)
    weights = [_solve(model, others[k], k) for k in range(n)]
    traces = [RunTrace(rng.seed, [model.task_ids[j] for j in others[k]]) for k in range(n)]

    for m in range(1, episodes + 1):
        p = schedule_p(schedule, m)
        objectives = []
        for k, learner in enumerate(learners):
            learner.begin_episode(m)
            for _ in range(learner.horizon):
                if rng.reuse.random() < p:
                    j = others[k][sample_source(weights[k], rng.reuse)]
                    learner.train_on(Batch(j, [data[j].best(minimize)]))
                else:
                    learner.train_on(Batch(None, []))
                data[k].append(learner.explore())
            objectives.append(learner.end_episode())
        refine(model, dict(enumerate(data)), settings.refine_batches, settings.batch_size, rng.train, optimizer)
        weights = [_solve(model, others[k], k, warm=weights[k]) for k in range(n)]
        for k in range(n):
            traces[k].record(p, objectives[k], weights[k], len(data[k]))
    return traces


def identify_sources(model: MultiHeadModel, sources: Sequence[Dataset], target_data: Dataset, rounds: int,
                     rng: RNGStreams, settings: TrainSettings | None = None, pretrained: bool = False,
                     snapshots: Sequence[int] = (),
                     ) -> tuple[list[SourceWeights], dict[int, list[dict]]]:
    """Model-only path: fit on fixed data and track the QP weights per refinement round.

    Returns the weights after pretraining (round 0) and each round, plus
    per-head posterior marginals (means and standard deviations of the
    weights) at the requested ``snapshots``.
    """
    settings = settings or TrainSettings()
    if not sources:
        raise EmptySourceData("no source datasets")
    optimizer = make_optimizer(settings.optimizer, settings.lr)
    if not pretrained:
        pretrain(model, sources, settings.pretrain_batches, settings.batch_size, rng.train, optimizer)
    datasets = dict(zip(model.source_indices, sources))
    datasets[model.target] = target_data
    refine(model, datasets, 0, settings.batch_size, rng.train, optimizer)
    history = [_solve(model, model.source_indices, model.target)]
    shots: dict[int, list[dict]] = {}
    if 0 in snapshots:
        shots[0] = posterior_marginals(model)
    for r in range(1, rounds + 1):
        refine(model, datasets, settings.refine_batches, settings.batch_size, rng.train, optimizer,
               train_sources=settings.train_sources, balanced=settings.balanced_refine)
        history.append(_solve(model, model.source_indices, model.target, warm=history[-1]))
        if r in snapshots:
            shots[r] = posterior_marginals(model)
    return history, shots


def posterior_marginals(model: MultiHeadModel) -> list[dict]:
    """Student-t marginal location and scale of each weight, per head."""
    out = []
    for tid, h in zip(model.task_ids, model.heads):
        scale = np.sqrt(np.diag(h.covariance) * h.beta / h.alpha)
        out.append({"task": tid, "mean": h.mu.tolist(), "scale": scale.tolist(), "dof": 2 * h.alpha})
    return out
