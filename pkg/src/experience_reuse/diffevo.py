"""Differential Evolution (rand/1/bin) with an optional donor-injection hook.

All randomness for mutation and crossover comes from the ``rng`` handed to
each call; injection decisions are made by the caller with its own stream,
so turning injection off never perturbs the optimizer's draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class PopulationTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class DEConfig:
    CR: float = 0.7
    F: float = 0.5
    NP: int = 32
    lower: float | np.ndarray = -4.0
    upper: float | np.ndarray = 4.0
    D: int = 10
    sequential: bool = False

    def __post_init__(self):
        if self.NP < 4:
            raise PopulationTooSmall(f"NP = {self.NP}; need at least 4 agents")
        if not 0.0 <= self.CR <= 1.0:
            raise ValueError("CR must lie in [0, 1]")
        if not 0.0 <= self.F <= 2.0:
            raise ValueError("F must lie in [0, 2]")

    @property
    def lo(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lower, dtype=float), (self.D,))

    @property
    def hi(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.upper, dtype=float), (self.D,))


@dataclass
class Population:
    points: np.ndarray
    fitness: np.ndarray

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    @property
    def best(self) -> tuple[np.ndarray, float]:
        i = self.best_index
        return self.points[i].copy(), float(self.fitness[i])

    def copy(self) -> "Population":
        return Population(self.points.copy(), self.fitness.copy())


DemoSink = Callable[[np.ndarray, float], None]
Injector = Callable[[int], "np.ndarray | None"]


def init_population(f: Callable, cfg: DEConfig, rng: np.random.Generator,
                    demo_sink: DemoSink | None = None) -> Population:
    points = np.clip(rng.uniform(cfg.lo, cfg.hi, size=(cfg.NP, cfg.D)), cfg.lo, cfg.hi)
    fitness = np.empty(cfg.NP)
    for i, x in enumerate(points):
        fitness[i] = f(x)
        if demo_sink is not None:
            demo_sink(x.copy(), float(fitness[i]))
    return Population(points, fitness)


def _candidates(i: int, NP: int, rng: np.random.Generator) -> tuple[int, int, int]:
    chosen: list[int] = []
    while len(chosen) < 3:
        j = int(rng.integers(NP))
        if j != i and j not in chosen:
            chosen.append(j)
    return chosen[0], chosen[1], chosen[2]


def make_trial(points: np.ndarray, i: int, cfg: DEConfig, rng: np.random.Generator,
               donor: np.ndarray | None = None) -> np.ndarray:
    """Trial vector for agent ``i``; ``donor`` replaces the first candidate."""
    a, b, c = _candidates(i, len(points), rng)
    R = int(rng.integers(cfg.D))
    r = rng.random(cfg.D)
    base = points[a] if donor is None else np.asarray(donor, dtype=float)
    mutant = base + cfg.F * (points[b] - points[c])
    cross = r < cfg.CR
    cross[R] = True
    y = np.where(cross, mutant, points[i])
    return np.clip(y, cfg.lo, cfg.hi)


class GenerationRunner:
    """Step-at-a-time view of one generation, used by the reuse loop.

    ``step(donor)`` processes the next agent; ``commit()`` installs the
    accepted trials (all at once unless ``cfg.sequential``).
    """

    def __init__(self, pop: Population, f: Callable, cfg: DEConfig, rng: np.random.Generator,
                 demo_sink: DemoSink | None = None):
        self.pop = pop
        self.f = f
        self.cfg = cfg
        self.rng = rng
        self.demo_sink = demo_sink
        self.next_pop = pop.copy()
        self.agent = 0

    def step(self, donor: np.ndarray | None = None) -> tuple[np.ndarray, float]:
        i = self.agent
        source = self.next_pop if self.cfg.sequential else self.pop
        y = make_trial(source.points, i, self.cfg, self.rng, donor)
        fy = float(self.f(y))
        if self.demo_sink is not None:
            self.demo_sink(y.copy(), fy)
        if fy <= self.next_pop.fitness[i]:
            self.next_pop.points[i] = y
            self.next_pop.fitness[i] = fy
        self.agent += 1
        return y, fy

    @property
    def done(self) -> bool:
        return self.agent >= self.cfg.NP

    def commit(self) -> Population:
        return self.next_pop


def de_generation(pop: Population, f: Callable, cfg: DEConfig, rng: np.random.Generator,
                  inject: Injector | tuple | None = None, demo_sink: DemoSink | None = None,
                  inject_rng: np.random.Generator | None = None) -> Population:
    """One generation with greedy replacement.

    ``inject`` is either a callable ``agent -> donor or None`` or a pair
    ``(point, p)``, in which case a coin from ``inject_rng`` decides per agent.
    """
    if len(pop.points) < 4:
        raise PopulationTooSmall("population has fewer than 4 agents")
    if isinstance(inject, tuple):
        point, p = inject
        coin_rng = inject_rng if inject_rng is not None else np.random.default_rng()
        inject = lambda _i: point if coin_rng.random() < p else None  # noqa: E731
    runner = GenerationRunner(pop, f, cfg, rng, demo_sink)
    while not runner.done:
        donor = inject(runner.agent) if inject is not None else None
        runner.step(donor)
    return runner.commit()


@dataclass
class DEResult:
    best_x: np.ndarray
    best_f: float
    history: list[tuple[int, float, float]] = field(default_factory=list)
    population: Population | None = None

    @property
    def generations(self) -> int:
        return self.history[-1][0] if self.history else 0


def run_de(f: Callable, cfg: DEConfig, rng: np.random.Generator, max_generations: int = 1000,
           target_fitness: float = -np.inf, demo_sink: DemoSink | None = None) -> DEResult:
    """Run DE until ``max_generations`` or the best fitness reaches ``target_fitness``.

    The stopping check precedes every generation, so a target already met by
    the initial population stops before generation 1.
    """
    pop = init_population(f, cfg, rng, demo_sink)
    history = [(0, float(pop.fitness.min()), float(pop.fitness.mean()))]
    for gen in range(1, max_generations + 1):
        if pop.fitness.min() <= target_fitness:
            break
        pop = de_generation(pop, f, cfg, rng, demo_sink=demo_sink)
        history.append((gen, float(pop.fitness.min()), float(pop.fitness.mean())))
    x, fx = pop.best
    return DEResult(x, fx, history, pop)


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_fitness", "mean_fitness"])
        for gen, best, mean in history:
            w.writerow([gen, repr(best), repr(mean)])
