"""Shifted test functions on ``[-4, 4]^D`` and their output transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural_linear import DimensionMismatch

BOUNDS = (-4.0, 4.0)


class NegativeInput(ValueError):
    pass


def rosenbrock(x: np.ndarray) -> float:
    # the 100 multiplies both terms here, unlike the textbook form
    return float(np.sum(100.0 * ((x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2)))


def ackley(x: np.ndarray) -> float:
    D = len(x)
    return float(
        -20.0 * math.exp(-0.2 * math.sqrt(np.sum(x**2) / D))
        - math.exp(np.sum(np.cos(2.0 * math.pi * x)) / D)
        + 20.0 + math.e
    )


def sphere(x: np.ndarray) -> float:
    return float(np.sum((x + 2.0) ** 2))


def rastrigin(x: np.ndarray) -> float:
    z = x + 2.0
    return float(10.0 * len(x) + np.sum(z**2 - 10.0 * np.cos(2.0 * math.pi * z)))


_FUNCTIONS = {
    "rosenbrock": (rosenbrock, 1.0),
    "ackley": (ackley, 0.0),
    "sphere": (sphere, -2.0),
    "rastrigin": (rastrigin, -2.0),
}


@dataclass(frozen=True)
class BenchmarkTask:
    name: str
    dim: int = 10

    def __post_init__(self):
        if self.name not in _FUNCTIONS:
            raise KeyError(f"unknown benchmark {self.name!r}; choose from {sorted(_FUNCTIONS)}")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.full(self.dim, BOUNDS[0]), np.full(self.dim, BOUNDS[1])

    @property
    def optimum(self) -> np.ndarray:
        return np.full(self.dim, _FUNCTIONS[self.name][1])

    def raw(self, x) -> float:
        return evaluate_raw(self, x)

    def __call__(self, x) -> float:
        return evaluate_transformed(self, x)


def evaluate_raw(task: BenchmarkTask, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (task.dim,):
        raise DimensionMismatch(f"{task.name} expects shape ({task.dim},), got {x.shape}")
    return _FUNCTIONS[task.name][0](x)


def evaluate_transformed(task: BenchmarkTask, x) -> float:
    """Optimizer-facing fitness: square root for all but Ackley, Rosenbrock further divided by 10."""
    y = evaluate_raw(task, x)
    if task.name == "ackley":
        # cancellation at the optimum can leave a value of order -1e-16
        return max(y, 0.0)
    y = math.sqrt(max(y, 0.0))
    return y / 10.0 if task.name == "rosenbrock" else y


def model_target_transform(y: float) -> float:
    """``log(1 + y)``, applied to fitness values before they become training targets."""
    if y < 0:
        raise NegativeInput(f"expected a non-negative value, got {y}")
    return math.log1p(y)
