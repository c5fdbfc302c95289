"""Factory plus six-warehouse inventory network with scenario transport costs.

Node 0 is the factory, nodes 1..6 are warehouses A..F. Within one step:

1. production enters the factory (capped at capacity, overflow lost);
2. the factory ships from its post-production stock and every warehouse
   ships from its stock at the start of the step; proportions are floored
   to whole units;
3. arrivals are added, capped at capacity, overflow lost;
4. Poisson demand at each warehouse is served from stock, shortfalls lost;
5. storage is charged on end-of-step stock.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .neural_linear import Dataset, DimensionMismatch

WAREHOUSES = "ABCDEF"
NODES = ("factory", *WAREHOUSES)
K = len(WAREHOUSES)
ACTION_DIM = 2 + K + K * K
STATE_DIM = K + 1
INPUT_DIM = 2 * STATE_DIM + ACTION_DIM
COST_TIERS = (0.03, 1.50, 3.00)


class InvalidAction(ValueError):
    pass


@dataclass(frozen=True)
class EconParams:
    demand_mean: tuple[float, ...] = (7, 6, 6, 5, 5, 5)
    price: float = 0.6
    production_cost: float = 0.1
    storage_cost: float = 0.03
    truck_capacity: int = 4
    max_production: int = 35
    capacity: int = 50
    horizon: int = 200
    discount: float = 0.96
    charge_factory_storage: bool = True


def route_names() -> list[str]:
    names = [f"factory->{w}" for w in WAREHOUSES]
    names += [f"{u}->{v}" for u in WAREHOUSES for v in WAREHOUSES if u != v]
    return names


@dataclass(frozen=True)
class ScenarioCosts:
    """Per-route truck dispatch cost; ``cost[u, v]`` for nodes ``u -> v``."""

    name: str
    cost: np.ndarray

    @classmethod
    def from_routes(cls, name: str, routes: dict[str, float]) -> "ScenarioCosts":
        expected = set(route_names())
        if set(routes) != expected:
            missing = sorted(expected - set(routes))
            extra = sorted(set(routes) - expected)
            raise ValueError(f"scenario {name!r}: missing routes {missing}, unknown routes {extra}")
        cost = np.zeros((STATE_DIM, STATE_DIM))
        for route, tier in routes.items():
            if tier not in COST_TIERS:
                raise ValueError(f"route {route} has cost {tier}, not one of {COST_TIERS}")
            u, v = route.split("->")
            cost[NODES.index(u), NODES.index(v)] = tier
        return cls(name, cost)

    def routes(self) -> dict[str, float]:
        out = {}
        for r in route_names():
            u, v = r.split("->")
            out[r] = float(self.cost[NODES.index(u), NODES.index(v)])
        return out


def load_scenario(path_or_name) -> tuple[ScenarioCosts, EconParams]:
    """Load a scenario JSON file, or a bundled one by name (``scenario1`` .. ``target``)."""
    path = Path(path_or_name)
    if path.suffix == ".json" and path.exists():
        doc = json.loads(path.read_text())
    else:
        doc = json.loads(resources.files("experience_reuse.scenarios").joinpath(f"{path_or_name}.json").read_text())
    econ = EconParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.get("econ", {}).items()})
    return ScenarioCosts.from_routes(doc["name"], doc["routes"]), econ


def save_scenario(path, scenario: ScenarioCosts, econ: EconParams | None = None) -> None:
    doc = {"name": scenario.name, "routes": scenario.routes()}
    if econ is not None:
        doc["econ"] = asdict(econ)
    Path(path).write_text(json.dumps(doc, indent=2))


BUNDLED_SCENARIOS = ("scenario1", "scenario2", "scenario3", "target")


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class ActionVector:
    production: float
    factory: np.ndarray     # (K + 1,) keep, A..F
    warehouse: np.ndarray   # (K, K) row w: shares of w's stock sent to A..F, diagonal = keep

    def flat(self) -> np.ndarray:
        return np.concatenate([[self.production], self.factory, self.warehouse.ravel()])

    @classmethod
    def from_flat(cls, a) -> "ActionVector":
        a = np.asarray(a, dtype=float)
        if a.shape != (ACTION_DIM,):
            raise DimensionMismatch(f"action must have {ACTION_DIM} entries, got {a.shape}")
        return cls(float(a[0]), a[1:K + 2].copy(), a[K + 2:].reshape(K, K).copy())

    def validate(self, tol: float = 1e-9) -> None:
        if not 0.0 <= self.production <= 1.0:
            raise InvalidAction(f"production fraction {self.production} outside [0, 1]")
        blocks = [self.factory, *self.warehouse]
        for blk in blocks:
            if np.any(blk < -tol) or abs(blk.sum() - 1.0) > tol:
                raise InvalidAction(f"shipping block {blk} is not a probability vector")


def idle_action() -> ActionVector:
    """Produce nothing and keep all stock where it is."""
    factory = np.zeros(K + 1)
    factory[0] = 1.0
    return ActionVector(0.0, factory, np.eye(K))


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class SupplyChainState:
    stock: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.stock, dtype=np.int64)
        if s.shape != (STATE_DIM,):
            raise DimensionMismatch(f"state must have {STATE_DIM} entries")
        object.__setattr__(self, "stock", s)

    @classmethod
    def empty(cls) -> "SupplyChainState":
        return cls(np.zeros(STATE_DIM, dtype=np.int64))


def step(state: SupplyChainState, action: ActionVector, scenario: ScenarioCosts,
         econ: EconParams, rng: np.random.Generator) -> tuple[SupplyChainState, float, dict]:
    action.validate()
    cap = econ.capacity
    stock = state.stock.copy()

    produced = int(math.floor(action.production * econ.max_production + 1e-9))
    stock[0] += produced
    overflow = max(stock[0] - cap, 0)
    stock[0] -= overflow

    shipped = np.zeros((STATE_DIM, STATE_DIM), dtype=np.int64)
    shipped[0, 1:] = np.floor(action.factory[1:] * stock[0] + 1e-9).astype(np.int64)
    for w in range(K):
        row = np.floor(action.warehouse[w] * stock[w + 1] + 1e-9).astype(np.int64)
        row[w] = 0
        shipped[w + 1, 1:] = row
    stock -= shipped.sum(axis=1)
    stock += shipped.sum(axis=0)
    spill = np.maximum(stock - cap, 0)
    overflow += int(spill.sum())
    stock -= spill

    demand = rng.poisson(econ.demand_mean)
    sold = np.minimum(stock[1:], demand)
    stock[1:] -= sold

    trucks = -(-shipped // econ.truck_capacity)
    revenue = econ.price * float(sold.sum())
    production_cost = econ.production_cost * produced
    stored = stock.sum() if econ.charge_factory_storage else stock[1:].sum()
    storage_cost = econ.storage_cost * float(stored)
    transport_cost = float(np.sum(trucks * scenario.cost))
    reward = revenue - production_cost - storage_cost - transport_cost
    info = {
        "revenue": revenue,
        "production_cost": production_cost,
        "storage_cost": storage_cost,
        "transport_cost": transport_cost,
        "produced": produced,
        "sold": int(sold.sum()),
        "demand": demand,
        "overflow": int(overflow),
        "shipped": shipped,
        "trucks": trucks,
    }
    return SupplyChainState(stock), reward, info


class SupplyChainEnv:
    """Episodic wrapper around :func:`step` with a fixed horizon."""

    def __init__(self, scenario: ScenarioCosts, econ: EconParams | None = None,
                 rng: np.random.Generator | None = None, random_start: bool = True):
        self.scenario = scenario
        self.econ = econ or EconParams()
        self.rng = np.random.default_rng() if rng is None else rng
        self.random_start = random_start
        self.state = SupplyChainState.empty()
        self.t = 0

    def reset(self) -> SupplyChainState:
        if self.random_start:
            self.state = SupplyChainState(self.rng.integers(0, self.econ.capacity + 1, size=STATE_DIM))
        else:
            self.state = SupplyChainState.empty()
        self.t = 0
        return self.state

    def step(self, action: ActionVector):
        prev = self.state
        self.state, reward, info = step(prev, action, self.scenario, self.econ, self.rng)
        self.t += 1
        done = self.t >= self.econ.horizon
        return self.state, reward, done, info


# ---------------------------------------------------------------------------
# demonstrations


@dataclass
class RandomPolicy:
    """Uniform production share and Dirichlet shipping shares.

    ``cheap_bias`` multiplies the concentration of routes listed in
    ``bias_scenario`` at the cheapest tier; with the default of 1 the policy
    ignores costs, so every scenario sees the same state-action process.
    """

    concentration: float = 1.0
    cheap_bias: float = 1.0
    bias_scenario: ScenarioCosts | None = None

    def __call__(self, state: SupplyChainState, rng: np.random.Generator) -> ActionVector:
        conc_f = np.full(K + 1, self.concentration)
        conc_w = np.full((K, K), self.concentration)
        if self.bias_scenario is not None and self.cheap_bias != 1.0:
            cheap = self.bias_scenario.cost == COST_TIERS[0]
            conc_f[1:][cheap[0, 1:]] *= self.cheap_bias
            conc_w[cheap[1:, 1:]] *= self.cheap_bias
        production = float(rng.random())
        factory = rng.dirichlet(conc_f)
        warehouse = np.vstack([rng.dirichlet(conc_w[w]) for w in range(K)])
        return ActionVector(production, factory, warehouse)


def encode_sa(state: SupplyChainState, action: ActionVector, next_state: SupplyChainState,
              capacity: int = 50) -> np.ndarray:
    """Model input: scaled stocks before, the 44 action entries, scaled stocks after."""
    a = action.flat()
    if a.shape != (ACTION_DIM,):
        raise DimensionMismatch("action has the wrong width")
    return np.concatenate([state.stock / capacity, a, next_state.stock / capacity])


def generate_demonstrations(scenario: ScenarioCosts, policy: Callable, n_steps: int,
                            rng: np.random.Generator, sample_size: int | None = None,
                            econ: EconParams | None = None, task_id: str | None = None) -> Dataset:
    """Roll out ``policy`` for ``n_steps`` transitions and optionally subsample.

    Inputs are :func:`encode_sa` vectors and targets the step rewards.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    env = SupplyChainEnv(scenario, econ, rng)
    X = np.empty((n_steps, INPUT_DIM))
    y = np.empty(n_steps)
    state = env.reset()
    for t in range(n_steps):
        action = policy(state, rng)
        nxt, reward, done, _ = env.step(action)
        X[t] = encode_sa(state, action, nxt, env.econ.capacity)
        y[t] = reward
        state = env.reset() if done else nxt
    if sample_size is not None and sample_size < n_steps:
        idx = np.sort(rng.choice(n_steps, size=sample_size, replace=False))
        X, y = X[idx], y[idx]
    return Dataset(task_id or scenario.name, X, y)


def trim_outliers(ds: Dataset, frac: float = 0.025) -> tuple[Dataset, tuple[float, float]]:
    """Drop the ``floor(frac * n)`` lowest- and highest-reward rows."""
    if not 0.0 <= frac < 0.5:
        raise ValueError("frac must lie in [0, 0.5)")
    n = len(ds)
    if n == 0:
        return ds, (math.nan, math.nan)
    k = int(math.floor(frac * n))
    order = np.argsort(ds.y, kind="stable")
    keep = np.sort(order[k:n - k])
    out = ds.subset(keep)
    return out, (float(out.y.min()), float(out.y.max()))


def within_bounds(ds: Dataset, bounds: list[tuple[float, float]]) -> Dataset:
    """Keep rows whose reward lies inside the envelope of all source bounds."""
    lo = min(b[0] for b in bounds)
    hi = max(b[1] for b in bounds)
    mask = (ds.y >= lo) & (ds.y <= hi)
    return ds.subset(np.flatnonzero(mask))


def write_episode_trace(path, rows: list[dict]) -> None:
    cols = ["step", "reward", "revenue", "production_cost", "storage_cost", "transport_cost",
            *[f"stock_{n}" for n in NODES]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r.get(c, "") for c in cols])
