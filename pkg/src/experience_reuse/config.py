"""Experiment configuration: defaults, profiles and overrides.

A config is a nested dict. ``load_config`` starts from ``DEFAULTS``, applies
the chosen profile, then the user's JSON file; unknown keys are rejected so
typos fail loudly.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .bers import TrainSettings
from .diffevo import DEConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "trials": None,  # filled from the per-experiment default
    "de": {"CR": 0.7, "F": 0.5, "NP": 32, "lower": -4.0, "upper": 4.0, "D": 10, "sequential": False},
    "model": {
        "hidden": [200, 200],
        "d": 20,
        "l2": 1e-4,
        "optimizer": "sgd",
        "lr": 1e-4,
        "pretrain_batches": 4000,
        "batch_size": 64,
        "prior_alpha": 1.0,
        "prior_beta": 1.0,
        "balanced_refine": True,
    },
    "opt": {
        "sources": ["rosenbrock", "ackley", "sphere"],
        "ground_truth": "rastrigin",
        "source_threshold": 0.15,
        "source_max_generations": 3000,
        "generations": 200,
        "strategy": "bers",
        "schedule": {"mode": "geometric", "rate": 0.99},
        "refine_batches": 1,
        "trials": 20,
    },
    "multitask": {
        "tasks": ["rosenbrock", "ackley", "sphere", "rastrigin"],
        "generations": 200,
        "schedule": {"mode": "constant", "rate": 0.3},
        "trials": 20,
    },
    "supply": {
        "sources": ["scenario1", "scenario2", "scenario3"],
        "target": "target",
        "collect_steps": 30000,
        "sample_size": 10000,
        "trim": 0.025,
        "episodes": 200,
        "schedule": {"mode": "geometric", "rate": 0.95},
        "refine_batches": 20,
        "hidden": [300, 200],
        "target_samples": 2000,
        "rounds": 50,
        "snapshots": [0, 10, 50, 100, 200],
        "horizon": 200,
        "charge_factory_storage": True,
        "policy_concentration": 1.0,
        "trials": 5,
    },
}

PROFILES: dict[str, dict] = {
    "paper": {},
    "desk": {
        "model": {"hidden": [64, 64], "d": 8, "optimizer": "adam", "lr": 1e-3},
        "opt": {"source_max_generations": 400, "trials": 5},
        "multitask": {"trials": 5},
        "supply": {"hidden": [64, 64]},
    },
}


def merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, profile: str = "paper", overrides: dict | None = None) -> dict:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = merge(DEFAULTS, PROFILES[profile])
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
    cfg["profile"] = profile
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        de_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    m = cfg["model"]
    if m["optimizer"] not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer {m['optimizer']!r}")
    if m["d"] < 1 or any(h < 1 for h in m["hidden"]) or m["lr"] <= 0:
        raise ConfigError("model sizes and learning rate must be positive")
    for section in ("opt", "multitask", "supply"):
        sched = cfg[section]["schedule"]
        if sched["mode"] not in ("geometric", "constant") or not 0 <= sched["rate"] <= 1:
            raise ConfigError(f"{section}.schedule is invalid")
    if cfg["trials"] is not None and cfg["trials"] < 1:
        raise ConfigError("trials must be at least 1")
    if not 0 <= cfg["supply"]["trim"] < 0.5:
        raise ConfigError("supply.trim must lie in [0, 0.5)")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def de_config(cfg: dict) -> DEConfig:
    return DEConfig(**cfg["de"])


def train_settings(cfg: dict, section: str = "opt") -> TrainSettings:
    m = cfg["model"]
    return TrainSettings(
        pretrain_batches=m["pretrain_batches"],
        refine_batches=cfg[section]["refine_batches"],
        batch_size=m["batch_size"],
        optimizer=m["optimizer"],
        lr=m["lr"],
        balanced_refine=m["balanced_refine"],
    )


def encoder_shape(cfg: dict, section: str = "opt") -> tuple[list[int], int]:
    hidden = cfg["supply"]["hidden"] if section == "supply" else cfg["model"]["hidden"]
    return list(hidden), cfg["model"]["d"]


def trials(cfg: dict, section: str) -> int:
    return cfg["trials"] if cfg["trials"] is not None else cfg[section]["trials"]
