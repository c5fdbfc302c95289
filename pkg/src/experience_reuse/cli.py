"""Command-line runner for the optimisation and supply-chain experiments.

Every command writes CSV/JSON under ``--out`` together with a
``manifest.json`` (config echo, seeds, dataset hashes) sufficient to re-run
it bit-identically.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bers, diffevo
from . import neural_linear as nl
from . import supply_chain as sc
from .benchmarks import BenchmarkTask, model_target_transform
from .config import ConfigError, config_hash, de_config, encoder_shape, load_config, train_settings, trials
from .source_weighting import AlphaTooSmall, WeightTraceWriter

log = logging.getLogger("experience_reuse")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


class MissingDataset(FileNotFoundError):
    pass


def schedule_from(sched: dict) -> bers.ReuseSchedule:
    return bers.ReuseSchedule(sched["mode"], sched["rate"])


def make_model(cfg: dict, in_dim: int, names, target: str | None, rng, section: str = "opt") -> nl.MultiHeadModel:
    hidden, d = encoder_shape(cfg, section)
    m = cfg["model"]
    enc = nl.Encoder.init(in_dim, hidden, d, rng=rng, l2=m["l2"])
    prior = nl.NIGPrior.isotropic(d + 1, m["prior_alpha"], m["prior_beta"])
    return nl.MultiHeadModel.create(enc, names, prior=prior, target=target)


def load_datasets(data_dir: Path, names) -> list[nl.Dataset]:
    out = []
    for name in names:
        path = Path(data_dir) / f"{name}.csv"
        if not path.exists():
            raise MissingDataset(f"no dataset at {path}; run the matching gen-source command first")
        out.append(nl.Dataset.load_csv(path))
    return out


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=float))


def aggregate(traces: list[bers.RunTrace], path: Path) -> None:
    """Per-episode mean and standard error of the objective and mean weights across trials."""
    obj = np.array([t.objective for t in traces])
    W = np.array([t.weight_matrix() for t in traces])
    se = obj.std(axis=0, ddof=1) / math.sqrt(len(traces)) if len(traces) > 1 else np.zeros(obj.shape[1])
    names = traces[0].source_names
    with open(path, "w") as fh:
        fh.write(",".join(["episode", "mean_objective", "se_objective", *[f"mean_a_{n}" for n in names]]) + "\n")
        for m in range(obj.shape[1]):
            row = [m + 1, obj[:, m].mean(), se[m], *W[:, m].mean(axis=0)]
            fh.write(",".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# optimisation


def generate_opt_source(name: str, cfg: dict, seed: int, k: int) -> tuple[nl.Dataset, diffevo.DEResult]:
    ds = nl.Dataset(name, dim=cfg["de"]["D"])
    res = diffevo.run_de(
        BenchmarkTask(name, cfg["de"]["D"]), de_config(cfg), np.random.default_rng([seed, k]),
        max_generations=cfg["opt"]["source_max_generations"], target_fitness=cfg["opt"]["source_threshold"],
        demo_sink=lambda x, f: ds.append(nl.Demonstration(x, model_target_transform(f))),
    )
    return ds, res


def cmd_gen_source_opt(cfg: dict, out: Path) -> int:
    datasets, runs = [], {}
    for k, name in enumerate(cfg["opt"]["sources"]):
        ds, res = generate_opt_source(name, cfg, cfg["seed"], k)
        ds.save_csv(out / f"{name}.csv")
        datasets.append(ds)
        runs[name] = {"generations": res.generations, "best_fitness": res.best_f, "size": len(ds)}
        log.info("%s: %d demonstrations in %d generations (best %.4f)", name, len(ds), res.generations, res.best_f)
    bers.write_manifest(out / "manifest.json", cfg["seed"], cfg, datasets, {"runs": runs})
    return EXIT_OK


def run_opt_trial(cfg: dict, sources: list[nl.Dataset], seed: int, strategy: str | None = None,
                  ground_truth: str | None = None, episodes: int | None = None):
    """One transfer run on the optimisation benchmark; returns ``(learner, trace)``."""
    opt = cfg["opt"]
    strategy = strategy or opt["strategy"]
    streams = bers.RNGStreams.from_seed(seed)
    task = BenchmarkTask(ground_truth or opt["ground_truth"], cfg["de"]["D"])
    base = bers.DELearner(task, de_config(cfg), streams.env)
    model = None
    if strategy == "bers":
        model = make_model(cfg, cfg["de"]["D"], [s.task_id for s in sources], "target", streams.train)
    return bers.run_bers(sources, base, model, schedule_from(opt["schedule"]), episodes or opt["generations"],
                         streams, strategy=strategy, settings=train_settings(cfg, "opt"))


def cmd_transfer_opt(cfg: dict, out: Path, data: Path) -> int:
    sources = load_datasets(data, cfg["opt"]["sources"])
    traces = []
    for t in range(trials(cfg, "opt")):
        seed = cfg["seed"] + t
        base, trace = run_opt_trial(cfg, sources, seed)
        tdir = out / f"trial_{t:02d}"
        tdir.mkdir(parents=True, exist_ok=True)
        trace.write_csv(tdir / "trace.csv")
        diffevo.write_history(tdir / "history.csv", base.history)
        bers.write_manifest(tdir / "manifest.json", seed, cfg, sources, {"trace_sha256": trace.digest()})
        traces.append(trace)
        log.info("trial %d: best %.4f, final weights %s", t, trace.objective[-1], np.round(trace.weights[-1], 3))
    aggregate(traces, out / "summary.csv")
    bers.write_manifest(out / "manifest.json", cfg["seed"], cfg, sources, {"trials": len(traces)})
    return EXIT_OK


def cmd_multitask_opt(cfg: dict, out: Path) -> int:
    mt = cfg["multitask"]
    names = mt["tasks"]
    per_task: dict[str, list[bers.RunTrace]] = {n: [] for n in names}
    for t in range(trials(cfg, "multitask")):
        seed = cfg["seed"] + t
        streams = bers.RNGStreams.from_seed(seed)
        env_rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 1]).spawn(len(names))]
        learners = [bers.DELearner(BenchmarkTask(n, cfg["de"]["D"]), de_config(cfg), r) for n, r in zip(names, env_rngs)]
        model = make_model(cfg, cfg["de"]["D"], names, None, streams.train)
        settings = train_settings(cfg, "opt")
        traces = bers.run_multitask(learners, model, schedule_from(mt["schedule"]), mt["generations"], streams,
                                    settings)
        tdir = out / f"trial_{t:02d}"
        tdir.mkdir(parents=True, exist_ok=True)
        for name, trace in zip(names, traces):
            trace.write_csv(tdir / f"{name}.csv")
            per_task[name].append(trace)
        write_json(tdir / "manifest.json", {"seed": seed, "config": cfg, "config_hash": config_hash(cfg)})
    for name, traces in per_task.items():
        aggregate(traces, out / f"summary_{name}.csv")
    write_json(out / "manifest.json", {"seed": cfg["seed"], "config": cfg, "config_hash": config_hash(cfg)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# supply chain


def econ_from(cfg: dict, base: sc.EconParams | None = None) -> sc.EconParams:
    from dataclasses import replace

    s = cfg["supply"]
    return replace(base or sc.EconParams(), horizon=s["horizon"], charge_factory_storage=s["charge_factory_storage"])


def generate_supply_source(name: str, cfg: dict, seed: int, k: int) -> tuple[nl.Dataset, tuple[float, float]]:
    s = cfg["supply"]
    scenario, econ = sc.load_scenario(name)
    ds = sc.generate_demonstrations(scenario, sc.RandomPolicy(s["policy_concentration"]), s["collect_steps"],
                                    np.random.default_rng([seed, k]), sample_size=s["sample_size"],
                                    econ=econ_from(cfg, econ), task_id=name)
    return sc.trim_outliers(ds, s["trim"])


def cmd_gen_source_supply(cfg: dict, out: Path) -> int:
    datasets, bounds = [], {}
    for k, name in enumerate(cfg["supply"]["sources"]):
        ds, b = generate_supply_source(name, cfg, cfg["seed"], k)
        ds.save_csv(out / f"{name}.csv")
        datasets.append(ds)
        bounds[name] = list(b)
        log.info("%s: %d demonstrations, reward bounds [%.3f, %.3f]", name, len(ds), *b)
    bers.write_manifest(out / "manifest.json", cfg["seed"], cfg, datasets, {"reward_bounds": bounds})
    return EXIT_OK


def source_bounds(sources: list[nl.Dataset]) -> list[tuple[float, float]]:
    # trimmed datasets: their own extremes are the retained bounds
    return [(float(ds.y.min()), float(ds.y.max())) for ds in sources]


def supply_target_samples(cfg: dict, sources: list[nl.Dataset], seed: int) -> nl.Dataset:
    s = cfg["supply"]
    scenario, econ = sc.load_scenario(s["target"])
    ds = sc.generate_demonstrations(scenario, sc.RandomPolicy(s["policy_concentration"]), s["target_samples"],
                                    np.random.default_rng([seed, 99]), econ=econ_from(cfg, econ), task_id="target")
    return sc.within_bounds(ds, source_bounds(sources))


def snapshot_writer(path: Path, wanted):
    shots: dict[int, list] = {}

    def on_episode(m, model, weights):
        if m in wanted and model is not None:
            shots[m] = {"weights": np.asarray(weights.a).tolist(), "heads": bers.posterior_marginals(model)}
            write_json(path, shots)
    return on_episode


def cmd_transfer_supply(cfg: dict, out: Path, data: Path) -> int:
    s = cfg["supply"]
    sources = load_datasets(data, s["sources"])
    bounds = source_bounds(sources)
    lo, hi = min(b[0] for b in bounds), max(b[1] for b in bounds)
    traces = []
    for t in range(trials(cfg, "supply")):
        seed = cfg["seed"] + t
        streams = bers.RNGStreams.from_seed(seed)
        scenario, econ = sc.load_scenario(s["target"])
        env = sc.SupplyChainEnv(scenario, econ_from(cfg, econ), streams.env)
        learner = bers.PolicyLearner(env, sc.RandomPolicy(s["policy_concentration"]), len(sources))
        model = make_model(cfg, sc.INPUT_DIM, s["sources"], "target", streams.train, section="supply")
        tdir = out / f"trial_{t:02d}"
        tdir.mkdir(parents=True, exist_ok=True)
        _, trace = bers.run_bers(
            sources, learner, model, schedule_from(s["schedule"]), s["episodes"], streams,
            settings=train_settings(cfg, "supply"), source_batch="uniform", reuse_batch_size=32, minimize=False,
            accept=lambda d: lo <= d.y <= hi, on_episode=snapshot_writer(tdir / "snapshots.json", set(s["snapshots"])),
        )
        trace.write_csv(tdir / "trace.csv")
        bers.write_manifest(tdir / "manifest.json", seed, cfg, sources,
                            {"trace_sha256": trace.digest(), "source_batches": learner.source_counts.tolist()})
        traces.append(trace)
    aggregate(traces, out / "summary.csv")
    bers.write_manifest(out / "manifest.json", cfg["seed"], cfg, sources, {"trials": len(traces)})
    return EXIT_OK


def cmd_weights_only(cfg: dict, out: Path, data: Path) -> int:
    """Model-only source identification on fixed target samples; no reuse loop."""
    s = cfg["supply"]
    sources = load_datasets(data, s["sources"])
    for t in range(trials(cfg, "supply")):
        seed = cfg["seed"] + t
        streams = bers.RNGStreams.from_seed(seed)
        target = supply_target_samples(cfg, sources, seed)
        model = make_model(cfg, sc.INPUT_DIM, s["sources"], "target", streams.train, section="supply")
        history, shots = bers.identify_sources(model, sources, target, s["rounds"], streams,
                                               train_settings(cfg, "supply"), snapshots=s["snapshots"])
        tdir = out / f"trial_{t:02d}"
        tdir.mkdir(parents=True, exist_ok=True)
        writer = WeightTraceWriter(tdir / "weights.csv", len(sources), s["sources"])
        for r, w in enumerate(history):
            writer.append(r, w)
        write_json(tdir / "snapshots.json", shots)
        bers.write_manifest(tdir / "manifest.json", seed, cfg, [*sources, target])
        log.info("trial %d: final weights %s", t, np.round(history[-1].a, 3))
    return EXIT_OK


# ---------------------------------------------------------------------------


COMMANDS = ("gen-source-opt", "transfer-opt", "multitask-opt", "gen-source-supply", "transfer-supply", "weights-only")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="experience-reuse", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file overriding the defaults key by key")
    p.add_argument("--seed", type=int, help="base seed; trial t uses seed + t")
    p.add_argument("--trials", type=int)
    p.add_argument("--profile", choices=("paper", "desk"), default="paper")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--data", help="directory holding source datasets (default: --out)")
    p.add_argument("--strategy", help="transfer-opt selection: bers, ucb, equal, single:<i> or none")
    p.add_argument("--ground-truth", help="transfer-opt target function")
    p.add_argument("--target", help="supply-chain target scenario")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    opt = {k: v for k, v in (("strategy", args.strategy), ("ground_truth", args.ground_truth)) if v is not None}
    if opt:
        overrides["opt"] = opt
    if args.target is not None:
        overrides["supply"] = {"target": args.target}
    out = Path(args.out)
    data = Path(args.data) if args.data else out
    try:
        cfg = load_config(args.config, args.profile, overrides)
        if cfg["opt"]["strategy"].split(":")[0] not in ("bers", "ucb", "equal", "single", "none"):
            raise ConfigError(f"unknown strategy {cfg['opt']['strategy']!r}")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-source-opt":
            return cmd_gen_source_opt(cfg, out)
        if args.command == "transfer-opt":
            return cmd_transfer_opt(cfg, out, data)
        if args.command == "multitask-opt":
            return cmd_multitask_opt(cfg, out)
        if args.command == "gen-source-supply":
            return cmd_gen_source_supply(cfg, out)
        if args.command == "transfer-supply":
            return cmd_transfer_supply(cfg, out, data)
        return cmd_weights_only(cfg, out, data)
    except MissingDataset as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (np.linalg.LinAlgError, AlphaTooSmall, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
