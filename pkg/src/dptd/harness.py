"""Command-line orchestration: generate data, calibrate noise, train, aggregate.

Exit codes: 0 success, 2 invalid configuration, 3 invalid privacy regime.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import objective
from .mdp import (
    DatasetMode,
    FAMILIES,
    Policy,
    ParseError,
    TrajectoryDataset,
    build_family,
    dump_dataset,
    load_dataset,
    sample_dataset,
)
from .optimizer import BaselineKind, ConfigError, DptdConfig, run, run_baseline
from .privacy import (
    InvalidRegime,
    NoiseCalibration,
    PrivacyBudget,
    accounting_report,
    calibrate_best,
    calibrate_sas,
    calibrate_trajectory,
)
from .runlog import RunLog, content_hash
from .value_model import build_model, one_hot_features

EXIT_OK, EXIT_CONFIG, EXIT_PRIVACY = 0, 2, 3

ALGORITHMS = ("dptd",) + tuple(k.value for k in BaselineKind)
PRIVATE_CAPABLE = ("dptd", BaselineKind.PRIVATE_PLAIN_SGDA.value)
# beta' grid used by "search"; fine and log-spaced because small beta' is
# what makes low-epsilon calibrations admissible
SEARCH_BETA_GRID = tuple(float(b) for b in np.logspace(-9, -0.05, 300))
_DPTD_KEYS = {f.name for f in fields(DptdConfig)} - {"noise", "seed"}


@dataclass
class ExperimentSpec:
    family: str = "chain"
    family_args: dict = field(default_factory=dict)
    dataset: str | None = None  # path to a generated dataset; overrides sampling
    policy: str = "uniform"
    mode: str = "sas"
    n: int = 10_000  # transitions (sas) or max trajectory length (trajectory)
    m: int = 5  # trajectories, trajectory mode only
    data_seed: int = 0
    model: str = "linear"
    features: str = "one_hot"  # or "gaussian"
    feature_dim: int = 3
    hidden: int = 50
    config: dict = field(default_factory=dict)
    epsilons: list = field(default_factory=list)
    delta: float = 1e-5
    beta_prime: float | str = 0.5  # or "search"
    algorithms: list = field(default_factory=lambda: ["dptd"])
    seeds: list = field(default_factory=lambda: [0])
    epoch: int = 100
    out_dir: str = "runs"
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return asdict(self)

    def experiment_dict(self) -> dict:
        """The spec minus execution details, as echoed into run headers."""
        return {k: v for k, v in asdict(self).items() if k not in ("out_dir", "workers")}

    def validate(self) -> None:
        if self.dataset is None and self.family not in FAMILIES:
            raise ConfigError(f"unknown MDP family {self.family!r}; choose from {sorted(FAMILIES)}")
        if self.dataset is not None and not Path(self.dataset).exists():
            raise ConfigError(f"dataset file not found: {self.dataset}")
        if self.policy != "uniform":
            raise ConfigError("only the uniform behaviour policy is built in")
        if self.mode not in ("sas", "trajectory"):
            raise ConfigError(f"mode must be 'sas' or 'trajectory', got {self.mode!r}")
        if self.model not in ("linear", "mlp"):
            raise ConfigError(f"model must be 'linear' or 'mlp', got {self.model!r}")
        if self.features not in ("one_hot", "gaussian"):
            raise ConfigError(f"features must be 'one_hot' or 'gaussian', got {self.features!r}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"unknown algorithms {bad}; choose from {list(ALGORITHMS)}")
        if BaselineKind.PRIVATE_PLAIN_SGDA.value in self.algorithms and not self.epsilons:
            raise ConfigError("private_plain_sgda needs a nonempty epsilons list")
        if any(not float(e) > 0 for e in self.epsilons):
            raise ConfigError("epsilons must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not (self.beta_prime == "search" or (isinstance(self.beta_prime, (int, float)) and 0 < self.beta_prime < 1)):
            raise ConfigError("beta_prime must be in (0, 1) or 'search'")
        if not self.seeds:
            raise ConfigError("seeds list is empty")
        if min(self.n, self.m, self.epoch, self.workers) < 1:
            raise ConfigError("n, m, epoch and workers must be positive")
        unknown = set(self.config) - _DPTD_KEYS
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        if self.epsilons and self.config.get("clip_G") is None:
            raise ConfigError("private runs need config.clip_G")
        self.base_config()  # surfaces DptdConfig errors early

    def base_config(self, seed: int = 0) -> DptdConfig:
        return DptdConfig(**self.config, seed=seed)

    # ------------------------------------------------------------ building blocks

    def build_dataset(self) -> TrajectoryDataset:
        if self.dataset is not None:
            return load_dataset(self.dataset)
        mdp = build_family(self.family, **self.family_args)
        pi = Policy.uniform(mdp.n_states, mdp.n_actions)
        rng = np.random.default_rng(self.data_seed)
        if self.mode == "sas":
            return sample_dataset(mdp, pi, rng, self.n)
        return sample_dataset(mdp, pi, rng, self.n, n_trajectories=self.m)

    def build_model(self, dataset: TrajectoryDataset):
        if self.features == "one_hot":
            phi = one_hot_features(dataset.n_states)
        else:
            phi = np.random.default_rng(self.data_seed).normal(size=(dataset.n_states, self.feature_dim))
        return build_model(self.model, phi, hidden=self.hidden)

    def calibrate(self, epsilon: float, dataset: TrajectoryDataset) -> NoiseCalibration:
        cfg = self.base_config()
        budget = PrivacyBudget(float(epsilon), self.delta)
        if dataset.mode is DatasetMode.TRAJECTORY:
            calibrator, args = calibrate_trajectory, (budget, cfg.T, dataset.n_max, dataset.n_trajectories, cfg.clip_G)
        else:
            calibrator, args = calibrate_sas, (budget, cfg.T, dataset.n_transitions, cfg.clip_G)
        if self.beta_prime == "search":
            return calibrate_best(calibrator, *args, beta_grid=SEARCH_BETA_GRID)
        return calibrator(*args, beta_prime=float(self.beta_prime))


def load_spec(path: str | Path | None, overrides: dict | None = None) -> ExperimentSpec:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read spec {path}: {err}") from err
    for k, v in (overrides or {}).items():
        if k in _DPTD_KEYS and k not in {f.name for f in fields(ExperimentSpec)}:
            data.setdefault("config", {})[k] = v
        else:
            data[k] = v
    return ExperimentSpec.from_dict(data)


# ---------------------------------------------------------------- training


def eps_label(eps) -> str:
    return "inf" if eps is None else f"{float(eps):g}"


def cell_name(algorithm: str, eps, seed: int) -> str:
    return f"{algorithm}_eps{eps_label(eps)}_seed{seed}"


def experiment_cells(spec: ExperimentSpec) -> list[tuple[str, float | None, int]]:
    cells = []
    for algo in spec.algorithms:
        eps_list = spec.epsilons if (algo in PRIVATE_CAPABLE and spec.epsilons) else [None]
        for eps in eps_list:
            for seed in spec.seeds:
                cells.append((algo, None if eps is None else float(eps), int(seed)))
    return cells


def last_epoch_gap(log: RunLog, epoch: int, reference: float) -> float:
    """Mean MSPBE minus reference over logged rows in the final ``epoch`` iterations."""
    t_end = log.rows[-1]["t"]
    vals = [r["mspbe"] for r in log.rows if r.get("mspbe") is not None and r["t"] > t_end - epoch]
    return float(np.mean(vals)) - reference


def _summarize_log(log: RunLog, epoch: int, reference: float, l_f: float) -> dict:
    t_end = log.rows[-1]["t"]
    tail = [r for r in log.rows if r["t"] > t_end - epoch]
    metric_rows = [r for r in log.rows if r.get("metric_m1") is not None]
    return {
        "final_gap": last_epoch_gap(log, epoch, reference),
        "final_F": float(np.mean([r["F_value"] for r in tail])),
        "final_mspbe": log.rows[-1]["mspbe"],
        "avg_metric": float(np.mean([r["metric_m1"] + r["metric_m2"] + l_f * r["metric_m3"] for r in metric_rows])),
    }


_WORKER: dict = {}


def _init_worker(spec, dataset, calibrations, data_hash, reference):
    _WORKER.update(spec=spec, dataset=dataset, calibrations=calibrations, data_hash=data_hash, reference=reference)


def _run_cell(cell) -> dict:
    algo, eps, seed = cell
    w = _WORKER
    spec, dataset = w["spec"], w["dataset"]
    model = spec.build_model(dataset)
    cfg = spec.base_config(seed)
    cal = None
    if eps is not None:
        cal = w["calibrations"][eps]
        cfg = replace(cfg, noise=cal)
    if algo == "dptd":
        res = run(cfg, model, dataset)
    else:
        res = run_baseline(algo, cfg, model, dataset)
    res.log.header.update(
        algorithm=algo,
        epsilon=eps,
        delta=spec.delta if eps is not None else None,
        seed=seed,
        output_index=res.output_index,
        dataset_hash=w["data_hash"],
        reference_mspbe=w["reference"],
        privacy=None if cal is None else accounting_report(cal),
        spec=spec.experiment_dict(),
    )
    path = Path(spec.out_dir) / (cell_name(algo, eps, seed) + ".csv")
    res.log.write(path)
    out = {"algorithm": algo, "epsilon": eps, "seed": seed, "csv": path.name}
    out.update(_summarize_log(res.log, spec.epoch, w["reference"], cfg.l_f))
    return out


def train(spec: ExperimentSpec) -> dict:
    """Run every (algorithm, epsilon, seed) cell and write logs plus ``summary.json``."""
    dataset = spec.build_dataset()
    data_hash = content_hash(dump_dataset(dataset).encode("utf-8"))
    calibrations = {}
    for eps in spec.epsilons:
        cal = spec.calibrate(eps, dataset)
        if not cal.valid:
            raise InvalidRegime(cal.failed, f"epsilon={eps}: try more data, fewer iterations T, or beta_prime='search'")
        calibrations[float(eps)] = cal
    cfg = spec.base_config()
    reference = objective.reference_mspbe(spec.build_model(dataset), dataset, dataset.gamma, cfg.ridge)
    Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
    cells = experiment_cells(spec)
    init = (spec, dataset, calibrations, data_hash, reference)
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers, initializer=_init_worker, initargs=init) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        _init_worker(*init)
        results = [_run_cell(c) for c in cells]
    summary = {
        "dataset_hash": data_hash,
        "reference_mspbe": reference,
        "cells": results,
        "groups": _group_summary(results),
        "calibrations": {eps_label(e): accounting_report(c) for e, c in calibrations.items()},
    }
    (Path(spec.out_dir) / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def _group_summary(results: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in results:
        groups.setdefault((r["algorithm"], r["epsilon"]), []).append(r)
    out = []
    for (algo, eps), rs in groups.items():
        row = {"algorithm": algo, "epsilon": eps, "n_seeds": len(rs)}
        for key in ("final_gap", "final_F", "final_mspbe", "avg_metric"):
            vals = np.array([r[key] for r in rs], float)
            row[f"{key}_mean"] = float(vals.mean())
            row[f"{key}_std"] = float(vals.std())
        out.append(row)
    return out


# ---------------------------------------------------------------- reporting

REPORT_COLUMNS = (
    "algorithm",
    "epsilon",
    "epoch",
    "n_seeds",
    "F_value_mean",
    "F_value_std",
    "mspbe_mean",
    "mspbe_std",
    "metric_mean",
    "metric_std",
)


def _epoch_means(log: RunLog, epoch: int, l_f: float) -> dict[int, dict]:
    acc: dict[int, dict[str, list]] = {}
    for r in log.rows:
        e = acc.setdefault(r["t"] // epoch, {"F_value": [], "mspbe": [], "metric": []})
        e["F_value"].append(r["F_value"])
        if r.get("mspbe") is not None:
            e["mspbe"].append(r["mspbe"])
        if r.get("metric_m1") is not None:
            e["metric"].append(r["metric_m1"] + r["metric_m2"] + l_f * r["metric_m3"])
    return {k: {c: (float(np.mean(v)) if v else None) for c, v in cols.items()} for k, cols in acc.items()}


def aggregate(logs: list[RunLog], epoch: int = 100) -> list[dict]:
    """Epoch-averaged curves, mean and population std over seeds, per (algorithm, epsilon)."""
    groups: dict[tuple, list[RunLog]] = {}
    for log in logs:
        key = (log.header.get("algorithm", ""), log.header.get("epsilon"))
        groups.setdefault(key, []).append(log)
    rows = []
    for (algo, eps), members in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
        curves = []
        for log in members:
            l_f = (log.header.get("config") or {}).get("l_f", 1.0)
            curves.append(_epoch_means(log, epoch, l_f))
        epochs = sorted(curves[0])
        if any(sorted(c) != epochs for c in curves):
            raise ValueError(f"logs for {algo} eps={eps_label(eps)} cover different iteration ranges")
        for ep in epochs:
            row = {"algorithm": algo, "epsilon": eps_label(eps), "epoch": ep, "n_seeds": len(curves)}
            for col in ("F_value", "mspbe", "metric"):
                vals = [c[ep][col] for c in curves if c[ep][col] is not None]
                row[f"{col}_mean"] = float(np.mean(vals)) if vals else None
                row[f"{col}_std"] = float(np.std(vals)) if vals else None
            rows.append(row)
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def read_logs(log_dir: str | Path) -> list[RunLog]:
    paths = sorted(p for p in Path(log_dir).glob("*.csv") if p.with_suffix(".json").exists())
    if not paths:
        raise ValueError(f"no run logs in {log_dir}")
    return [RunLog.read(p) for p in paths]


# ---------------------------------------------------------------- CLI


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment spec; flags below override its keys")
    # the nested optimizer dict is reachable through its own keys (--T, --clip-G, ...)
    spec_names = [f.name for f in fields(ExperimentSpec) if f.name != "config"]
    names = spec_names + sorted(_DPTD_KEYS - set(spec_names))
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"ov_{name}", type=_parse_value, metavar="VALUE")


def _overrides(args) -> dict:
    return {k[3:]: v for k, v in vars(args).items() if k.startswith("ov_") and v is not None}


def cmd_generate(args) -> int:
    spec = load_spec(args.config, _overrides(args))
    ds = spec.build_dataset()
    text = dump_dataset(ds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    info = {
        "path": str(out),
        "hash": content_hash(text.encode("utf-8")),
        "mode": ds.mode.value,
        "n_transitions": ds.n_transitions,
        "n_trajectories": ds.n_trajectories,
        "n_max": ds.n_max,
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    spec = load_spec(args.config, _overrides(args))
    if not spec.epsilons:
        raise ConfigError("calibrate needs at least one epsilon (--epsilons '[1.0]')")
    ds = spec.build_dataset()
    reports = {eps_label(e): accounting_report(spec.calibrate(e, ds)) for e in spec.epsilons}
    print(json.dumps(reports, indent=2, sort_keys=True))
    return EXIT_OK if all(r["valid"] for r in reports.values()) else EXIT_PRIVACY


def cmd_train(args) -> int:
    summary = train(load_spec(args.config, _overrides(args)))
    print(json.dumps(summary["groups"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    rows = aggregate(read_logs(args.log_dir), args.epoch)
    text = report_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dptd", description="Differentially private TD learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="sample a dataset from a built-in MDP family")
    _add_spec_flags(g)
    g.add_argument("--out", required=True, help="output JSON-lines file")
    g.set_defaults(func=cmd_generate)
    c = sub.add_parser("calibrate", help="print the noise calibration report as JSON")
    _add_spec_flags(c)
    c.set_defaults(func=cmd_calibrate)
    t = sub.add_parser("train", help="run all (algorithm, epsilon, seed) cells")
    _add_spec_flags(t)
    t.set_defaults(func=cmd_train)
    r = sub.add_parser("report", help="aggregate run logs into epoch-averaged curves")
    r.add_argument("log_dir")
    r.add_argument("--epoch", type=int, default=100)
    r.add_argument("--out", help="write CSV here instead of stdout")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidRegime as err:
        print(f"invalid privacy regime: {err}", file=sys.stderr)
        return EXIT_PRIVACY
    except (ConfigError, ParseError, ValueError, TypeError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
