"""Command-line harness.

    statmap <command> --config cfg.json [--seed N] [--out DIR] [--full]

Commands: simulate, fit-map, train-chart, select-rate, evaluate,
mismatch-demo. Exit codes: 0 success, 2 configuration error, 3 numerical
failure. All output files are deterministic in (config, seed); timing goes
to stdout only.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import chart as chart_mod
from .dataio import (
    load_dataset,
    load_map,
    save_chart,
    save_dataset,
    save_map,
    write_csv,
)
from .errors import ConfigurationError, NumericalError, ParseError
from .gpmap import TrainingSet, fit as gp_fit, predict
from .harness import (
    ChartTrainingConfig,
    ExperimentConfig,
    MismatchDemoConfig,
    estimate_capacities,
    run_chart_experiment,
    run_location_experiment,
    run_mismatch_demo,
    simulate_dataset,
    write_report,
)
from .propagation import Location, PointProcessConfig, ScenarioConfig, derive_seed
from .rateselect import POLICY_MAP, select_rate_map
from .stats import capacity_from_power

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

FULL_SCALE = {"epsilon": 1e-3, "delta": 1e-3, "samples_per_user": 10_000,
              "oracle_n": 100_000}


def _build(cls, data: dict, context: str):
    """Strict dataclass construction: unknown keys are config errors."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in '{context}' section")
    return cls(**data)


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in config: {exc.msg}", path=path,
                         line=exc.lineno)


def _scenario_config(doc: dict) -> ScenarioConfig:
    data = dict(doc.get("scenario", {}))
    if "bs_location" in data:
        data["bs_location"] = Location(*data["bs_location"])
    return _build(ScenarioConfig, data, "scenario")


def _experiment_config(doc: dict, seed: int, full: bool) -> ExperimentConfig:
    exp = dict(doc.get("experiment", {}))
    if full:
        exp.update(FULL_SCALE)
        if doc.get("mode", "location") == "chart":
            exp.setdefault("n_train_users", 5000)
        else:
            exp.setdefault("n_train_users", 500)
        exp["oracle_n"] = max(exp.get("oracle_n", 0), 100_000)
    chart_cfg = dict(doc.get("chart", {}))
    if "hidden" in chart_cfg:
        chart_cfg["hidden"] = tuple(chart_cfg["hidden"])
    return _build(ExperimentConfig, {
        "scenario": _scenario_config(doc),
        "pointprocess": _build(PointProcessConfig,
                               dict(doc.get("pointprocess", {})),
                               "pointprocess")
        if doc.get("pointprocess") else ExperimentConfig().pointprocess,
        "chart": _build(ChartTrainingConfig, chart_cfg, "chart"),
        "seed": seed,
        **exp,
    }, "experiment")


def _dataset_path(doc: dict, out_dir: str) -> str:
    return doc.get("dataset", os.path.join(out_dir, "dataset.jsonl"))


def cmd_simulate(doc, seed, out_dir, full):
    config = _experiment_config(doc, seed, full)
    with_csi = bool(doc.get("simulate", {}).get("with_csi",
                                                doc.get("mode") == "chart"))
    dataset = simulate_dataset(config, seed, with_csi=with_csi)
    path = os.path.join(out_dir, "dataset.jsonl")
    save_dataset(dataset, path)
    print(f"wrote {path} ({len(dataset)} users, with_csi={with_csi})")
    return [path]


def cmd_fit_map(doc, seed, out_dir, full):
    config = _experiment_config(doc, seed, full)
    dataset = load_dataset(_dataset_path(doc, out_dir))
    if any(r.location is None for r in dataset.records):
        raise ConfigurationError("fit-map needs a location for every user")
    targets = estimate_capacities(dataset, config.epsilon,
                                  config.scenario.noise_power)
    coords = [[r.location.x, r.location.y] for r in dataset.records]
    fmap = gp_fit(TrainingSet.new(coords, targets),
                  restarts=config.gp_restarts,
                  seed=derive_seed(seed, "gp-fit"))
    path = os.path.join(out_dir, "map.json")
    save_map(fmap, path)
    d = fmap.diagnostics
    print(f"wrote {path} (lml={d.log_marginal_likelihood:.3f}, "
          f"iterations={d.iterations})")
    return [path]


def cmd_train_chart(doc, seed, out_dir, full):
    config = _experiment_config(doc, seed, full)
    cc = config.chart
    dataset = load_dataset(_dataset_path(doc, out_dir))
    if any(r.csi is None for r in dataset.records):
        raise ConfigurationError("train-chart needs a CSI snapshot per user")
    capacity_rows = [capacity_from_power(r.power_samples,
                                         config.scenario.noise_power)
                     for r in dataset.records]
    triplets, skipped = chart_mod.build_triplets(
        capacity_rows, cc.n_triplets, cc.close_quantile, cc.far_quantile,
        seed=derive_seed(seed, "triplets"))
    feats = np.vstack([chart_mod.csi_features(r.csi, cc.s_red)
                       for r in dataset.records])
    model0 = chart_mod.init_chart_model(feats.shape[1], cc.hidden,
                                        seed=derive_seed(seed, "chart-init"))
    result = chart_mod.train(model0, triplets, feats, margin=cc.margin,
                             step_size=cc.step_size, epochs=cc.epochs,
                             batch_size=cc.batch_size,
                             seed=derive_seed(seed, "chart-train"))
    chart_path = os.path.join(out_dir, "chart.json")
    save_chart(result.model, chart_path)
    trace_path = os.path.join(out_dir, "chart_trace.csv")
    write_csv(trace_path, ["epoch", "mean_loss"],
              list(enumerate(result.epoch_losses)))
    print(f"wrote {chart_path} and {trace_path} "
          f"({len(triplets)} triplets, {skipped} skipped)")
    return [chart_path, trace_path]


def cmd_select_rate(doc, seed, out_dir, full):
    section = doc.get("select_rate")
    if not section:
        raise ConfigurationError("config needs a 'select_rate' section")
    try:
        map_path = section["map"]
        delta = float(section["delta"])
        queries = np.asarray(section["queries"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad select_rate section: {exc}")
    if queries.ndim != 2 or queries.shape[1] != 2:
        raise ConfigurationError("queries must be a list of [x, y] pairs")
    fmap = load_map(map_path)
    rows = []
    for q in queries:
        decision = select_rate_map(predict(fmap, q), delta)
        rows.append((float(q[0]), float(q[1]), decision.rate, POLICY_MAP))
    path = os.path.join(out_dir, "rates.csv")
    write_csv(path, ["x", "y", "rate", "policy"], rows)
    print(f"wrote {path} ({len(rows)} queries, delta={delta:g})")
    return [path]


def cmd_evaluate(doc, seed, out_dir, full):
    config = _experiment_config(doc, seed, full)
    mode = doc.get("mode", "location")
    if mode == "location":
        report = run_location_experiment(config)
    elif mode == "chart":
        report = run_chart_experiment(config)
    else:
        raise ConfigurationError(f"unknown mode {mode!r} (location or chart)")
    paths = write_report(report, out_dir)
    for policy in report.policies():
        frac, n = report.violation_fraction(policy)
        print(f"{policy}: violation fraction {frac:.4f} over {n} users")
    return paths


def cmd_mismatch_demo(doc, seed, out_dir, full):
    data = dict(doc.get("demo", {}))
    if "path_amplitudes" in data:
        data["path_amplitudes"] = tuple(data["path_amplitudes"])
    if "fit_sizes" in data:
        data["fit_sizes"] = tuple(data["fit_sizes"])
    data["seed"] = seed
    demo = _build(MismatchDemoConfig, data, "demo")
    summary = run_mismatch_demo(demo, out_dir)
    print(f"DKW band: {summary['dkw_band']:.6g}; empirical max dev "
          f"{summary['empirical_max_dev']:.6g}; Rician tail max dev "
          f"{summary['rician_tail_max_dev']:.6g}")
    return summary["paths"]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-map": cmd_fit_map,
    "train-chart": cmd_train_chart,
    "select-rate": cmd_select_rate,
    "evaluate": cmd_evaluate,
    "mismatch-demo": cmd_mismatch_demo,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="statmap",
        description="Statistical radio maps for URLLC rate selection")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="root seed (overrides the config's seed)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--full", action="store_true",
                        help="headline operating point (epsilon=delta=1e-3)")
    args = parser.parse_args(argv)

    start = time.perf_counter()
    try:
        doc = _load_config(args.config)
        if not isinstance(doc, dict):
            raise ConfigurationError("config root must be a JSON object")
        seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](doc, seed, args.out, args.full)
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"done in {time.perf_counter() - start:.2f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
