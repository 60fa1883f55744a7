"""Experiment orchestration: the location-based and chart-based rate-selection
case studies and the parametric-mismatch demonstration.

Every experiment is a pure function of (config, seed): user placement, power
sampling, fitting, rate selection, and outage measurement all run on derived
sub-seeds, so reports are reproducible byte for byte. Wall-clock time is
reported on stdout only, never inside output files.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import chart as chart_mod
from .dataio import Dataset, UserRecord, write_csv
from .errors import ConfigurationError
from .gpmap import TrainingSet, fit as gp_fit, predict
from .propagation import (
    Location,
    PointProcessConfig,
    Scenario,
    ScenarioConfig,
    band_variant,
    derive_seed,
    draw_csi,
    draw_power_samples,
    generate_scenario,
    sample_locations_thomas,
)
from .rateselect import POLICY_BASELINE, POLICY_MAP, select_rate_baseline, select_rate_map
from .stats import (
    EmpiricalDistribution,
    capacity_from_power,
    dkw_band,
    empirical_quantile,
    fit_rician_ml,
)

__all__ = [
    "ChartTrainingConfig",
    "ExperimentConfig",
    "MismatchDemoConfig",
    "ReportRow",
    "ExperimentReport",
    "simulate_dataset",
    "estimate_capacities",
    "run_location_experiment",
    "run_chart_experiment",
    "run_mismatch_demo",
    "write_report",
]

DEFAULT_POINT_PROCESS = PointProcessConfig(
    parent_intensity=5e-4, mean_cluster_size=25.0, offspring_std=8.0)

# Dominant-path profile for the mismatch demo: the reachable power set has a
# hard lower edge, which no Rician CDF can reproduce in the deep tail.
DEMO_AMPLITUDES = (1.0, 0.55, 0.08, 0.05, 0.04, 0.025, 0.015)


@dataclass(frozen=True)
class ChartTrainingConfig:
    """High-band CSI interface plus chart training hyperparameters."""

    csi_antennas: int = 16
    csi_subcarriers: int = 32
    csi_wavelength: float = 0.0857      # 3.5 GHz
    csi_bandwidth_hz: float = 5e6
    s_red: int = 8
    hidden: tuple = chart_mod.DEFAULT_HIDDEN
    n_triplets: int = 8000
    close_quantile: float = 0.05
    far_quantile: float = 0.5
    margin: float = 1.0
    step_size: float = 0.01
    epochs: int = 15
    batch_size: int = 128

    def band_overrides(self) -> dict:
        return {"num_antennas": self.csi_antennas,
                "num_subcarriers": self.csi_subcarriers,
                "carrier_wavelength": self.csi_wavelength,
                "bandwidth_hz": self.csi_bandwidth_hz}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = dc_field(default_factory=ScenarioConfig)
    pointprocess: PointProcessConfig = DEFAULT_POINT_PROCESS
    n_train_users: int = 500
    samples_per_user: int = 1000
    epsilon: float = 1e-2
    delta: float = 1e-2
    n_test_users: int = 2000
    oracle_n: int = 10_000
    n_mc_outage: int = 0            # 0 means the default ceil(100/epsilon)
    gp_restarts: int = 2
    seed: int = 0
    chart: ChartTrainingConfig = dc_field(default_factory=ChartTrainingConfig)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0 or not 0.0 < self.delta < 1.0:
            raise ConfigurationError("epsilon and delta must lie in (0,1)")
        if self.samples_per_user * self.epsilon <= 1.0:
            raise ConfigurationError(
                f"samples_per_user={self.samples_per_user} is not enough for "
                f"epsilon={self.epsilon}; need more than {1.0 / self.epsilon:g}")
        if self.n_train_users < 3 or self.n_test_users < 1:
            raise ConfigurationError("need at least 3 training users and 1 test user")
        if self.oracle_n < math.ceil(100.0 / self.epsilon):
            raise ConfigurationError(
                f"oracle_n must be at least 100/epsilon = {100.0 / self.epsilon:g}")

    @property
    def outage_draws(self) -> int:
        return self.n_mc_outage if self.n_mc_outage > 0 else int(
            math.ceil(100.0 / self.epsilon))


@dataclass(frozen=True)
class MismatchDemoConfig:
    path_amplitudes: tuple = DEMO_AMPLITUDES
    oracle_samples: int = 100_000_000
    fit_sizes: tuple = (1_000, 10_000, 1_000_000)
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if len(self.path_amplitudes) < 1:
            raise ConfigurationError("need at least one path amplitude")
        if self.oracle_samples < max(self.fit_sizes):
            raise ConfigurationError("oracle must be at least the largest fit size")


@dataclass(frozen=True)
class ReportRow:
    user_id: int
    x: float
    y: float
    true_ceps: float
    rate: float
    outage_prob: float
    policy: str


@dataclass(frozen=True)
class ExperimentReport:
    mode: str
    rows: list
    epsilon: float
    delta: float
    seed: int
    config_echo: dict

    def policies(self) -> list:
        seen = []
        for r in self.rows:
            if r.policy not in seen:
                seen.append(r.policy)
        return sorted(seen)

    def violation_fraction(self, policy: str) -> tuple:
        rows = [r for r in self.rows if r.policy == policy]
        if not rows:
            raise ConfigurationError(f"no rows for policy {policy}")
        frac = sum(1 for r in rows if r.outage_prob > self.epsilon) / len(rows)
        return frac, len(rows)

    def outage_cdf_table(self, policy: str) -> list:
        probs = sorted(r.outage_prob for r in self.rows if r.policy == policy)
        n = len(probs)
        return [(p, (i + 1) / n) for i, p in enumerate(probs)]


# ------------------------------------------------------------ simulation

def _thomas_exact_count(pp: PointProcessConfig, scenario_cfg: ScenarioConfig,
                        n_users: int, seed: int) -> list:
    """Thomas draws, re-sampled with derived seeds until n_users are available."""
    bounds = scenario_cfg.cell_bounds()
    locs: list = []
    attempt = 0
    while len(locs) < n_users:
        locs.extend(sample_locations_thomas(
            pp, bounds, scenario_cfg.user_height,
            derive_seed(seed, "thomas-wave", attempt)))
        attempt += 1
        if attempt > 1000:
            raise ConfigurationError(
                "point process intensity too low to reach the requested users")
    return locs[:n_users]


def simulate_dataset(config: ExperimentConfig, seed: int,
                     with_csi: bool = False) -> Dataset:
    """Thomas-placed users with power samples and optionally one CSI snapshot."""
    scenario = generate_scenario(config.scenario, seed)
    csi_scenario = band_variant(scenario, **config.chart.band_overrides()) \
        if with_csi else None
    locs = _thomas_exact_count(config.pointprocess, config.scenario,
                               config.n_train_users, seed)
    records = []
    for i, loc in enumerate(locs):
        powers = draw_power_samples(scenario, loc, config.samples_per_user,
                                    derive_seed(seed, "train-power", i))
        csi = draw_csi(csi_scenario, loc, derive_seed(seed, "train-csi", i)
                       ).entries if with_csi else None
        records.append(UserRecord(user_id=i, location=loc,
                                  power_samples=powers, csi=csi))
    return Dataset(records=records)


def estimate_capacities(dataset: Dataset, epsilon: float,
                        noise_power: float) -> np.ndarray:
    """Per-user lower eps-quantile of the capacity samples."""
    out = np.empty(len(dataset.records))
    for i, rec in enumerate(dataset.records):
        caps = capacity_from_power(rec.power_samples, noise_power)
        out[i] = empirical_quantile(
            EmpiricalDistribution.from_samples(caps), epsilon)
    return out


def _uniform_test_locations(config: ExperimentConfig, seed: int) -> list:
    rng = np.random.default_rng(derive_seed(seed, "test-users"))
    half = config.scenario.cell_side / 2.0
    xy = rng.uniform(-half, half, size=(config.n_test_users, 2))
    return [Location(float(x), float(y), config.scenario.user_height)
            for x, y in xy]


def _measure_policies(scenario: Scenario, loc: Location, rates: dict,
                      config: ExperimentConfig, seed: int, user: int):
    """True capacity and per-policy outage, sharing one capacity draw."""
    true_c = empirical_quantile(
        EmpiricalDistribution.from_samples(capacity_from_power(
            draw_power_samples(scenario, loc, config.oracle_n,
                               derive_seed(seed, "oracle", user)),
            scenario.config.noise_power)),
        config.epsilon)
    caps = capacity_from_power(
        draw_power_samples(scenario, loc, config.outage_draws,
                           derive_seed(seed, "outage", user)),
        scenario.config.noise_power)
    outages = {policy: float(np.count_nonzero(caps < rate)) / caps.size
               for policy, rate in rates.items()}
    return true_c, outages


def _echo(config: ExperimentConfig) -> dict:
    echo = dataclasses.asdict(config)
    echo["scenario"]["bs_location"] = dataclasses.asdict(
        config.scenario.bs_location)
    return echo


# ------------------------------------------------------------ experiments

def run_location_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Location-based statistical radio map versus nearest-neighbor baseline."""
    seed = config.seed
    stage = "generate-scenario"
    try:
        scenario = generate_scenario(config.scenario, seed)
        stage = "simulate-training-users"
        dataset = simulate_dataset(config, seed, with_csi=False)
        stage = "estimate-outage-capacities"
        targets = estimate_capacities(dataset, config.epsilon,
                                      config.scenario.noise_power)
        coords = np.array([[r.location.x, r.location.y]
                           for r in dataset.records])
        train = TrainingSet.new(coords, targets)
        stage = "fit-map"
        fmap = gp_fit(train, restarts=config.gp_restarts,
                      seed=derive_seed(seed, "gp-fit"))
        stage = "evaluate-test-users"
        rows, calibration = _evaluate_test_users(
            scenario, config, seed,
            query_of=lambda loc, user: np.array([loc.x, loc.y]),
            fmap=fmap, train=train)
    except Exception as exc:
        exc.args = (f"[stage {stage}] {exc}",)
        raise
    return ExperimentReport(mode="location", rows=rows, epsilon=config.epsilon,
                            delta=config.delta, seed=seed,
                            config_echo={**_echo(config),
                                         "predictive_calibration": calibration})


def _evaluate_test_users(scenario, config, seed, query_of, fmap, train):
    rows = []
    pred_means, pred_vars, truths = [], [], []
    for user, loc in enumerate(_uniform_test_locations(config, seed)):
        query = query_of(loc, user)
        pred = predict(fmap, query)
        rates = {
            POLICY_MAP: select_rate_map(pred, config.delta).rate,
            POLICY_BASELINE: select_rate_baseline(train, query).rate,
        }
        true_c, outages = _measure_policies(scenario, loc, rates, config,
                                            seed, user)
        pred_means.append(pred.mean)
        pred_vars.append(pred.variance)
        truths.append(true_c)
        for policy in (POLICY_MAP, POLICY_BASELINE):
            rows.append(ReportRow(
                user_id=user, x=float(query[0]), y=float(query[1]),
                true_ceps=true_c, rate=rates[policy],
                outage_prob=outages[policy], policy=policy))
    rows.sort(key=lambda r: (r.user_id, r.policy))
    residuals = np.asarray(truths) - np.asarray(pred_means)
    calibration = {
        "mean_predictive_std": float(np.mean(np.sqrt(pred_vars))),
        "residual_std": float(np.std(residuals)),
        "residual_mean": float(np.mean(residuals)),
    }
    return rows, calibration


def run_chart_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Chart-based map: CSI from the high band, rates in the scenario band."""
    seed = config.seed
    cc = config.chart
    stage = "generate-scenario"
    try:
        scenario = generate_scenario(config.scenario, seed)
        csi_scenario = band_variant(scenario, **cc.band_overrides())
        stage = "simulate-training-users"
        dataset = simulate_dataset(config, seed, with_csi=True)
        stage = "estimate-outage-capacities"
        targets = estimate_capacities(dataset, config.epsilon,
                                      config.scenario.noise_power)
        stage = "mine-triplets"
        capacity_rows = [capacity_from_power(r.power_samples,
                                             config.scenario.noise_power)
                         for r in dataset.records]
        triplets, _ = chart_mod.build_triplets(
            capacity_rows, cc.n_triplets, cc.close_quantile, cc.far_quantile,
            seed=derive_seed(seed, "triplets"))
        stage = "train-chart"
        feats = np.vstack([chart_mod.csi_features(r.csi, cc.s_red)
                           for r in dataset.records])
        model0 = chart_mod.init_chart_model(feats.shape[1], cc.hidden,
                                            seed=derive_seed(seed, "chart-init"))
        result = chart_mod.train(model0, triplets, feats, margin=cc.margin,
                                 step_size=cc.step_size, epochs=cc.epochs,
                                 batch_size=cc.batch_size,
                                 seed=derive_seed(seed, "chart-train"))
        stage = "fit-map-in-latent-space"
        latents = chart_mod.forward(result.model, feats)
        train = TrainingSet.new(latents, targets)
        fmap = gp_fit(train, restarts=config.gp_restarts,
                      seed=derive_seed(seed, "gp-fit"))
        stage = "evaluate-test-users"

        def embed_new_user(loc, user):
            csi = draw_csi(csi_scenario, loc, derive_seed(seed, "test-csi", user))
            return chart_mod.forward(result.model,
                                     chart_mod.csi_features(csi, cc.s_red))

        rows, calibration = _evaluate_test_users(scenario, config, seed,
                                                 query_of=embed_new_user,
                                                 fmap=fmap, train=train)
    except Exception as exc:
        exc.args = (f"[stage {stage}] {exc}",)
        raise
    return ExperimentReport(mode="chart", rows=rows, epsilon=config.epsilon,
                            delta=config.delta, seed=seed,
                            config_echo={**_echo(config),
                                         "chart_epoch_losses": result.epoch_losses,
                                         "predictive_calibration": calibration})


# ------------------------------------------------------------ reports

def write_report(report: ExperimentReport, out_dir) -> list:
    """CSV rows + aggregates + outage CDF tables; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    rows_path = os.path.join(out_dir, "report_rows.csv")
    write_csv(rows_path,
              ["user_id", "x", "y", "true_ceps", "rate", "outage_prob",
               "policy"],
              [(r.user_id, r.x, r.y, r.true_ceps, r.rate, r.outage_prob,
                r.policy) for r in report.rows])
    agg_path = os.path.join(out_dir, "report_aggregates.csv")
    write_csv(agg_path, ["policy", "violation_fraction", "n"],
              [(p, *report.violation_fraction(p)) for p in report.policies()])
    cdf_path = os.path.join(out_dir, "outage_cdf.csv")
    cdf_rows = []
    for policy in report.policies():
        cdf_rows.extend((policy, v, c)
                        for v, c in report.outage_cdf_table(policy))
    write_csv(cdf_path, ["policy", "outage_prob", "cdf"], cdf_rows)
    meta_path = os.path.join(out_dir, "report_meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"mode": report.mode, "epsilon": report.epsilon,
             "delta": report.delta, "seed": report.seed,
             "n_rows": len(report.rows), "config": report.config_echo},
            sort_keys=True, separators=(",", ":")) + "\n")
    return [rows_path, agg_path, cdf_path, meta_path]


# ------------------------------------------------------------ mismatch demo

def _demo_power_chunks(amplitudes: np.ndarray, total: int, seed: int,
                       chunk: int = 2_000_000):
    """Normalized multipath power samples, streamed in deterministic chunks."""
    rng = np.random.default_rng(derive_seed(seed, "demo-oracle"))
    mean_power = float(np.sum(amplitudes ** 2))
    remaining = total
    while remaining > 0:
        n = min(chunk, remaining)
        phases = rng.uniform(0.0, 2.0 * np.pi, (n, amplitudes.size))
        h = (amplitudes * np.exp(1j * phases)).sum(axis=1)
        yield (np.abs(h) ** 2) / mean_power
        remaining -= n


def _demo_fit_sample(amplitudes: np.ndarray, n: int, seed: int, label) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "demo-fit", label))
    mean_power = float(np.sum(amplitudes ** 2))
    phases = rng.uniform(0.0, 2.0 * np.pi, (n, amplitudes.size))
    h = (amplitudes * np.exp(1j * phases)).sum(axis=1)
    return (np.abs(h) ** 2) / mean_power


def run_mismatch_demo(config: MismatchDemoConfig, out_dir) -> dict:
    """Tail mismatch of a Rician ML fit versus the non-parametric estimator.

    Emits CDF tables (linear and log10 probability, identical breakpoints)
    for the oracle, the empirical CDFs, and the fitted Rician CDFs at each
    sample size, plus the fitted parameters.
    """
    os.makedirs(out_dir, exist_ok=True)
    a = np.asarray(config.path_amplitudes, dtype=float)

    # breakpoints: pilot-sample quantiles on a fixed probability grid, dense
    # toward the deep tail
    pilot = _demo_fit_sample(a, 1_000_000, config.seed, "pilot")
    probs = np.unique(np.concatenate([
        np.geomspace(1e-5, 0.01, 40),
        np.linspace(0.02, 0.999, 80),
    ]))
    breakpoints = np.quantile(pilot, probs)

    oracle_counts = np.zeros(breakpoints.size, dtype=np.int64)
    for block in _demo_power_chunks(a, config.oracle_samples, config.seed):
        block.sort()
        oracle_counts += np.searchsorted(block, breakpoints, side="right")
    oracle_cdf = oracle_counts / config.oracle_samples

    columns = {"value": breakpoints, "oracle_cdf": oracle_cdf}
    fits = {}
    for n in config.fit_sizes:
        sample = _demo_fit_sample(a, n, config.seed, n)
        sample_sorted = np.sort(sample)
        columns[f"empirical_cdf_n{n}"] = (
            np.searchsorted(sample_sorted, breakpoints, side="right") / n)
        fit = fit_rician_ml(np.sqrt(sample))
        fits[n] = fit
        columns[f"rician_cdf_n{n}"] = fit.power_cdf(breakpoints)

    oracle_path = os.path.join(out_dir, "oracle_cdf.csv")
    write_csv(oracle_path, ["value", "cdf"], zip(breakpoints, oracle_cdf))
    header = list(columns)
    linear_path = os.path.join(out_dir, "mismatch_cdf_linear.csv")
    write_csv(linear_path, header,
              zip(*(columns[h] for h in header)))
    log_path = os.path.join(out_dir, "mismatch_cdf_log.csv")
    with np.errstate(divide="ignore"):
        log_rows = zip(*(columns["value"] if h == "value"
                         else np.log10(columns[h]) for h in header))
    write_csv(log_path, header, log_rows)
    params_path = os.path.join(out_dir, "rician_params.csv")
    write_csv(params_path, ["param", "estimate"],
              [(f"K_n{n}", fits[n].K) for n in config.fit_sizes]
              + [(f"omega_n{n}", fits[n].omega) for n in config.fit_sizes])

    band = dkw_band(max(config.fit_sizes), config.confidence)
    n_big = max(config.fit_sizes)
    emp_dev = np.max(np.abs(columns[f"empirical_cdf_n{n_big}"] - oracle_cdf))
    tail = oracle_cdf <= 1e-3
    rician_tail_dev = float(np.max(np.abs(
        columns[f"rician_cdf_n{n_big}"][tail] - oracle_cdf[tail]))) \
        if np.any(tail) else 0.0
    return {
        "paths": [linear_path, log_path, params_path, oracle_path],
        "dkw_band": band,
        "empirical_max_dev": float(emp_dev),
        "rician_tail_max_dev": rician_tail_dev,
        "fits": fits,
    }
