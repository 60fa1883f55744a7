"""CLI tests: command pipelines, exit codes, and byte-identical reruns."""

import json
import os

import pytest

from statmap.cli import main

SCENARIO_SMALL = {"field_components": 64}

BASE_CONFIG = {
    "seed": 9,
    "mode": "location",
    "scenario": SCENARIO_SMALL,
    "experiment": {
        "n_train_users": 80, "samples_per_user": 300, "epsilon": 0.05,
        "delta": 0.05, "n_test_users": 60, "oracle_n": 2000,
        "gp_restarts": 1,
    },
}

CHART_CONFIG = {
    "seed": 9,
    "mode": "chart",
    "scenario": SCENARIO_SMALL,
    "experiment": {
        "n_train_users": 50, "samples_per_user": 300, "epsilon": 0.05,
        "delta": 0.05, "n_test_users": 40, "oracle_n": 2000,
        "gp_restarts": 1,
    },
    "chart": {"csi_antennas": 4, "csi_subcarriers": 16, "s_red": 8,
              "hidden": [16, 8], "n_triplets": 300, "epochs": 3,
              "batch_size": 64},
}

DEMO_CONFIG = {
    "demo": {"oracle_samples": 400_000, "fit_sizes": [1000, 10_000]},
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(cmd, cfg, out, seed=None, full=False):
    argv = [cmd, "--config", cfg, "--out", str(out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    if full:
        argv.append("--full")
    return main(argv)


def read_all(out_dir):
    blobs = {}
    for name in sorted(os.listdir(out_dir)):
        with open(os.path.join(out_dir, name), "rb") as fh:
            blobs[name] = fh.read()
    return blobs


# ---------------------------------------------------------------- pipelines

def test_simulate_fit_select_pipeline(tmp_path):
    cfg = write_config(tmp_path, BASE_CONFIG)
    out = tmp_path / "out"
    assert run("simulate", cfg, out) == 0
    assert (out / "dataset.jsonl").exists()

    doc = dict(BASE_CONFIG, dataset=str(out / "dataset.jsonl"))
    cfg2 = write_config(tmp_path, doc, "cfg2.json")
    assert run("fit-map", cfg2, out) == 0
    assert (out / "map.json").exists()

    doc3 = dict(doc, select_rate={
        "map": str(out / "map.json"), "delta": 0.05,
        "queries": [[0.0, 0.0], [25.0, -40.0], [90.0, 90.0]]})
    cfg3 = write_config(tmp_path, doc3, "cfg3.json")
    assert run("select-rate", cfg3, out) == 0
    lines = (out / "rates.csv").read_text().splitlines()
    assert lines[0] == "x,y,rate,policy"
    assert len(lines) == 4
    assert all(line.endswith("map_quantile") for line in lines[1:])


def test_train_chart_pipeline(tmp_path):
    cfg = write_config(tmp_path, CHART_CONFIG)
    out = tmp_path / "out"
    assert run("simulate", cfg, out) == 0
    doc = dict(CHART_CONFIG, dataset=str(out / "dataset.jsonl"))
    cfg2 = write_config(tmp_path, doc, "cfg2.json")
    assert run("train-chart", cfg2, out) == 0
    assert (out / "chart.json").exists()
    trace = (out / "chart_trace.csv").read_text().splitlines()
    assert trace[0] == "epoch,mean_loss"
    assert len(trace) == 1 + CHART_CONFIG["chart"]["epochs"]


def test_evaluate_location(tmp_path):
    cfg = write_config(tmp_path, BASE_CONFIG)
    out = tmp_path / "out"
    assert run("evaluate", cfg, out) == 0
    for name in ("report_rows.csv", "report_aggregates.csv",
                 "outage_cdf.csv", "report_meta.json"):
        assert (out / name).exists()
    agg = (out / "report_aggregates.csv").read_text().splitlines()
    assert agg[0] == "policy,violation_fraction,n"
    assert len(agg) == 3


def test_evaluate_chart(tmp_path):
    cfg = write_config(tmp_path, CHART_CONFIG)
    out = tmp_path / "out"
    assert run("evaluate", cfg, out) == 0
    meta = json.loads((out / "report_meta.json").read_text())
    assert meta["mode"] == "chart"


def test_mismatch_demo_cli(tmp_path):
    cfg = write_config(tmp_path, DEMO_CONFIG)
    out = tmp_path / "out"
    assert run("mismatch-demo", cfg, out, seed=1) == 0
    for name in ("mismatch_cdf_linear.csv", "mismatch_cdf_log.csv",
                 "rician_params.csv"):
        assert (out / name).exists()


# ---------------------------------------------------------------- exit codes

def test_exit_2_missing_config(tmp_path):
    assert run("simulate", str(tmp_path / "nope.json"), tmp_path) == 2


def test_exit_2_bad_json(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{broken")
    assert run("simulate", str(cfg), tmp_path) == 2


def test_exit_2_unknown_key(tmp_path):
    doc = dict(BASE_CONFIG)
    doc["scenario"] = {"not_a_field": 1}
    cfg = write_config(tmp_path, doc)
    assert run("simulate", cfg, tmp_path) == 2


def test_exit_2_invalid_epsilon(tmp_path):
    doc = json.loads(json.dumps(BASE_CONFIG))
    doc["experiment"]["samples_per_user"] = 10
    doc["experiment"]["epsilon"] = 0.05
    cfg = write_config(tmp_path, doc)
    assert run("evaluate", cfg, tmp_path) == 2


def test_exit_2_corrupt_map(tmp_path):
    cfg = write_config(tmp_path, BASE_CONFIG)
    out = tmp_path / "out"
    assert run("simulate", cfg, out) == 0
    doc = dict(BASE_CONFIG, dataset=str(out / "dataset.jsonl"))
    cfg2 = write_config(tmp_path, doc, "cfg2.json")
    assert run("fit-map", cfg2, out) == 0
    text = (out / "map.json").read_text()
    (out / "map.json").write_text(text[:len(text) // 2])
    doc3 = dict(doc, select_rate={"map": str(out / "map.json"),
                                  "delta": 0.05, "queries": [[0.0, 0.0]]})
    cfg3 = write_config(tmp_path, doc3, "cfg3.json")
    assert run("select-rate", cfg3, out) == 2


def test_exit_3_numerical_failure(tmp_path):
    # dataset with too few samples per user for the requested epsilon
    cfg = write_config(tmp_path, BASE_CONFIG)
    out = tmp_path / "out"
    assert run("simulate", cfg, out) == 0
    doc = json.loads(json.dumps(BASE_CONFIG))
    doc["dataset"] = str(out / "dataset.jsonl")
    doc["experiment"]["epsilon"] = 0.002  # 300 samples cannot support this
    doc["experiment"]["samples_per_user"] = 10_000  # config itself is valid
    doc["experiment"]["oracle_n"] = 50_000
    cfg2 = write_config(tmp_path, doc, "cfg2.json")
    assert run("fit-map", cfg2, out) == 3


# ---------------------------------------------------------------- reruns

@pytest.mark.parametrize("command,config", [
    ("simulate", BASE_CONFIG),
    ("evaluate", BASE_CONFIG),
    ("mismatch-demo", DEMO_CONFIG),
])
def test_rerun_byte_identical(tmp_path, command, config):
    cfg = write_config(tmp_path, config)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run(command, cfg, out1, seed=4) == 0
    assert run(command, cfg, out2, seed=4) == 0
    assert read_all(out1) == read_all(out2)


def test_seed_changes_output(tmp_path):
    cfg = write_config(tmp_path, BASE_CONFIG)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run("simulate", cfg, out1, seed=1) == 0
    assert run("simulate", cfg, out2, seed=2) == 0
    assert read_all(out1) != read_all(out2)
