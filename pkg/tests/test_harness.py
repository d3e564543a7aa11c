import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from zo_opt import cli
from zo_opt.errors import ConfigError
from zo_opt.harness import (
    SCHEMA_VERSION,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    atomic_write,
    build_run,
    fit_loglog,
    read_summary,
    run_experiment,
    schedule_value,
    summary_to_csv,
    trend_check,
)
from zo_opt.records import CRITERIA, TRACE_COLUMNS, TRACE_SCHEMA_VERSION, logged_indices, read_trace

QUAD = {"family": "quadratic", "dimension": 5, "noise_std": 0.1, "seed": 1,
        "parameters": {"eig_range": [0.5, 1.5], "c_scale": 1.0}}


def zscg_config(**over):
    cfg = {"schema_version": 1, "algorithm": "zscg", "problem": QUAD, "set": {"kind": "l1_ball", "radius": 1.0},
           "schedule_mode": "practical", "schedule": {"nu": 0.01, "alpha": "1/sqrt(N)", "m": 20},
           "seeds": [0, 1], "N": [5, 10]}
    cfg.update(over)
    return cfg


# -- schema pins --------------------------------------------------------------


def test_trace_schema_is_pinned():
    assert TRACE_SCHEMA_VERSION == 1
    assert TRACE_COLUMNS == (
        "k", "calls", "grad_calls", "hess_calls", "lmo_calls", "alpha", "gamma", "mu", "m", "b",
        "fw_gap", "gp_norm", "f_gap", "grad_l1_sq", "nnz", "lambda_min", "model_decrease",
        "subsolver_iters", "x_norm", "is_output")


def test_summary_schema_is_pinned():
    assert SCHEMA_VERSION == 1
    assert SUMMARY_COLUMNS[:5] == ("algorithm", "d", "N", "n_seeds", "n_failed")
    assert SUMMARY_COLUMNS[-2:] == ("oracle_calls_total", "wall_time_s")
    assert set(SUMMARY_COLUMNS[5:-2]) == {f"{c}_{s}" for c in CRITERIA for s in ("median", "iqr")}


def test_logging_cadence():
    assert logged_indices(1000) == set(range(1001))
    ks = logged_indices(100_000, (777,))
    assert {0, 1, 100_000, 777} <= ks
    assert len(ks) <= 103


# -- config validation ----------------------------------------------------------


@pytest.mark.parametrize("change, key", [
    ({"schema_version": 2}, "schema_version"),
    ({"algorithm": "newton"}, "algorithm"),
    ({"seeds": []}, "seeds"),
    ({"seeds": [0, -1]}, "seeds"),
    ({"N": [10, 5]}, "N"),
    ({"N": []}, "N"),
    ({"schedule_mode": "fast"}, "schedule_mode"),
    ({"set": None}, "set"),
    ({"set": {"kind": "ellipse"}}, "set.kind"),
    ({"problem": "missing.json"}, "problem"),
    ({"problem": {"family": "quadratic"}}, "problem.dimension"),
    ({"x0": [0.0]}, "x0"),
    ({"colour": "red"}, "colour"),
])
def test_config_errors_name_the_key(change, key):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(zscg_config(**change))
    assert exc.value.key == key


def test_practical_schedule_keys_required():
    cfg = ExperimentConfig.from_dict(zscg_config(schedule={"nu": 0.01, "alpha": 0.5}))
    with pytest.raises(ConfigError) as exc:
        build_run(cfg, 5)
    assert exc.value.key == "schedule.m"


def test_problem_file_resolved_relative_to_config(tmp_path):
    (tmp_path / "problem.json").write_text(json.dumps(QUAD))
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(zscg_config(problem="problem.json")))
    from zo_opt.harness import load_config

    assert load_config(cfg_path).problem == QUAD


def test_schedule_expressions():
    assert schedule_value(0.5, 4, 3) == 0.5
    assert np.allclose(schedule_value("2/(k+1)", 3, 5), [1.0, 2 / 3, 0.5])
    assert schedule_value("sqrt(d)/N", 4, 16) == 1.0
    with pytest.raises(ConfigError):
        schedule_value("__import__('os')", 3, 3)
    with pytest.raises(ConfigError):
        schedule_value([1, 2], 3, 3)


# -- runs -----------------------------------------------------------------------


def test_run_writes_traces_and_summary(tmp_path):
    res = run_experiment(zscg_config(), tmp_path)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["summary.csv", "zscg_N10_seed0.csv", "zscg_N10_seed1.csv",
                     "zscg_N5_seed0.csv", "zscg_N5_seed1.csv"]
    assert res.n_failed == 0
    rows = read_summary(tmp_path / "summary.csv")
    assert [r["N"] for r in rows] == [5.0, 10.0]
    assert all(r["n_seeds"] == 2 and r["n_failed"] == 0 for r in rows)


def test_rerun_is_byte_identical(tmp_path):
    run_experiment(zscg_config(), tmp_path / "a")
    run_experiment(zscg_config(), tmp_path / "b", jobs=2)
    for p in (tmp_path / "a").glob("zscg_*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_summary_recomputes_from_traces(tmp_path):
    run_experiment(zscg_config(seeds=[0, 1, 2, 3]), tmp_path)
    for row in read_summary(tmp_path / "summary.csv"):
        N = int(row["N"])
        out = []
        for seed in range(4):
            trace = read_trace(tmp_path / f"zscg_N{N}_seed{seed}.csv")
            out.append([r for r in trace if r["is_output"] == 1.0][0])
        for c in ("fw_gap", "gp_norm", "f_gap"):
            vals = [r[c] for r in out]
            assert row[f"{c}_median"] == pytest.approx(np.median(vals), rel=1e-15)
            assert row[f"{c}_iqr"] == pytest.approx(np.percentile(vals, 75) - np.percentile(vals, 25), abs=1e-15)
        assert row["oracle_calls_total"] == sum(trace[-1]["calls"] for trace in
                                                [read_trace(tmp_path / f"zscg_N{N}_seed{s}.csv") for s in range(4)])


def test_verify_off_leaves_trajectory_unchanged(tmp_path):
    run_experiment(zscg_config(), tmp_path / "on", verify=True)
    run_experiment(zscg_config(), tmp_path / "off", verify=False)
    for p in (tmp_path / "on").glob("zscg_*.csv"):
        on, off = read_trace(p), read_trace(tmp_path / "off" / p.name)
        assert [r["x_norm"] for r in on] == [r["x_norm"] for r in off]
        assert [r["calls"] for r in on] == [r["calls"] for r in off]
        assert all(r["fw_gap"] is None for r in off)


@pytest.mark.parametrize("cfg", [
    {"algorithm": "zscg_accelerated", "schedule": {"nu": 0.01, "gamma": "4/k", "mu": "1/(k*N)", "m": 10}},
    {"algorithm": "zsgd_inexact_nonconvex", "schedule": {"nu": 0.01, "gamma": 2.0, "mu": 0.01, "m": 10}},
    {"algorithm": "zsgd", "set": None, "schedule": {"nu": 0.01, "gamma": 0.1}},
    {"algorithm": "zsgd_truncated", "set": None, "schedule": {"nu": 0.01, "gamma": 0.1, "s_hat": 2}},
    {"algorithm": "zscrn", "set": None, "schedule": {"nu": 0.01, "alpha": 1.0, "b": 20, "m": 20}},
])
def test_every_algorithm_runs_from_config(tmp_path, cfg):
    res = run_experiment(zscg_config(**cfg, seeds=[0], N=[4]), tmp_path)
    assert res.n_failed == 0
    trace = read_trace(tmp_path / f"{cfg['algorithm']}_N4_seed0.csv")
    assert trace[-1]["calls"] == res.runs[0]["oracle_calls"]


def test_paper_mode_zscg_from_config(tmp_path):
    res = run_experiment(zscg_config(schedule_mode="paper", schedule={"variant": "convex"}, N=[3], seeds=[0]),
                         tmp_path)
    assert res.n_failed == 0


def test_solver_failure_is_recorded_and_run_continues(tmp_path):
    cfg = zscg_config(algorithm="zsgd", set=None, schedule={"nu": 0.01, "gamma": 100.0}, N=[200], seeds=[0, 1])
    res = run_experiment(cfg, tmp_path)
    assert res.n_failed == 2
    assert all("DivergenceError" in r["error"] for r in res.runs)
    assert (tmp_path / "zsgd_N200_seed0.csv").exists()
    assert read_summary(tmp_path / "summary.csv")[0]["n_failed"] == 2


# -- atomic writes ----------------------------------------------------------------


def test_atomic_write_replaces_and_cleans_up(tmp_path):
    target = tmp_path / "sub" / "out.csv"
    atomic_write(target, "a\n")
    atomic_write(target, "b\n")
    assert target.read_text() == "b\n"
    assert os.listdir(target.parent) == ["out.csv"]


def test_atomic_write_failure_keeps_old_file(tmp_path, monkeypatch):
    target = tmp_path / "out.csv"
    atomic_write(target, "old\n")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write(target, "new\n")
    assert target.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["out.csv"]


# -- trend checks -------------------------------------------------------------------


def synthetic(power):
    Ns = [100, 400, 1600, 6400]
    return [{"algorithm": "x", "N": float(N), "fw_gap_median": 3.0 * N**power} for N in Ns]


def test_trend_on_synthetic_rates():
    r = trend_check(synthetic(-0.5), "fw_gap", (-0.51, -0.49))
    assert r.passed and r.slope == pytest.approx(-0.5, abs=0.01)
    r = trend_check(synthetic(-1.0), "fw_gap", (-1.01, -0.99))
    assert r.passed and r.slope == pytest.approx(-1.0, abs=0.01)
    assert not trend_check(synthetic(-1.0), "fw_gap", (-0.8, -0.25)).passed


def test_trend_excludes_nonpositive_values():
    rows = synthetic(-0.5) + [{"algorithm": "x", "N": 25600.0, "fw_gap_median": 0.0}]
    with pytest.warns(UserWarning):
        r = trend_check(rows, "fw_gap", (-0.6, -0.4))
    assert r.excluded == 1 and r.n_points == 4 and r.passed


def test_trend_unknown_criterion():
    with pytest.raises(ConfigError) as exc:
        trend_check(synthetic(-0.5), "nope", (-1, 0))
    assert exc.value.key == "criterion"


def test_trend_needs_three_points():
    assert not trend_check(synthetic(-0.5)[:2], "fw_gap", (-1, 0)).passed


def test_fit_loglog_exact_line():
    slope, intercept, se = fit_loglog([1, 10, 100], [2, 20, 200])
    assert slope == pytest.approx(1.0) and intercept == pytest.approx(np.log(2)) and se == pytest.approx(0.0)


# -- CLI ----------------------------------------------------------------------------


def test_cli_run_and_trend(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(zscg_config(N=[5, 10, 20], seeds=[0])))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    summary = tmp_path / "out" / "summary.csv"
    assert summary.exists()
    code = cli.main(["trend", str(summary), "--criterion", "x_norm_fake", "--slope", "-1:0"])
    assert code == 1
    (tmp_path / "s.csv").write_text(summary_to_csv([
        {"algorithm": "x", "d": 5, "N": N, "n_seeds": 1, "n_failed": 0, "fw_gap_median": N**-0.5}
        for N in (10, 100, 1000)]))
    assert cli.main(["trend", str(tmp_path / "s.csv"), "--criterion", "fw_gap", "--slope", "-0.6:-0.4"]) == 0
    assert "PASS fw_gap" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(zscg_config(N=[10, 5])))
    assert cli.main(["run", str(bad)]) == 1
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 1
    (tmp_path / "junk.json").write_text("{not json")
    assert cli.main(["run", str(tmp_path / "junk.json")]) == 1
    diverge = tmp_path / "div.json"
    diverge.write_text(json.dumps(zscg_config(algorithm="zsgd", set=None, schedule={"nu": 0.01, "gamma": 100.0},
                                              N=[200], seeds=[0])))
    assert cli.main(["run", str(diverge), "--out", str(tmp_path / "d")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["trend", "x.csv", "--criterion", "fw_gap", "--slope", "bad"])


def test_cli_validate_estimators_quick():
    proc = subprocess.run([sys.executable, "-m", "zo_opt.cli", "validate-estimators", "--quick"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.count("PASS") >= 10
