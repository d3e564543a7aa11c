"""Experiment runner: JSON configs in, per-run trace CSVs and a summary CSV out."""
from __future__ import annotations

import ast
import csv
import io
import json
import logging
import math
import operator
import os
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cg_solvers, cubic, highdim
from .constraints import constraint_from_config
from .errors import ConfigError, PracticalScheduleWarning, SolverError
from .oracle import problem_from_config
from .records import CRITERIA

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CG_ALGORITHMS = ("zscg", "zscg_accelerated", "zsgd_inexact_nonconvex")
ALGORITHMS = CG_ALGORITHMS + ("zsgd", "zsgd_truncated", "zscrn")
SUMMARY_COLUMNS = (
    ("algorithm", "d", "N", "n_seeds", "n_failed")
    + tuple(f"{c}_{s}" for c in CRITERIA for s in ("median", "iqr"))
    + ("oracle_calls_total", "wall_time_s")
)


# ---------------------------------------------------------------------------
# Schedule expressions: numbers, lists, or arithmetic in k, N, d


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sqrt": np.sqrt, "log": np.log, "exp": np.exp, "ceil": np.ceil, "floor": np.floor}


def _eval_node(node, env):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name) and node.id in env:
        return env[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left, env), _eval_node(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_eval_node(node.operand, env)
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1):
        return _FUNCS[node.func.id](_eval_node(node.args[0], env))
    raise ValueError("unsupported expression")


def schedule_value(spec, N, d, key="schedule"):
    """Resolve a schedule entry to a scalar or a length-N array (k = 1..N)."""
    if isinstance(spec, bool):
        raise ConfigError(key, "expected a number, list or expression")
    if isinstance(spec, (int, float)):
        return spec
    if isinstance(spec, list):
        if len(spec) != N:
            raise ConfigError(key, f"list must have N={N} entries")
        return np.asarray(spec, dtype=float)
    if isinstance(spec, str):
        env = {"k": np.arange(1, N + 1, dtype=float), "N": float(N), "d": float(d), "pi": math.pi}
        try:
            val = _eval_node(ast.parse(spec, mode="eval"), env)
        except (SyntaxError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(key, f"cannot evaluate {spec!r}: {exc}") from None
        val = np.asarray(val, dtype=float)
        return float(val) if val.ndim == 0 else val
    raise ConfigError(key, "expected a number, list or expression")


def _int_schedule(spec, N, d, key):
    val = schedule_value(spec, N, d, key)
    return np.ceil(val).astype(np.int64) if isinstance(val, np.ndarray) else int(math.ceil(val))


# ---------------------------------------------------------------------------
# Config


@dataclass
class ExperimentConfig:
    algorithm: str
    problem: dict
    seeds: list
    N_grid: list
    schedule_mode: str = "paper"
    schedule: dict = field(default_factory=dict)
    set: dict | None = None
    x0: list | None = None
    output: str = "results"

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None):
        if not isinstance(raw, dict):
            raise ConfigError("config", "must be a JSON object")
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported version {version!r}; expected {SCHEMA_VERSION}")
        known = {"schema_version", "algorithm", "problem", "set", "schedule_mode", "schedule", "seeds",
                 "N", "x0", "output"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown key")
        algorithm = raw.get("algorithm")
        if algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}, got {algorithm!r}")
        problem = raw.get("problem")
        if isinstance(problem, str):
            path = Path(problem)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            if not path.exists():
                raise ConfigError("problem", f"file {problem!r} does not exist")
            problem = json.loads(path.read_text())
        if not isinstance(problem, dict):
            raise ConfigError("problem", "must be an object or a path to a JSON file")
        seeds = raw.get("seeds")
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds", "must be a nonempty list of nonnegative integers")
        grid = raw.get("N")
        if isinstance(grid, int):
            grid = [grid]
        if not isinstance(grid, list) or not grid or not all(isinstance(n, int) and n >= 1 for n in grid):
            raise ConfigError("N", "must be a nonempty list of positive integers")
        if grid != sorted(grid):
            raise ConfigError("N", "grid must be sorted ascending")
        mode = raw.get("schedule_mode", "paper")
        if mode not in ("paper", "practical"):
            raise ConfigError("schedule_mode", "must be 'paper' or 'practical'")
        schedule = raw.get("schedule", {}) or {}
        if not isinstance(schedule, dict):
            raise ConfigError("schedule", "must be an object")
        cset = raw.get("set")
        if algorithm in CG_ALGORITHMS and cset is None:
            raise ConfigError("set", f"{algorithm} needs a constraint set")
        cfg = cls(algorithm, problem, list(seeds), list(grid), mode, dict(schedule), cset,
                  raw.get("x0"), str(raw.get("output", "results")))
        # Fail early on malformed problem / set definitions.
        p = problem_from_config(problem)
        if cset is not None:
            constraint_from_config(cset)
        if cfg.x0 is not None and len(cfg.x0) != p.dimension:
            raise ConfigError("x0", f"expected {p.dimension} entries")
        return cfg

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "algorithm": self.algorithm, "problem": self.problem,
                "set": self.set, "schedule_mode": self.schedule_mode, "schedule": self.schedule,
                "seeds": self.seeds, "N": self.N_grid, "x0": self.x0, "output": self.output}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file {str(path)!r} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Building solver calls


def _get(sched, key, default=None, required=False):
    if key in sched:
        return sched[key]
    if required:
        raise ConfigError(f"schedule.{key}", "required in practical mode")
    return default


def build_run(cfg: ExperimentConfig, N):
    """Return (callable(seed, verify) -> (x, record), problem)."""
    problem = problem_from_config(cfg.problem)
    cset = constraint_from_config(cfg.set) if cfg.set is not None else None
    d = problem.dimension
    s = cfg.schedule
    x0 = None if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    paper = cfg.schedule_mode == "paper"
    alg = cfg.algorithm

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PracticalScheduleWarning)
        if alg == "zscg":
            if paper:
                variant = _get(s, "variant", "nonconvex")
                if variant not in ("nonconvex", "convex"):
                    raise ConfigError("schedule.variant", "must be 'nonconvex' or 'convex'")
                factory = cg_solvers.ZscgSchedule.paper_convex if variant == "convex" else \
                    cg_solvers.ZscgSchedule.paper_nonconvex
                sched = factory(problem, cset, N, _get(s, "B_Lsigma"))
            else:
                sched = cg_solvers.ZscgSchedule.practical(
                    N, schedule_value(_get(s, "nu", required=True), N, d, "schedule.nu"),
                    schedule_value(_get(s, "alpha", required=True), N, d, "schedule.alpha"),
                    _int_schedule(_get(s, "m", required=True), N, d, "schedule.m"),
                    _get(s, "output_dist", "uniform"))
            solver = lambda seed, verify: cg_solvers.zscg(problem, cset, sched, seed, x0, verify)  # noqa: E731
        elif alg == "zscg_accelerated":
            if paper:
                sched = cg_solvers.AcceleratedSchedule.paper(problem, cset, N, _get(s, "D0"), _get(s, "B_Lsigma"))
            else:
                sched = cg_solvers.AcceleratedSchedule.practical(
                    N, schedule_value(_get(s, "nu", required=True), N, d, "schedule.nu"),
                    schedule_value(_get(s, "alpha", "2/(k+1)"), N, d, "schedule.alpha"),
                    schedule_value(_get(s, "gamma", required=True), N, d, "schedule.gamma"),
                    schedule_value(_get(s, "mu", required=True), N, d, "schedule.mu"),
                    _int_schedule(_get(s, "m", required=True), N, d, "schedule.m"),
                    _get(s, "D0", 1.0), _get(s, "icg_max_iters"))
            solver = lambda seed, verify: cg_solvers.zscg_accelerated(problem, cset, sched, seed, x0, verify)  # noqa: E731
        elif alg == "zsgd_inexact_nonconvex":
            if paper:
                sched = cg_solvers.InexactSchedule.paper(problem, cset, N)
            else:
                sched = cg_solvers.InexactSchedule.practical(
                    N, schedule_value(_get(s, "nu", required=True), N, d, "schedule.nu"),
                    schedule_value(_get(s, "gamma", required=True), N, d, "schedule.gamma"),
                    schedule_value(_get(s, "mu", required=True), N, d, "schedule.mu"),
                    _int_schedule(_get(s, "m", required=True), N, d, "schedule.m"),
                    _get(s, "icg_max_iters"))
            solver = lambda seed, verify: cg_solvers.zsgd_inexact_nonconvex(problem, cset, sched, seed, x0, verify)  # noqa: E731
        elif alg in ("zsgd", "zsgd_truncated"):
            truncated = alg == "zsgd_truncated"
            if paper:
                factory = highdim.HighDimSchedule.paper_truncated if truncated else \
                    highdim.HighDimSchedule.paper_nonconvex
                sched = factory(problem, N, _get(s, "s_hat"), _get(s, "C_hat", 2.0), _get(s, "D0"), x0,
                                _get(s, "nu"))
            else:
                sched = highdim.HighDimSchedule.practical(
                    N, schedule_value(_get(s, "gamma", required=True), N, d, "schedule.gamma"),
                    schedule_value(_get(s, "nu", required=True), N, d, "schedule.nu"),
                    _get(s, "s_hat", problem.sparsity if truncated else d),
                    "convex_truncated" if truncated else "nonconvex", _get(s, "C_hat", 2.0))
            run = highdim.zsgd_truncated if truncated else highdim.zsgd
            solver = lambda seed, verify: run(problem, sched, seed, x0, verify)  # noqa: E731
        else:  # zscrn
            if paper:
                base = cubic.CubicParams.paper(problem, float(_get(s, "eps", required=True)),
                                               float(_get(s, "f0_gap", required=True)), _get(s, "B"), _get(s, "nu"))
                params = cubic.CubicParams(N, base.nu, base.alpha[0], base.b[0], base.m[0], base.eps,
                                           _get(s, "sub_tol"), _get(s, "sub_max_iters", 100_000), "paper",
                                           base.derived)
            else:
                params = cubic.CubicParams.practical(
                    N, schedule_value(_get(s, "nu", required=True), N, d, "schedule.nu"),
                    schedule_value(_get(s, "alpha", problem.lipschitz_hess), N, d, "schedule.alpha"),
                    _int_schedule(_get(s, "b", required=True), N, d, "schedule.b"),
                    _int_schedule(_get(s, "m", required=True), N, d, "schedule.m"),
                    float(_get(s, "eps", 1e-6)), _get(s, "sub_tol"), int(_get(s, "sub_max_iters", 100_000)))
            solver = lambda seed, verify: cubic.zscrn(problem, params, seed, x0, verify)  # noqa: E731
    return solver, problem


# ---------------------------------------------------------------------------
# Running


def trace_filename(algorithm, N, seed):
    return f"{algorithm}_N{N}_seed{seed}.csv"


def atomic_write(path, text):
    """Write via a temporary file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_task(cfg_dict, N, seed, out_dir, verify):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    solver, _ = build_run(cfg, N)
    t0 = time.perf_counter()
    error = None
    try:
        _, rec = solver(seed, verify)
    except SolverError as exc:
        rec, error = exc.record, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - t0
    path = Path(out_dir) / trace_filename(cfg.algorithm, N, seed)
    if rec is not None:
        atomic_write(path, rec.to_csv())
    row = rec.output_row() if (rec is not None and error is None) else None
    return {
        "N": N, "seed": seed, "error": error, "trace": str(path) if rec is not None else None,
        "criteria": {c: row.get(c) for c in CRITERIA} if row else {},
        "oracle_calls": rec.oracle_calls if rec is not None else 0, "wall_time": elapsed,
    }


def _median_iqr(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return None, None
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return float(med), float(q3 - q1)


def summarize(algorithm, d, N, results):
    ok = [r for r in results if r["error"] is None]
    row = {"algorithm": algorithm, "d": d, "N": N, "n_seeds": len(results), "n_failed": len(results) - len(ok)}
    for c in CRITERIA:
        row[f"{c}_median"], row[f"{c}_iqr"] = _median_iqr([r["criteria"].get(c) for r in ok])
    row["oracle_calls_total"] = int(sum(r["oracle_calls"] for r in results))
    row["wall_time_s"] = float(sum(r["wall_time"] for r in results))
    return row


def summary_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def read_summary(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            if k == "algorithm":
                parsed[k] = v
            elif v == "":
                parsed[k] = None
            else:
                parsed[k] = float(v)
        out.append(parsed)
    return out


@dataclass
class ExperimentResult:
    summary: list
    runs: list
    out_dir: Path

    @property
    def n_failed(self):
        return sum(r["error"] is not None for r in self.runs)


def run_experiment(config, out_dir=None, jobs=1, verify=True) -> ExperimentResult:
    """Run every (N, seed) pair; write one trace per pair and ``summary.csv``."""
    cfg = config if isinstance(config, ExperimentConfig) else (
        load_config(config) if isinstance(config, (str, Path)) else ExperimentConfig.from_dict(config))
    out = Path(out_dir if out_dir is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    d = problem_from_config(cfg.problem).dimension
    cfg_dict = cfg.to_dict()
    tasks = [(cfg_dict, N, seed, str(out), verify) for N in cfg.N_grid for seed in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_task, *zip(*tasks)))
    else:
        runs = [_run_task(*t) for t in tasks]
    for r in runs:
        if r["error"]:
            log.warning("run N=%s seed=%s failed: %s", r["N"], r["seed"], r["error"])
    summary = [summarize(cfg.algorithm, d, N, [r for r in runs if r["N"] == N]) for N in cfg.N_grid]
    atomic_write(out / "summary.csv", summary_to_csv(summary))
    return ExperimentResult(summary, runs, out)


# ---------------------------------------------------------------------------
# Trend checks


@dataclass
class TrendReport:
    criterion: str
    slope: float
    stderr: float
    intercept: float
    n_points: int
    lo: float
    hi: float
    excluded: int = 0

    @property
    def passed(self):
        return self.n_points >= 3 and self.lo <= self.slope <= self.hi

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        note = f", {self.excluded} point(s) excluded" if self.excluded else ""
        return (f"{verdict} {self.criterion}: slope {self.slope:.4f} +- {self.stderr:.4f} "
                f"(target [{self.lo}, {self.hi}], {self.n_points} points{note})")


def fit_loglog(xs, ys):
    """Least-squares fit log y = a + slope log x; returns (slope, intercept, stderr of slope)."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    n = lx.size
    X = np.column_stack([np.ones(n), lx])
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    if n > 2:
        resid = ly - X @ coef
        s2 = float(resid @ resid) / (n - 2)
        stderr = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    else:
        stderr = math.nan
    return float(coef[1]), float(coef[0]), stderr


def trend_check(summary, criterion, expected_range, x="N") -> TrendReport:
    """Fit the log-log slope of ``criterion`` against ``x`` across summary rows."""
    rows = read_summary(summary) if isinstance(summary, (str, Path)) else list(summary)
    column = criterion if rows and criterion in rows[0] else f"{criterion}_median"
    if rows and column not in rows[0]:
        raise ConfigError("criterion", f"no column {criterion!r} or {column!r} in the summary")
    pts = [(r[x], r.get(column)) for r in rows]
    good = [(a, b) for a, b in pts if a is not None and b is not None and a > 0 and b > 0]
    excluded = len(pts) - len(good)
    if excluded:
        warnings.warn(f"{excluded} nonpositive or missing value(s) of {column} excluded from the fit")
    lo, hi = expected_range
    if len(good) < 2:
        return TrendReport(criterion, math.nan, math.nan, math.nan, len(good), lo, hi, excluded)
    slope, intercept, stderr = fit_loglog(*zip(*good))
    return TrendReport(criterion, slope, stderr, intercept, len(good), lo, hi, excluded)
