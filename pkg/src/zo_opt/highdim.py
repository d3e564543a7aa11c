"""Single-sample zeroth-order SGD for sparse-gradient problems, plain and truncated.

Step sizes follow the l-infinity geometry: L is the gradient Lipschitz
constant from l-infinity to l1 and sigma^2 bounds E||grad F - grad f||_1^2.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DivergenceError, PracticalScheduleWarning
from .estimators import grad_averaged
from .oracle import ZeroOrderOracle
from .records import RunRecord, logged_indices, make_streams

DIVERGENCE_LIMIT = 1e8
MODES = ("nonconvex", "convex_truncated")


@dataclass
class HighDimSchedule:
    N: int
    gamma: float
    nu: float
    s_hat: int
    C_hat: float = 2.0
    D0: float | None = None
    mode: str = "nonconvex"
    paper: bool = False

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ContractViolation("N must be a positive integer")
        self.N = int(self.N)
        if not self.gamma >= 0:
            raise ContractViolation("gamma must be nonnegative")
        if not self.nu > 0:
            raise ContractViolation("nu must be positive")
        if int(self.s_hat) != self.s_hat or self.s_hat < 1:
            raise ContractViolation("s_hat must be a positive integer")
        self.s_hat = int(self.s_hat)
        if self.mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}")

    @staticmethod
    def nonconvex_bounds(L, d, N, s_hat, C_hat, D0, sigma2):
        """(gamma, nu_max) of the nonconvex rule; sigma = 0 drops the noise terms."""
        logd = math.log(d)
        step = 1.0 / (12 * s_hat * logd)
        nu_term = math.sqrt(D0 / N)
        if sigma2 > 0:
            step = min(step, math.sqrt(D0 * L * C_hat / (2 * N * sigma2)))
            nu_term = min(nu_term, math.sqrt(2 * sigma2 / L))
        return step / (2 * L * C_hat * logd), nu_term / math.sqrt(L * C_hat * logd)

    @staticmethod
    def truncated_bounds(L, d, N, s_hat, C_hat, D0, sigma2):
        logd = math.log(d)
        step = 1.0 / (12 * L * s_hat * logd)
        nu_term = math.sqrt(s_hat**2 * D0 / N)
        if sigma2 > 0:
            step = min(step, math.sqrt(D0 * C_hat * s_hat / (3 * N * sigma2)))
            nu_term = min(nu_term, math.sqrt(sigma2) / logd)
        return step / (4 * C_hat * s_hat * logd), math.sqrt(logd) * nu_term

    @classmethod
    def paper_nonconvex(cls, problem, N, s_hat=None, C_hat=2.0, D0=None, x0=None, nu=None):
        d = _check_paper_dim(problem)
        s_hat = problem.sparsity if s_hat is None else s_hat
        if D0 is None:
            D0 = _default_value_gap(problem, x0)
        sigma2 = problem.gradient_noise_variance("l1")
        gamma, nu_max = cls.nonconvex_bounds(problem.lipschitz_grad_linf, d, N, s_hat, C_hat, D0, sigma2)
        return cls(N, gamma, _pick_nu(nu, nu_max), s_hat, C_hat, D0, "nonconvex", True)

    @classmethod
    def paper_truncated(cls, problem, N, s_hat=None, C_hat=2.0, D0=None, x0=None, nu=None):
        d = _check_paper_dim(problem)
        s_hat = problem.sparsity if s_hat is None else s_hat
        if D0 is None:
            D0 = _default_distance(problem, x0)
        sigma2 = problem.gradient_noise_variance("l1")
        gamma, nu_max = cls.truncated_bounds(problem.lipschitz_grad_linf, d, N, s_hat, C_hat, D0, sigma2)
        return cls(N, gamma, _pick_nu(nu, nu_max), s_hat, C_hat, D0, "convex_truncated", True)

    @classmethod
    def practical(cls, N, gamma, nu, s_hat=1, mode="nonconvex", C_hat=2.0):
        warnings.warn("practical schedule: convergence constants of the paper-mode schedule do not apply",
                      PracticalScheduleWarning, stacklevel=2)
        return cls(N, gamma, nu, s_hat, C_hat, None, mode, False)

    def echo(self):
        return {"mode": "paper_" + self.mode if self.paper else "practical", "N": self.N,
                "gamma": self.gamma, "nu": self.nu, "s_hat": self.s_hat, "C_hat": self.C_hat, "D0": self.D0}


def _check_paper_dim(problem):
    if problem.dimension < 2:
        raise ContractViolation("the log d step-size rules need d >= 2")
    return problem.dimension


def _pick_nu(nu, nu_max):
    if nu is None:
        return nu_max
    if nu > nu_max * (1 + 1e-12):
        raise ContractViolation(f"nu={nu} exceeds the admissible bound {nu_max}")
    return float(nu)


def _default_value_gap(problem, x0):
    x0 = np.zeros(problem.dimension) if x0 is None else np.asarray(x0, dtype=float)
    if problem.optimum_value is None:
        raise ContractViolation("D0 must be given when f* is unknown")
    return max(float(problem.value(x0) - problem.optimum_value), 1e-12)


def _default_distance(problem, x0):
    x0 = np.zeros(problem.dimension) if x0 is None else np.asarray(x0, dtype=float)
    if problem.minimizer is None:
        raise ContractViolation("D0 must be given when the minimiser is unknown")
    return max(float(np.sum((x0 - problem.minimizer) ** 2)), 1e-12)


def truncate_top_s(y, s_hat):
    """Keep the s_hat largest-magnitude entries (lowest index wins ties), zero the rest."""
    y = np.asarray(y, dtype=float)
    if int(s_hat) != s_hat or not 1 <= s_hat <= y.size:
        raise ContractViolation(f"s_hat must be an integer in [1, {y.size}], got {s_hat}")
    keep = np.argsort(-np.abs(y), kind="stable")[: int(s_hat)]
    out = np.zeros_like(y)
    out[keep] = y[keep]
    return out


def unconstrained_metrics(problem, x):
    g = problem.gradient(x)
    out = {
        "grad_l1_sq": float(np.abs(g).sum() ** 2),
        "gp_norm": float(np.linalg.norm(g)),
        "nnz": int(np.count_nonzero(x)),
        "x_norm": float(np.linalg.norm(x)),
    }
    if problem.optimum_value is not None:
        out["f_gap"] = float(problem.value(x) - problem.optimum_value)
    return out


def _run(problem, schedule, seed, x0, verify, keep_iterates, truncate):
    N = schedule.N
    d = problem.dimension
    streams = make_streams(seed)
    R = N if truncate else int(streams.output.integers(0, N))
    oracle = ZeroOrderOracle(problem, streams.noise)
    log_ks = logged_indices(N, (R,))
    name = "zsgd_truncated" if truncate else "zsgd"
    rec = RunRecord(name, int(seed), schedule.echo(), output_index=R)
    rec.iterates = [] if keep_iterates else None

    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,):
        raise ContractViolation(f"x0 must have dimension {d}")
    if truncate:
        x = truncate_top_s(x, schedule.s_hat)
    running_sum = np.zeros(d)
    metrics = {}
    out = x.copy()
    gamma = float(schedule.gamma)

    def log(k, x, xbar):
        if verify:
            met = unconstrained_metrics(problem, x)
            if truncate and xbar is not None and problem.optimum_value is not None:
                met["f_gap"] = float(problem.value(xbar) - problem.optimum_value)
            metrics[k] = met
        if k in log_ks:
            rec.add_row(k=k, calls=oracle.calls, grad_calls=oracle.calls, gamma=gamma, m=1,
                        is_output=(k == R), **metrics.get(k, {"x_norm": float(np.linalg.norm(x))}))
        if rec.iterates is not None:
            rec.iterates.append(x.copy())

    log(0, x, x if truncate else None)
    for k in range(1, N + 1):
        running_sum += x
        G = grad_averaged(oracle, x, schedule.nu, 1, streams.directions).vector
        x = x - gamma * G
        if truncate:
            x = truncate_top_s(x, schedule.s_hat)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            rec.oracle_calls = rec.grad_calls = oracle.calls
            raise DivergenceError(f"{name} diverged at iteration {k} (||x||_inf > {DIVERGENCE_LIMIT:g})", rec)
        log(k, x, running_sum / k)
        if not truncate and k == R:
            out = x.copy()

    rec.oracle_calls = rec.grad_calls = oracle.calls
    if truncate:
        out = running_sum / N
        if verify:
            rec.final = unconstrained_metrics(problem, out)
            rec.expected = {c: v for c, v in rec.final.items() if c not in ("x_norm", "nnz")}
    elif verify:
        keys = [c for c in metrics[0] if c not in ("x_norm", "nnz")]
        rec.expected = {c: float(np.mean([metrics[k][c] for k in range(N)])) for c in keys}
        rec.final = dict(metrics[R])
    return out, rec


def zsgd(problem, schedule: HighDimSchedule, seed, x0=None, verify=True, keep_iterates=False):
    """x_k = x_{k-1} - gamma G_nu(x_{k-1}); returns (x_R, record), R uniform on {0..N-1}."""
    return _run(problem, schedule, seed, x0, verify, keep_iterates, truncate=False)


def zsgd_truncated(problem, schedule: HighDimSchedule, seed, x0=None, verify=True, keep_iterates=False):
    """Truncated steps x_k = P_s(x_{k-1} - gamma G); returns the average of x_0..x_{N-1}."""
    return _run(problem, schedule, seed, x0, verify, keep_iterates, truncate=True)
