"""Zeroth-order conditional-gradient solvers over a bounded convex set.

* :func:`zscg` - Frank-Wolfe steps on averaged two-point gradients, random output.
* :func:`zscg_accelerated` - accelerated scheme whose prox steps are solved by ICG.
* :func:`zsgd_inexact_nonconvex` - projected-gradient-like steps solved by ICG.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .constraints import IcgParams, fw_gap_at, icg, icg_certificate, prox_exact
from .errors import ContractViolation, IcgBudgetError, PracticalScheduleWarning, SolverError
from .estimators import grad_averaged
from .oracle import ZeroOrderOracle
from .records import RunRecord, logged_indices, make_streams


def _seq(value, N, name, integer=False):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (N,)).copy()
    if integer:
        if np.any(arr < 1) or np.any(arr != np.round(arr)):
            raise ContractViolation(f"{name} must be positive integers")
        arr = arr.astype(np.int64)
    return arr


def _check_N(N):
    if int(N) != N or N < 1:
        raise ContractViolation(f"N must be a positive integer, got {N}")
    return int(N)


def default_gradient_bound(problem, cset):
    """B >= max_X ||grad f||, from ||grad f(0)|| + L max_X ||x||."""
    d = problem.dimension
    return float(np.linalg.norm(problem.gradient(np.zeros(d))) + problem.lipschitz_grad * cset.max_norm(d))


def default_B_Lsigma(problem, cset):
    """max{sqrt(B^2 + sigma^2) / L, 1}."""
    B = default_gradient_bound(problem, cset)
    sigma2 = problem.gradient_noise_variance("l2")
    L = problem.lipschitz_grad
    return max(math.sqrt(B * B + sigma2) / L, 1.0) if L > 0 else 1.0


def _warn_practical():
    warnings.warn(
        "practical schedule: convergence constants of the paper-mode schedule do not apply",
        PracticalScheduleWarning,
        stacklevel=3,
    )


# ---------------------------------------------------------------------------
# Schedules


@dataclass
class ZscgSchedule:
    N: int
    nu: float
    alpha: np.ndarray  # alpha[k-1] is used at iteration k
    m: np.ndarray
    output_dist: str = "uniform"
    mode: str = "practical"
    B_Lsigma: float | None = None

    def __post_init__(self):
        self.N = _check_N(self.N)
        self.alpha = _seq(self.alpha, self.N, "alpha")
        self.m = _seq(self.m, self.N, "m", integer=True)
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise ContractViolation("alpha_k must lie in (0, 1]")
        if not self.nu > 0:
            raise ContractViolation("nu must be positive")
        if self.output_dist not in ("uniform", "gamma_weighted"):
            raise ContractViolation("output_dist must be 'uniform' or 'gamma_weighted'")

    @classmethod
    def paper_nonconvex(cls, problem, cset, N, B_Lsigma=None):
        N = _check_N(N)
        d = problem.dimension
        B = default_B_Lsigma(problem, cset) if B_Lsigma is None else float(B_Lsigma)
        nu = math.sqrt(2 * B / (N * (d + 3) ** 3))
        m = math.ceil(2 * B * (d + 5) * N)
        return cls(N, nu, 1 / math.sqrt(N), m, "uniform", "paper_nonconvex", B)

    @classmethod
    def paper_convex(cls, problem, cset, N, B_Lsigma=None):
        N = _check_N(N)
        d = problem.dimension
        B = default_B_Lsigma(problem, cset) if B_Lsigma is None else float(B_Lsigma)
        nu = math.sqrt(2 * B / (N * N * (d + 3) ** 3))
        k = np.arange(1, N + 1)
        m = math.ceil(2 * B * (d + 5) * N * N)
        return cls(N, nu, 6.0 / (k + 5), m, "gamma_weighted", "paper_convex", B)

    @classmethod
    def practical(cls, N, nu, alpha, m, output_dist="uniform"):
        _warn_practical()
        return cls(N, nu, alpha, m, output_dist, "practical")

    def gamma_products(self):
        """Gamma_k = prod_{i<=k} (1 - alpha_i / 2) for k = 0..N."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.alpha / 2.0)])

    def output_probabilities(self):
        """P(R = k) for k = 1..N."""
        if self.output_dist == "uniform":
            return np.full(self.N, 1.0 / self.N)
        G = self.gamma_products()
        w = self.alpha / (2.0 * G[1:]) * G[-1] / (1.0 - G[-1])
        return w / w.sum()

    def echo(self):
        return {"mode": self.mode, "N": self.N, "nu": self.nu, "output_dist": self.output_dist,
                "B_Lsigma": self.B_Lsigma}


@dataclass
class AcceleratedSchedule:
    N: int
    nu: float
    alpha: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    m: np.ndarray
    D0: float
    mode: str = "practical"
    B_Lsigma: float | None = None
    icg_max_iters: int | None = None

    def __post_init__(self):
        self.N = _check_N(self.N)
        self.alpha = _seq(self.alpha, self.N, "alpha")
        self.gamma = _seq(self.gamma, self.N, "gamma")
        self.mu = _seq(self.mu, self.N, "mu")
        self.m = _seq(self.m, self.N, "m", integer=True)
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise ContractViolation("alpha_k must lie in (0, 1]")
        if np.any(self.gamma <= 0) or np.any(self.mu < 0):
            raise ContractViolation("need gamma_k > 0 and mu_k >= 0")
        if not self.nu > 0:
            raise ContractViolation("nu must be positive")

    @classmethod
    def paper(cls, problem, cset, N, D0=None, B_Lsigma=None):
        N = _check_N(N)
        d = problem.dimension
        L = problem.lipschitz_grad
        B = default_B_Lsigma(problem, cset) if B_Lsigma is None else float(B_Lsigma)
        D0 = cset.diameter(d) ** 2 if D0 is None else float(D0)
        k = np.arange(1, N + 1, dtype=float)
        nu = max(1.0 / (d + 3), math.sqrt(D0 / (d * (N + 1)))) / math.sqrt(2 * N)
        m = np.ceil(k * (k + 1) / D0 * max((d + 5) * B * N, d + 3))
        return cls(N, nu, 2.0 / (k + 1), 4.0 * L / k, L * D0 / (k * N), m, D0, "paper", B)

    @classmethod
    def practical(cls, N, nu, alpha, gamma, mu, m, D0=1.0, icg_max_iters=None):
        _warn_practical()
        return cls(N, nu, alpha, gamma, mu, m, D0, "practical", None, icg_max_iters)

    def echo(self):
        return {"mode": self.mode, "N": self.N, "nu": self.nu, "D0": self.D0, "B_Lsigma": self.B_Lsigma}


@dataclass
class InexactSchedule:
    N: int
    nu: float
    gamma: np.ndarray
    mu: np.ndarray
    m: np.ndarray
    mode: str = "practical"
    icg_max_iters: int | None = None

    def __post_init__(self):
        self.N = _check_N(self.N)
        self.gamma = _seq(self.gamma, self.N, "gamma")
        self.mu = _seq(self.mu, self.N, "mu")
        self.m = _seq(self.m, self.N, "m", integer=True)
        if np.any(self.gamma <= 0) or np.any(self.mu < 0):
            raise ContractViolation("need gamma_k > 0 and mu_k >= 0")
        if not self.nu > 0:
            raise ContractViolation("nu must be positive")

    @classmethod
    def paper(cls, problem, cset, N):
        N = _check_N(N)
        d = problem.dimension
        nu = math.sqrt(1.0 / (2 * N * (d + 3) ** 3))
        return cls(N, nu, 2.0 * problem.lipschitz_grad, 1.0 / (4 * N), 6 * (d + 5) * N, "paper")

    @classmethod
    def practical(cls, N, nu, gamma, mu, m, icg_max_iters=None):
        _warn_practical()
        return cls(N, nu, gamma, mu, m, "practical", icg_max_iters)

    def echo(self):
        return {"mode": self.mode, "N": self.N, "nu": self.nu}


# ---------------------------------------------------------------------------
# Verification metrics (reference derivatives only, no RNG)


def constrained_metrics(problem, cset, x, gamma):
    g = problem.gradient(x)
    gp = gamma * (x - prox_exact(cset, x, g, gamma))
    out = {
        "fw_gap": fw_gap_at(cset, x, g),
        "gp_norm": float(np.linalg.norm(gp)),
        "x_norm": float(np.linalg.norm(x)),
    }
    if problem.optimum_value is not None:
        out["f_gap"] = float(problem.value(x) - problem.optimum_value)
    return out


def _start_point(cset, problem, x0):
    d = problem.dimension
    x = cset.project(np.zeros(d)) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,):
        raise ContractViolation(f"x0 must have dimension {d}")
    if not cset.contains(x):
        raise ContractViolation("x0 must be feasible")
    return x


def _expectation(metrics, probs, indices):
    """sum_j probs[j] * metrics[indices[j]][key] for each key present everywhere."""
    keys = set.intersection(*(set(metrics[i]) for i in indices)) - {"x_norm"}
    return {k: float(sum(p * metrics[i][k] for p, i in zip(probs, indices))) for k in sorted(keys)}


def _check_feasible(cset, x, k, record):
    if not cset.contains(x):
        raise SolverError(f"iterate {k} left the feasible set", record)


def zscg(problem, cset, schedule: ZscgSchedule, seed, x0=None, verify=True, keep_iterates=False):
    """Zeroth-order stochastic conditional gradient. Returns (z_R, RunRecord).

    ``record.expected['fw_gap']`` is the gap averaged over the output law with
    the gap at iteration k measured at z_{k-1}; ``record.final`` holds the
    criteria at the returned z_R.
    """
    N = schedule.N
    streams = make_streams(seed)
    probs = schedule.output_probabilities()
    R = 1 + int(streams.output.choice(N, p=probs))
    oracle = ZeroOrderOracle(problem, streams.noise)
    gamma_ref = problem.lipschitz_grad if problem.lipschitz_grad > 0 else 1.0
    log_ks = logged_indices(N, (R,))
    rec = RunRecord("zscg", int(seed), schedule.echo(), output_index=R)
    rec.iterates = [] if keep_iterates else None

    z = _start_point(cset, problem, x0)
    metrics = {}
    out = z

    def log(k, z, alpha=None, m=None):
        if verify:
            metrics[k] = constrained_metrics(problem, cset, z, gamma_ref)
        if k in log_ks:
            rec.add_row(k=k, calls=oracle.calls, grad_calls=oracle.calls, lmo_calls=rec.lmo_calls,
                        alpha=alpha, m=m, is_output=(k == R), x_norm=float(np.linalg.norm(z)),
                        **{c: v for c, v in metrics.get(k, {}).items() if c != "x_norm"})
        if rec.iterates is not None:
            rec.iterates.append(z.copy())

    log(0, z)
    for k in range(1, N + 1):
        alpha = float(schedule.alpha[k - 1])
        m = int(schedule.m[k - 1])
        G = grad_averaged(oracle, z, schedule.nu, m, streams.directions).vector
        v = cset.lmo(G)
        rec.lmo_calls += 1
        z = (1.0 - alpha) * z + alpha * v
        _check_feasible(cset, z, k, rec)
        log(k, z, alpha, m)
        if k == R:
            out = z.copy()

    rec.oracle_calls = rec.grad_calls = oracle.calls
    if verify:
        rec.expected = _expectation(metrics, probs, range(0, N))
        rec.final = dict(metrics[R])
        rec.notes["last"] = dict(metrics[N])
    return out, rec


def zscg_accelerated(problem, cset, schedule: AcceleratedSchedule, seed, x0=None, verify=True,
                     keep_iterates=False):
    """Accelerated zeroth-order method with ICG prox steps. Returns (z_N, RunRecord)."""
    N = schedule.N
    streams = make_streams(seed)
    oracle = ZeroOrderOracle(problem, streams.noise)
    gamma_ref = problem.lipschitz_grad if problem.lipschitz_grad > 0 else 1.0
    log_ks = logged_indices(N)
    rec = RunRecord("zscg_accelerated", int(seed), schedule.echo(), output_index=N)
    rec.iterates = [] if keep_iterates else None
    rec.notes["icg_iterations"] = []

    x = _start_point(cset, problem, x0)
    z = x.copy()

    def log(k, z, **sched):
        met = constrained_metrics(problem, cset, z, gamma_ref) if verify else {}
        if k in log_ks:
            rec.add_row(k=k, calls=oracle.calls, grad_calls=oracle.calls, lmo_calls=rec.lmo_calls,
                        is_output=(k == N), x_norm=float(np.linalg.norm(z)),
                        **sched, **{c: v for c, v in met.items() if c != "x_norm"})
        if rec.iterates is not None:
            rec.iterates.append(z.copy())
        return met

    log(0, z)
    met = {}
    for k in range(1, N + 1):
        alpha = float(schedule.alpha[k - 1])
        gamma = float(schedule.gamma[k - 1])
        mu = float(schedule.mu[k - 1])
        m = int(schedule.m[k - 1])
        w = (1.0 - alpha) * z + alpha * x
        G = grad_averaged(oracle, w, schedule.nu, m, streams.directions).vector
        try:
            res = icg(cset, x, G, IcgParams(gamma, mu, schedule.icg_max_iters))
        except IcgBudgetError as exc:
            rec.lmo_calls += exc.iterations
            exc.record = rec
            exc.args = (f"iteration {k}: {exc.args[0]}",)
            raise
        rec.lmo_calls += res.iterations
        rec.notes["icg_iterations"].append(res.iterations)
        x = res.point
        z = (1.0 - alpha) * z + alpha * x
        _check_feasible(cset, z, k, rec)
        met = log(k, z, alpha=alpha, gamma=gamma, mu=mu, m=m)

    rec.oracle_calls = rec.grad_calls = oracle.calls
    if verify:
        rec.final = dict(met) if N else constrained_metrics(problem, cset, z, gamma_ref)
        rec.expected = {c: v for c, v in rec.final.items() if c != "x_norm"}
    return z, rec


def zsgd_inexact_nonconvex(problem, cset, schedule: InexactSchedule, seed, x0=None, verify=True,
                           keep_iterates=False):
    """x_k = ICG(x_{k-1}, averaged gradient, gamma_k, mu_k); output x_R, R uniform on {0..N-1}."""
    N = schedule.N
    streams = make_streams(seed)
    R = int(streams.output.integers(0, N))
    oracle = ZeroOrderOracle(problem, streams.noise)
    log_ks = logged_indices(N, (R,))
    rec = RunRecord("zsgd_inexact_nonconvex", int(seed), schedule.echo(), output_index=R)
    rec.iterates = [] if keep_iterates else None
    rec.notes["icg_iterations"] = []
    rec.notes["certificates"] = []

    x = _start_point(cset, problem, x0)
    metrics = {}
    out = x.copy()

    def log(k, x, **sched):
        if verify:
            metrics[k] = constrained_metrics(problem, cset, x, float(schedule.gamma[min(k, N - 1)]))
            metrics[k]["gp_norm_sq"] = metrics[k]["gp_norm"] ** 2
        if k in log_ks:
            rec.add_row(k=k, calls=oracle.calls, grad_calls=oracle.calls, lmo_calls=rec.lmo_calls,
                        is_output=(k == R), x_norm=float(np.linalg.norm(x)),
                        **sched, **{c: v for c, v in metrics.get(k, {}).items()
                                    if c not in ("x_norm", "gp_norm_sq")})
        if rec.iterates is not None:
            rec.iterates.append(x.copy())

    log(0, x)
    for k in range(1, N + 1):
        gamma = float(schedule.gamma[k - 1])
        mu = float(schedule.mu[k - 1])
        m = int(schedule.m[k - 1])
        G = grad_averaged(oracle, x, schedule.nu, m, streams.directions).vector
        try:
            res = icg(cset, x, G, IcgParams(gamma, mu, schedule.icg_max_iters))
        except IcgBudgetError as exc:
            rec.lmo_calls += exc.iterations
            exc.record = rec
            exc.args = (f"iteration {k}: {exc.args[0]}",)
            raise
        rec.lmo_calls += res.iterations
        rec.notes["icg_iterations"].append(res.iterations)
        if verify:
            rec.notes["certificates"].append((icg_certificate(cset, x, G, gamma, res.point), mu))
        x = res.point
        _check_feasible(cset, x, k, rec)
        log(k, x, gamma=gamma, mu=mu, m=m)
        if k == R:
            out = x.copy()

    rec.oracle_calls = rec.grad_calls = oracle.calls
    if verify:
        rec.expected = _expectation(metrics, np.full(N, 1.0 / N), range(0, N))
        rec.final = dict(metrics[R])
    return out, rec
