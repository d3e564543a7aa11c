"""Zeroth-order stochastic cubic-regularised Newton method.

Each step minimises the model

    m(s) = <g, s> + 1/2 <H s, s> + alpha/6 ||s||^3

built from an averaged two-point gradient and an averaged three-point Stein
Hessian. The model is minimised with Hessian-vector products only.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DivergenceError, PracticalScheduleWarning, SubsolverBudgetError
from .estimators import grad_averaged, hess_averaged
from .oracle import ZeroOrderOracle
from .records import RunRecord, logged_indices, make_streams

DIVERGENCE_LIMIT = 1e8
SMALL_GRADIENT = 1e-8
PERTURBATION = 1e-3


class CubicModel:
    def __init__(self, g, H, alpha, anchor=None):
        if not alpha > 0:
            raise ContractViolation("cubic weight alpha must be positive")
        self.g = np.asarray(g, dtype=float)
        self.H = H
        self.alpha = float(alpha)
        self.anchor = anchor
        if self.H.dimension != self.g.size:
            raise ContractViolation("gradient and Hessian dimensions differ")

    @property
    def dimension(self):
        return self.g.size

    def value(self, s):
        s = np.asarray(s, dtype=float)
        return float(self.g @ s + 0.5 * self.H.quadratic_form(s) + self.alpha / 6.0 * np.linalg.norm(s) ** 3)

    def gradient(self, s):
        s = np.asarray(s, dtype=float)
        return self.g + self.H.matvec(s) + 0.5 * self.alpha * np.linalg.norm(s) * s


@dataclass
class SubproblemCertificate:
    residual: float  # ||g + H s + alpha/2 ||s|| s||
    lambda_min: float  # of H, by power iteration
    curvature: float  # lambda_min + alpha/2 ||s||
    model_value: float
    iterations: int
    tol: float

    @property
    def accepted(self):
        return self.residual <= self.tol and self.curvature >= -self.tol and self.model_value <= 0.0


def subsolver_tolerance(eps, g_norm):
    return min(eps / 10.0, 1e-6) * max(1.0, g_norm)


def _cauchy_point(model):
    g = model.g
    gn = np.linalg.norm(g)
    kappa = model.H.quadratic_form(g) / gn**2
    t = (-kappa + math.sqrt(kappa * kappa + 2.0 * model.alpha * gn)) / model.alpha
    return -t * g / gn


def solve_cubic_subproblem(model: CubicModel, tol=1e-8, max_iters=100_000, rng=None):
    """Global minimiser of the cubic model by gradient descent on hessian-vector products.

    Returns ``(s, certificate)``. The first-order residual is driven below
    ``tol``; if the limit point violates H + alpha/2 ||s|| I >= 0 the iterate is
    pushed along the leftmost eigenvector and descent resumes.
    """
    H = model.H
    alpha = model.alpha
    d = model.dimension
    rng = rng if rng is not None else np.random.default_rng(0)
    lam, v_min = H.min_eigenvalue()
    h_bound = H.norm_bound()

    gn = np.linalg.norm(model.g)
    if gn < SMALL_GRADIENT:
        if lam >= -tol:
            s = np.zeros(d)
            return s, SubproblemCertificate(float(gn), lam, lam, 0.0, 0, tol)
        u = rng.standard_normal(d)
        s = PERTURBATION * u / np.linalg.norm(u)
    else:
        s = _cauchy_point(model)

    for it in range(1, max_iters + 1):
        grad = model.gradient(s)
        res = float(np.linalg.norm(grad))
        sn = float(np.linalg.norm(s))
        if res <= tol:
            curv = lam + 0.5 * alpha * sn
            if curv >= -tol:
                return s, SubproblemCertificate(res, lam, curv, model.value(s), it, tol)
            # Stationary but not the global minimiser: step along negative curvature.
            step = max(PERTURBATION, -2.0 * curv / alpha)
            direction = v_min if v_min @ s <= 0 else -v_min
            s = s + step * direction
            continue
        s = s - grad / (h_bound + alpha * sn)

    grad = model.gradient(s)
    raise SubsolverBudgetError(
        f"cubic subproblem not solved in {max_iters} iterations (residual {np.linalg.norm(grad):.3e})",
        best=s, residual=float(np.linalg.norm(grad)),
    )


def scalar_cubic_minimiser(g, h, alpha):
    """Closed-form global minimiser of g s + h s^2/2 + alpha |s|^3/6 in one dimension."""
    roots = []
    # s > 0: alpha/2 s^2 + h s + g = 0; s < 0: -alpha/2 s^2 + h s + g = 0
    for sign in (1.0, -1.0):
        a = sign * alpha / 2.0
        disc = h * h - 4.0 * a * g
        if disc < 0:
            continue
        for r in ((-h + math.sqrt(disc)) / (2 * a), (-h - math.sqrt(disc)) / (2 * a)):
            if r * sign >= 0:
                roots.append(r)
    roots.append(0.0)
    return min(roots, key=lambda s: g * s + 0.5 * h * s * s + alpha / 6.0 * abs(s) ** 3)


# ---------------------------------------------------------------------------
# Parameters


def _seq(value, N, integer=False):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (N,)).copy()
    if integer:
        if np.any(arr < 1) or np.any(arr != np.round(arr)):
            raise ContractViolation("batch sizes must be positive integers")
        arr = arr.astype(np.int64)
    return arr


@dataclass
class CubicParams:
    N: int
    nu: float
    alpha: np.ndarray
    b: np.ndarray
    m: np.ndarray
    eps: float = 1e-6
    sub_tol: float | None = None
    sub_max_iters: int = 100_000
    mode: str = "practical"
    derived: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ContractViolation("N must be a positive integer")
        self.N = int(self.N)
        self.alpha = _seq(self.alpha, self.N)
        self.b = _seq(self.b, self.N, integer=True)
        self.m = _seq(self.m, self.N, integer=True)
        if np.any(self.alpha <= 0):
            raise ContractViolation("alpha_k must be positive")
        if not self.nu > 0:
            raise ContractViolation("nu must be positive")
        if not self.eps > 0:
            raise ContractViolation("eps must be positive")

    @classmethod
    def paper(cls, problem, eps, f0_gap, B=None, nu=None):
        """Theory-mode parameters for target accuracy ``eps``; batch sizes are astronomically large."""
        d = problem.dimension
        L = problem.lipschitz_grad
        LH = problem.lipschitz_hess
        if not LH > 0:
            raise ContractViolation("paper mode needs a positive Hessian Lipschitz constant")
        if B is None:
            B = float(np.linalg.norm(problem.gradient(np.zeros(d))) + L * problem.box_radius * math.sqrt(d))
        sigma2 = problem.gradient_noise_variance("l2")
        nu_max = 0.5 * min(math.sqrt(LH * eps / (36 * (d + 16) ** 5)), eps / (L * (d + 3) ** 1.5))
        if nu is None:
            nu = nu_max
        elif nu > nu_max * (1 + 1e-12):
            raise ContractViolation(f"nu={nu} exceeds the admissible bound {nu_max}")
        N = max(1, math.ceil(12 * math.sqrt(LH) * f0_gap / eps**1.5))
        b = math.ceil(2 * L * L / LH * (4 * (d + 16) ** 2) ** 4 * (1 + 2 * math.log(2 * d)) ** (1 / 3) / eps)
        m = math.ceil(26 * (d + 5) * (B * B + sigma2) / eps**2)
        return cls(N, nu, LH, b, m, eps, mode="paper", derived={"nu_max": nu_max, "B": B})

    @classmethod
    def practical(cls, N, nu, alpha, b, m, eps=1e-6, sub_tol=None, sub_max_iters=100_000):
        warnings.warn("practical schedule: convergence constants of the paper-mode schedule do not apply",
                      PracticalScheduleWarning, stacklevel=2)
        return cls(N, nu, alpha, b, m, eps, sub_tol, sub_max_iters)

    def tolerance(self, g_norm):
        return self.sub_tol if self.sub_tol is not None else subsolver_tolerance(self.eps, g_norm)

    def echo(self):
        return {"mode": self.mode, "N": self.N, "nu": self.nu, "eps": self.eps, "sub_tol": self.sub_tol,
                "sub_max_iters": self.sub_max_iters}


# ---------------------------------------------------------------------------
# Verification criteria


def second_order_criterion(problem, x):
    """(||grad f(x)||_2, lambda_min(hess f(x))) from reference derivatives."""
    x = problem.check_point(x)
    lam = np.linalg.eigvalsh(problem.hessian(x))
    return float(np.linalg.norm(problem.gradient(x))), float(lam[0])


def local_optimality_measures(grad_norm, lambda_min, lambda_max, L_H):
    """Both normalisations of the second-order measure.

    ``spectral``: max{sqrt(||g||), -lambda_min / sqrt(lambda_max)}
    ``lipschitz``: max{sqrt(||g||), -5 lambda_min / (8 sqrt(L_H))}
    """
    root = math.sqrt(max(grad_norm, 0.0))
    spectral = max(root, -lambda_min / math.sqrt(lambda_max)) if lambda_max > 0 else math.inf
    lipschitz = max(root, -5.0 * lambda_min / (8.0 * math.sqrt(L_H))) if L_H > 0 else math.inf
    return {"spectral": spectral, "lipschitz": lipschitz}


def cubic_metrics(problem, x):
    x = np.asarray(x, dtype=float)
    lam = np.linalg.eigvalsh(problem.hessian(x))
    gn = float(np.linalg.norm(problem.gradient(x)))
    out = {"gp_norm": gn, "lambda_min": float(lam[0]), "lambda_max": float(lam[-1]),
           "x_norm": float(np.linalg.norm(x))}
    out.update({"local_" + k: v for k, v in
                local_optimality_measures(gn, out["lambda_min"], out["lambda_max"], problem.lipschitz_hess).items()})
    if problem.optimum_value is not None:
        out["f_gap"] = float(problem.value(x) - problem.optimum_value)
    return out


def zscrn(problem, params: CubicParams, seed, x0=None, verify=True, keep_iterates=False):
    """Cubic-regularised Newton steps on zeroth-order estimates; returns (x_R, record)."""
    N = params.N
    d = problem.dimension
    streams = make_streams(seed)
    R = 1 + int(streams.output.integers(0, N))
    oracle = ZeroOrderOracle(problem, streams.noise)
    log_ks = logged_indices(N, (R,))
    rec = RunRecord("zscrn", int(seed), params.echo(), output_index=R)
    rec.iterates = [] if keep_iterates else None
    rec.notes["certificates"] = []

    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (d,):
        raise ContractViolation(f"x0 must have dimension {d}")
    metrics = {}
    out = x.copy()

    def log(k, x, **extra):
        if verify:
            metrics[k] = cubic_metrics(problem, x)
        if k in log_ks:
            met = {c: v for c, v in metrics.get(k, {}).items() if c in ("gp_norm", "lambda_min", "f_gap")}
            rec.add_row(k=k, calls=oracle.calls, grad_calls=rec.grad_calls, hess_calls=rec.hess_calls,
                        is_output=(k == R), x_norm=float(np.linalg.norm(x)), **met, **extra)
        if rec.iterates is not None:
            rec.iterates.append(x.copy())

    log(0, x)
    for k in range(1, N + 1):
        alpha = float(params.alpha[k - 1])
        m = int(params.m[k - 1])
        b = int(params.b[k - 1])
        before = oracle.calls
        G = grad_averaged(oracle, x, params.nu, m, streams.directions).vector
        rec.grad_calls += oracle.calls - before
        before = oracle.calls
        H = hess_averaged(oracle, x, params.nu, b, streams.directions)
        rec.hess_calls += oracle.calls - before
        model = CubicModel(G, H, alpha, anchor=x)
        tol = params.tolerance(float(np.linalg.norm(G)))
        try:
            s, cert = solve_cubic_subproblem(model, tol, params.sub_max_iters)
        except SubsolverBudgetError as exc:
            rec.oracle_calls = oracle.calls
            exc.record = rec
            exc.args = (f"iteration {k}: {exc.args[0]}",)
            raise
        rec.notes["certificates"].append(cert)
        x = x + s
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            rec.oracle_calls = oracle.calls
            raise DivergenceError(f"zscrn diverged at iteration {k}", rec)
        log(k, x, alpha=alpha, m=m, b=b, model_decrease=cert.model_value, subsolver_iters=cert.iterations)
        if k == R:
            out = x.copy()

    rec.oracle_calls = oracle.calls
    if verify:
        keys = [c for c in metrics[1] if c != "x_norm"]
        rec.expected = {c: float(np.mean([metrics[k][c] for k in range(1, N + 1)])) for c in keys}
        rec.final = dict(metrics[R])
    return out, rec
