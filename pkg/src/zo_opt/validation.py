"""Self-contained statistical checks of the estimators, used by ``zo-opt validate-estimators``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import (
    grad_two_point_samples,
    hess_averaged,
    linf_moment,
    linf_moment_bound,
    smoothed_value_reference,
)
from .oracle import Quadratic, StrictSaddle2D, ZeroOrderOracle


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def gradient_mean_error(problem, x, nu, M, seed):
    """(||mean estimate - grad f||, ||stderr vector||) over M two-point samples."""
    rng = np.random.default_rng(seed)
    oracle = ZeroOrderOracle(problem, np.random.default_rng(seed + 1))
    S = grad_two_point_samples(oracle, x, nu, M, rng)
    err = float(np.linalg.norm(S.mean(axis=0) - problem.gradient(x)))
    se = float(np.linalg.norm(S.std(axis=0, ddof=1) / math.sqrt(M)))
    return err, se


def hessian_mean_error(problem, x, nu, M, seed):
    """(||mean estimate - hess f||_op, ||elementwise stderr||_F) over M three-point samples."""
    rng = np.random.default_rng(seed)
    oracle = ZeroOrderOracle(problem, np.random.default_rng(seed + 1))
    H = hess_averaged(oracle, x, nu, M, rng)
    d = problem.dimension
    U = H.directions
    c = H.coefficients * M  # per-sample coefficients
    first = np.zeros((d, d))
    second = np.zeros((d, d))
    eye = np.eye(d)
    for lo in range(0, M, 4096):
        Ub, cb = U[lo:lo + 4096], c[lo:lo + 4096]
        mats = cb[:, None, None] * (Ub[:, :, None] * Ub[:, None, :] - eye)
        first += mats.sum(axis=0)
        second += (mats * mats).sum(axis=0)
    mean = first / M
    var = (second / M - mean * mean) * M / (M - 1)
    se = float(np.sqrt(np.maximum(var, 0.0).sum() / M))
    err = float(np.linalg.norm(mean - problem.hessian(x), 2))
    return err, se


def run_checks(quick=False, seed=0):
    M = 20_000 if quick else 100_000
    results = []

    rng = np.random.default_rng(seed)
    d = 10
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    A = (Q * np.linspace(0.5, 2.0, d)) @ Q.T
    quad = Quadratic(A, rng.standard_normal(d))
    x = rng.standard_normal(d)
    err, se = gradient_mean_error(quad, x, 1e-3, M, seed)
    results.append(CheckResult("stein_gradient", err <= 5 * se, f"error {err:.4g} vs 5 SE {5 * se:.4g}"))

    diag = Quadratic(np.diag(np.arange(1.0, 6.0)))
    err, se = hessian_mean_error(diag, np.zeros(5), 1e-2, M, seed)
    results.append(CheckResult("stein_hessian", err <= 5 * se, f"op-norm error {err:.4g} vs 5 SE {5 * se:.4g}"))

    nu = 0.1
    fv, fse = smoothed_value_reference(diag, np.ones(5), nu, M, np.random.default_rng(seed), with_stderr=True)
    exact = float(diag.value(np.ones(5))) + nu * nu * np.trace(diag.A) / 2
    results.append(CheckResult("smoothed_value", abs(fv - exact) <= 5 * fse,
                               f"|MC - exact| {abs(fv - exact):.3g} vs 5 SE {5 * fse:.3g}"))

    saddle = StrictSaddle2D()
    for nu in (0.1, 0.01):
        bound = nu / 2 * saddle.lipschitz_grad * (2 + 3) ** 1.5
        err, se = gradient_mean_error(saddle, np.array([0.5, -0.3]), nu, M, seed)
        results.append(CheckResult(f"gradient_bias_nu={nu}", err <= bound + 5 * se,
                                   f"bias {err:.3g} <= {bound:.3g} (+5 SE {5 * se:.2g})"))

    for dim in (10, 100, 1000):
        for k in (2, 4, 6):
            mean, mse = linf_moment(dim, k, M // (10 if dim == 1000 and quick else 1), np.random.default_rng(seed))
            bound = linf_moment_bound(dim, k)
            results.append(CheckResult(f"linf_moment_d={dim}_k={k}", mean <= bound,
                                       f"{mean:.4g} <= {bound:.4g}"))
    return results
