"""Gaussian-smoothing gradient estimators and Stein-type Hessian estimators.

Every sample draws its own direction ``u ~ N(0, I)`` from the estimator
stream and its own noise ``xi`` from the oracle stream. All evaluations
belonging to one sample share that ``xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericError

NORM_MODES = ("euclidean", "linf")
DENSE_LIMIT = 64
_CHUNK_ELEMS = 1 << 18


@dataclass(frozen=True)
class SmoothingParams:
    nu: float
    norm_mode: str = "euclidean"

    def __post_init__(self):
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise ContractViolation(f"smoothing radius must be positive and finite, got {self.nu}")
        if self.norm_mode not in NORM_MODES:
            raise ContractViolation(f"norm_mode must be one of {NORM_MODES}")


@dataclass
class GradientEstimate:
    vector: np.ndarray
    samples_used: int
    nu: float
    oracle_calls: int


def _as_params(params) -> SmoothingParams:
    return params if isinstance(params, SmoothingParams) else SmoothingParams(float(params))


def _chunks(total, d):
    step = max(1, _CHUNK_ELEMS // max(d, 1))
    start = 0
    while start < total:
        n = min(step, total - start)
        yield n
        start += n


def _check_count(name, n):
    if int(n) != n or n < 1:
        raise ContractViolation(f"{name} must be a positive integer, got {n}")
    return int(n)


def _guard(values, what):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what}")
    return values


# ---------------------------------------------------------------------------
# Gradients


def _two_point_chunk(oracle, x, nu, n, rng):
    U = rng.standard_normal((n, x.size))
    noise = oracle.draw(n)
    f_plus = oracle(x + nu * U, noise)
    f_base = oracle.repeated(x, noise, n)
    coef = _guard((f_plus - f_base) / nu, "finite-difference quotient")
    return U, coef


def grad_two_point_samples(oracle, x, params, m, rng):
    """The ``m`` individual two-point estimates as an (m, d) array."""
    nu = _as_params(params).nu
    m = _check_count("m", m)
    x = np.asarray(x, dtype=float)
    out = []
    for n in _chunks(m, x.size):
        U, coef = _two_point_chunk(oracle, x, nu, n, rng)
        out.append(coef[:, None] * U)
    return np.concatenate(out)


def grad_averaged(oracle, x, params, m, rng) -> GradientEstimate:
    """Mean of ``m`` independent two-point estimates [F(x+nu u) - F(x)]/nu * u."""
    nu = _as_params(params).nu
    m = _check_count("m", m)
    x = np.asarray(x, dtype=float)
    acc = np.zeros(x.size)
    for n in _chunks(m, x.size):
        U, coef = _two_point_chunk(oracle, x, nu, n, rng)
        acc += coef @ U
    return GradientEstimate(acc / m, m, nu, 2 * m)


def grad_two_point(oracle, x, params, rng) -> GradientEstimate:
    return grad_averaged(oracle, x, params, 1, rng)


def smoothed_value_reference(problem, x, nu, M, rng, with_stderr=False):
    """Monte-Carlo estimate of f_nu(x) = E f(x + nu u) on the noiseless objective."""
    M = _check_count("M", M)
    x = problem.check_point(x)
    total = 0.0
    total_sq = 0.0
    for n in _chunks(M, x.size):
        v = problem.value(x + nu * rng.standard_normal((n, x.size)))
        total += float(np.sum(v))
        total_sq += float(np.sum(v * v))
    mean = total / M
    if not with_stderr:
        return mean
    var = max(total_sq / M - mean * mean, 0.0) * M / max(M - 1, 1)
    return mean, math.sqrt(var / M)


# ---------------------------------------------------------------------------
# Hessians


class StructuredHessian:
    """H = sum_i c_i u_i u_i^T + shift * I, stored by its directions and coefficients."""

    def __init__(self, directions, coefficients, identity_shift=None):
        U = np.atleast_2d(np.asarray(directions, dtype=float))
        c = np.atleast_1d(np.asarray(coefficients, dtype=float))
        if U.shape[0] != c.size:
            raise ContractViolation("need one coefficient per direction")
        self.directions = U
        self.coefficients = c
        self.identity_shift = float(-c.sum() if identity_shift is None else identity_shift)
        U.setflags(write=False)
        c.setflags(write=False)

    @property
    def dimension(self):
        return self.directions.shape[1]

    @property
    def rank(self):
        return self.coefficients.size

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dimension:
            raise ContractViolation(f"vector has dimension {v.shape[0]}, expected {self.dimension}")
        U = self.directions
        return U.T @ (self.coefficients * (U @ v)) + self.identity_shift * v

    __matmul__ = matvec

    def quadratic_form(self, v):
        v = np.asarray(v, dtype=float)
        p = self.directions @ v
        return float(self.coefficients @ (p * p) + self.identity_shift * (v @ v))

    def norm_bound(self):
        """Upper bound on the spectral norm, cheap to evaluate."""
        sq = np.einsum("ij,ij->i", self.directions, self.directions)
        return abs(self.identity_shift) + float(np.abs(self.coefficients) @ sq)

    def spectral_upper(self):
        """mu = shift + sum |c_i| ||u_i||^2 >= lambda_max(H)."""
        sq = np.einsum("ij,ij->i", self.directions, self.directions)
        return self.identity_shift + float(np.abs(self.coefficients) @ sq)

    def to_dense(self, allow_large=False):
        if self.dimension > DENSE_LIMIT and not allow_large:
            raise ContractViolation(f"refusing to materialise a {self.dimension}x{self.dimension} matrix")
        U = self.directions
        H = (U.T * self.coefficients) @ U + self.identity_shift * np.eye(self.dimension)
        return 0.5 * (H + H.T)

    def min_eigenvalue(self, tol=1e-6, max_iter=5000):
        """(lambda_min, eigenvector) by power iteration on mu I - H."""
        return min_eigenvalue(self.matvec, self.dimension, self.spectral_upper(), tol, max_iter)

    def __repr__(self):
        return f"StructuredHessian(d={self.dimension}, b={self.rank}, shift={self.identity_shift:.4g})"


class DenseOperator:
    """Adapter giving a dense symmetric matrix the StructuredHessian interface."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def matvec(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    __matmul__ = matvec

    def quadratic_form(self, v):
        return float(v @ self.matrix @ v)

    def norm_bound(self):
        return float(np.abs(self.matrix).sum(axis=1).max()) if self.matrix.size else 0.0

    def spectral_upper(self):
        return self.norm_bound()

    def to_dense(self, allow_large=False):
        return self.matrix.copy()

    def min_eigenvalue(self, tol=1e-6, max_iter=5000):
        return min_eigenvalue(self.matvec, self.dimension, self.spectral_upper(), tol, max_iter)


def min_eigenvalue(matvec, dim, upper, tol=1e-6, max_iter=5000, seed=0):
    """Smallest eigenvalue of a symmetric operator with lambda_max <= ``upper``.

    Power iteration on ``upper * I - H`` (positive semidefinite). The start
    vector comes from a private generator so callers' streams are untouched.
    """
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    theta = 0.0
    for _ in range(max_iter):
        w = upper * v - matvec(v)
        new_theta = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return float(upper), v
        v = w / nrm
        if abs(new_theta - theta) <= tol * max(1.0, abs(new_theta)):
            theta = new_theta
            break
        theta = new_theta
    return float(upper - theta), v


def hessian_matvec(H, v):
    return H.matvec(v)


def _hessian_chunks(oracle, x, nu, b, rng, scheme):
    for n in _chunks(b, x.size):
        U = rng.standard_normal((n, x.size))
        noise = oracle.draw(n)
        if scheme == "three_point":
            fp = oracle(x + nu * U, noise)
            fm = oracle(x - nu * U, noise)
            f0 = oracle.repeated(x, noise, n)
            coef = (fp + fm - 2.0 * f0) / (2.0 * nu * nu)
        elif scheme == "two_point":
            fp = oracle(x + nu * U, noise)
            f0 = oracle.repeated(x, noise, n)
            coef = (fp - f0) / (nu * nu)
        elif scheme == "one_point":
            coef = oracle(x + nu * U, noise) / (nu * nu)
        else:
            raise ContractViolation(f"unknown Hessian scheme {scheme!r}")
        yield U, _guard(coef, "second-difference coefficient")


HESSIAN_CALLS = {"three_point": 3, "two_point": 2, "one_point": 1}


def hess_averaged(oracle, x, params, b, rng, scheme="three_point") -> StructuredHessian:
    """Average of ``b`` estimates c_i (u_i u_i^T - I) in structured form."""
    nu = _as_params(params).nu
    b = _check_count("b", b)
    x = np.asarray(x, dtype=float)
    Us, cs = [], []
    for U, coef in _hessian_chunks(oracle, x, nu, b, rng, scheme):
        Us.append(U)
        cs.append(coef)
    c = np.concatenate(cs) / b
    return StructuredHessian(np.concatenate(Us), c, -c.sum())


def hess_three_point(oracle, x, params, rng) -> StructuredHessian:
    return hess_averaged(oracle, x, params, 1, rng, "three_point")


def hess_two_point(oracle, x, params, rng) -> StructuredHessian:
    return hess_averaged(oracle, x, params, 1, rng, "two_point")


def hess_one_point(oracle, x, params, rng) -> StructuredHessian:
    return hess_averaged(oracle, x, params, 1, rng, "one_point")


# ---------------------------------------------------------------------------
# Moments


def linf_moment(d, k, M, rng):
    """Monte-Carlo (mean, stderr) of E ||u||_inf^k for u ~ N(0, I_d)."""
    M = _check_count("M", M)
    total = 0.0
    total_sq = 0.0
    for n in _chunks(M, d):
        v = np.max(np.abs(rng.standard_normal((n, d))), axis=1) ** k
        total += float(v.sum())
        total_sq += float((v * v).sum())
    mean = total / M
    var = max(total_sq / M - mean * mean, 0.0) * M / max(M - 1, 1)
    return mean, math.sqrt(var / M)


def linf_moment_bound(d, k, C_hat=2.0):
    return C_hat * (2.0 * math.log(d)) ** (k / 2)
