"""Stochastic zeroth-order oracle and analytic test problems.

A problem exposes the noiseless objective ``f`` (vectorised over leading
axes) together with reference derivatives. Solvers never see the reference
derivatives; they only query a :class:`ZeroOrderOracle`, which adds noise
and counts evaluations.

Noise model: one draw ``xi`` per estimator sample yields

    F(x, xi) = f(x) + eps(xi) + <zeta(xi), x_J>

with ``eps ~ N(0, noise_std^2)`` and ``zeta ~ N(0, grad_noise_std^2 I)``
acting on the coordinates ``J`` the objective reads. Then E[F] = f and
grad F = grad f + zeta, so the gradient-noise variance is
``grad_noise_std^2 * |J|`` in the Euclidean norm. The offset ``eps`` cancels
inside a finite difference that shares ``xi``; only ``zeta`` survives.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractViolation, DomainError, NotAvailableError, NumericError

FAMILIES = ("quadratic", "sparse_support", "strict_saddle_2d", "least_squares")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class Problem:
    """Base class for analytic test problems with known ground truth."""

    family = "abstract"

    def __init__(self, dimension, noise_std=0.0, grad_noise_std=0.0, box_radius=1.0):
        if int(dimension) < 1:
            raise ContractViolation("dimension must be a positive integer")
        if noise_std < 0 or grad_noise_std < 0:
            raise ContractViolation("noise standard deviations must be >= 0")
        self.dimension = int(dimension)
        self.noise_std = float(noise_std)
        self.grad_noise_std = float(grad_noise_std)
        self.box_radius = float(box_radius)
        # Reference constants; subclasses fill them in.
        self.lipschitz_grad = math.nan
        self.lipschitz_grad_linf = math.nan
        self.lipschitz_hess = math.nan
        self.optimum_value = None
        self.minimizer = None

    # -- objective -----------------------------------------------------
    def value(self, X):
        raise NotImplementedError

    def gradient(self, x):
        raise NotAvailableError(f"no analytic gradient for family {self.family!r}")

    def hessian(self, x):
        raise NotAvailableError(f"no analytic Hessian for family {self.family!r}")

    # -- metadata ------------------------------------------------------
    @property
    def noise_coordinates(self):
        """Indices read by the objective (and tilted by gradient noise); None = all."""
        return None

    @property
    def sparsity(self):
        return self.dimension

    @property
    def deterministic(self):
        return self.noise_std == 0 and self.grad_noise_std == 0

    def gradient_noise_variance(self, norm="l2"):
        """E||grad F - grad f||_*^2 induced by the tilt noise.

        ``norm="l2"`` uses the Euclidean norm; ``norm="l1"`` is the dual of
        the l-infinity geometry used by the high-dimensional solvers.
        """
        k = self.dimension if self.noise_coordinates is None else len(self.noise_coordinates)
        t2 = self.grad_noise_std**2
        if norm == "l2":
            return t2 * k
        if norm == "l1":
            # E(sum |z_i|)^2 = k t^2 + k(k-1) (2/pi) t^2
            return t2 * (k + k * (k - 1) * 2.0 / math.pi)
        raise ValueError(f"unknown norm {norm!r}")

    def check_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise ContractViolation(
                f"point has trailing dimension {x.shape[-1:] or ()}, expected {self.dimension}"
            )
        if not np.all(np.isfinite(x)):
            raise DomainError("point has non-finite coordinates")
        return x

    def __repr__(self):
        return f"{type(self).__name__}(d={self.dimension}, noise_std={self.noise_std}, grad_noise_std={self.grad_noise_std})"


class Quadratic(Problem):
    """f(x) = 0.5 x'Ax + c'x with symmetric A."""

    family = "quadratic"

    def __init__(self, A, c=None, **kw):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ContractViolation("A must be square")
        if not np.allclose(A, A.T, atol=1e-12, rtol=0):
            raise ContractViolation("A must be symmetric")
        super().__init__(A.shape[0], **kw)
        self.A = _frozen(0.5 * (A + A.T))
        self.c = _frozen(np.zeros(self.dimension) if c is None else c)
        if self.c.shape != (self.dimension,):
            raise ContractViolation("c must have the same dimension as A")
        eig = np.linalg.eigvalsh(self.A)
        self.lipschitz_grad = float(np.max(np.abs(eig)))
        self.lipschitz_grad_linf = float(np.sum(np.abs(self.A)))
        self.lipschitz_hess = 0.0
        if eig[0] > 1e-12:
            xs = -np.linalg.solve(self.A, self.c)
            self.minimizer = _frozen(xs)
            self.optimum_value = float(0.5 * self.c @ xs)

    def value(self, X):
        X = np.asarray(X, dtype=float)
        return 0.5 * np.einsum("...i,...i->...", X @ self.A, X) + X @ self.c

    def gradient(self, x):
        return self.A @ np.asarray(x, dtype=float) + self.c

    def hessian(self, x):
        return np.array(self.A)


class SparseSupport(Problem):
    """Embeds an inner problem so that f reads only the coordinates in ``support``."""

    family = "sparse_support"

    def __init__(self, inner: Problem, support, dimension, **kw):
        support = np.asarray(support, dtype=int)
        if support.ndim != 1 or len(support) != inner.dimension:
            raise ContractViolation("support size must equal the inner problem dimension")
        if len(np.unique(support)) != len(support) or support.min() < 0 or support.max() >= dimension:
            raise ContractViolation("support must hold distinct indices in [0, dimension)")
        super().__init__(dimension, **kw)
        self.inner = inner
        self.support = support
        self.support.setflags(write=False)
        self.lipschitz_grad = inner.lipschitz_grad
        self.lipschitz_grad_linf = inner.lipschitz_grad_linf
        self.lipschitz_hess = inner.lipschitz_hess
        self.optimum_value = inner.optimum_value
        if inner.minimizer is not None:
            xs = np.zeros(dimension)
            xs[support] = inner.minimizer
            self.minimizer = _frozen(xs)

    @property
    def noise_coordinates(self):
        return self.support

    @property
    def sparsity(self):
        return len(self.support)

    def value(self, X):
        X = np.asarray(X, dtype=float)
        return self.inner.value(X[..., self.support])

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(self.dimension)
        g[self.support] = self.inner.gradient(x[self.support])
        return g

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        H = np.zeros((self.dimension, self.dimension))
        H[np.ix_(self.support, self.support)] = self.inner.hessian(x[self.support])
        return H


class StrictSaddle2D(Problem):
    """f(x, y) = x^4/4 - x^2/2 + y^2/2: strict saddle at 0, minima at (+-1, 0).

    L and L_H are valid on the box [-box_radius, box_radius]^2.
    """

    family = "strict_saddle_2d"

    def __init__(self, box_radius=2.0, **kw):
        super().__init__(2, box_radius=box_radius, **kw)
        R = self.box_radius
        curv = max(3 * R * R - 1.0, 1.0)
        self.lipschitz_grad = curv
        self.lipschitz_grad_linf = curv + 1.0
        self.lipschitz_hess = 6.0 * R
        self.optimum_value = -0.25
        self.minimizer = _frozen([1.0, 0.0])

    def value(self, X):
        X = np.asarray(X, dtype=float)
        x, y = X[..., 0], X[..., 1]
        return 0.25 * x**4 - 0.5 * x**2 + 0.5 * y**2

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([x[0] ** 3 - x[0], x[1]])

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.diag([3 * x[0] ** 2 - 1.0, 1.0])


class LeastSquares(Problem):
    """f(x) = 0.5 ||Ax - b||^2."""

    family = "least_squares"

    def __init__(self, A, b, **kw):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float)
        if b.shape != (A.shape[0],):
            raise ContractViolation("b must have one entry per row of A")
        super().__init__(A.shape[1], **kw)
        self.A = _frozen(A)
        self.b = _frozen(b)
        G = A.T @ A
        self.lipschitz_grad = float(np.linalg.norm(G, 2))
        self.lipschitz_grad_linf = float(np.sum(np.abs(G)))
        self.lipschitz_hess = 0.0
        xs, *_ = np.linalg.lstsq(A, b, rcond=None)
        self.minimizer = _frozen(xs)
        self.optimum_value = float(0.5 * np.sum((A @ xs - b) ** 2))

    def value(self, X):
        X = np.asarray(X, dtype=float)
        r = X @ self.A.T - self.b
        return 0.5 * np.sum(r * r, axis=-1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return self.A.T @ (self.A @ x - self.b)

    def hessian(self, x):
        return self.A.T @ self.A


# ---------------------------------------------------------------------------
# Oracle


@dataclass
class CallCounter:
    """Number of oracle evaluations in the current run."""

    function_evals: int = 0

    def add(self, n=1):
        self.function_evals += int(n)

    def reset(self):
        self.function_evals = 0


class Noise(NamedTuple):
    """One noise draw per sample: value offsets and (optional) gradient tilts."""

    offset: np.ndarray  # (n,)
    tilt: np.ndarray | None  # (n, k) or None


class ZeroOrderOracle:
    """Noisy function-value source F(x, xi) with call accounting.

    ``rng`` drives the noise only. Sample directions are drawn by the
    estimators from their own stream, so noiseless and noisy runs with the
    same seed share directions.
    """

    def __init__(self, problem: Problem, rng=None, counter: CallCounter | None = None):
        self.problem = problem
        self.rng = rng if rng is not None else np.random.default_rng()
        self.counter = counter if counter is not None else CallCounter()

    @property
    def dimension(self):
        return self.problem.dimension

    @property
    def calls(self):
        return self.counter.function_evals

    def draw(self, n):
        """Draw ``n`` independent xi's. Returns None for a noiseless problem."""
        p = self.problem
        if p.deterministic:
            return None
        offset = p.noise_std * self.rng.standard_normal(n) if p.noise_std > 0 else np.zeros(n)
        tilt = None
        if p.grad_noise_std > 0:
            coords = p.noise_coordinates
            k = p.dimension if coords is None else len(coords)
            tilt = p.grad_noise_std * self.rng.standard_normal((n, k))
        return Noise(offset, tilt)

    def __call__(self, X, noise: Noise | None = None):
        """Evaluate F at the rows of ``X`` (or a single point) under ``noise``."""
        p = self.problem
        X = p.check_point(X)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        vals = np.asarray(p.value(X2), dtype=float)
        if noise is not None:
            vals = vals + noise.offset
            if noise.tilt is not None:
                coords = p.noise_coordinates
                Xc = X2 if coords is None else X2[:, coords]
                vals = vals + np.sum(noise.tilt * Xc, axis=1)
        self.counter.add(X2.shape[0])
        if not np.all(np.isfinite(vals)):
            raise NumericError(f"oracle returned a non-finite value for {p!r}")
        return float(vals[0]) if single else vals

    def repeated(self, x, noise: Noise | None, n):
        """F(x, xi_i) for n draws at one point; f(x) is computed once, each call still counts."""
        p = self.problem
        x = p.check_point(x)
        base = float(p.value(x))
        vals = np.full(n, base)
        if noise is not None:
            vals = vals + noise.offset
            if noise.tilt is not None:
                coords = p.noise_coordinates
                vals = vals + noise.tilt @ (x if coords is None else x[coords])
        self.counter.add(n)
        if not np.all(np.isfinite(vals)):
            raise NumericError(f"oracle returned a non-finite value for {p!r}")
        return vals


def evaluate(problem: Problem, x, rng, counter: CallCounter | None = None):
    """One oracle call F(x, xi) with a fresh xi drawn from ``rng``."""
    oracle = ZeroOrderOracle(problem, rng, counter)
    return oracle(x, oracle.draw(1))


def reference_gradient(problem: Problem, x):
    """Exact gradient for verification. Does not touch any call counter."""
    return problem.gradient(problem.check_point(x))


def reference_hessian(problem: Problem, x):
    return problem.hessian(problem.check_point(x))


# ---------------------------------------------------------------------------
# JSON loading


def _random_rotation(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _quadratic_matrix(params, d, rng):
    if "A" in params:
        return np.asarray(params["A"], dtype=float)
    if "diag" in params:
        return np.diag(np.asarray(params["diag"], dtype=float))
    if "eigenvalues" in params or "eig_range" in params:
        if "eigenvalues" in params:
            lam = np.asarray(params["eigenvalues"], dtype=float)
        else:
            lo, hi = params["eig_range"]
            lam = np.linspace(lo, hi, d)
        if len(lam) != d:
            raise ConfigError("problem.parameters.eigenvalues", f"expected {d} values")
        Q = _random_rotation(d, rng)
        return (Q * lam) @ Q.T
    return np.eye(d)


def _vector_param(params, key, d, rng, default=0.0):
    if key in params:
        v = np.asarray(params[key], dtype=float)
        if v.shape != (d,):
            raise ConfigError(f"problem.parameters.{key}", f"expected length {d}")
        return v
    scale = params.get(f"{key}_scale")
    if scale is not None:
        return float(scale) * rng.standard_normal(d)
    return np.full(d, default)


def problem_from_config(cfg: dict) -> Problem:
    """Build a problem from ``{family, dimension, parameters, noise_std, box_radius, seed}``."""
    if not isinstance(cfg, dict):
        raise ConfigError("problem", "must be a JSON object")
    family = cfg.get("family")
    if family not in FAMILIES:
        raise ConfigError("problem.family", f"must be one of {FAMILIES}, got {family!r}")
    params = cfg.get("parameters", {}) or {}
    rng = np.random.default_rng(cfg.get("seed", 0))
    noise = dict(
        noise_std=float(cfg.get("noise_std", 0.0)),
        grad_noise_std=float(cfg.get("grad_noise_std", 0.0)),
    )
    box = float(cfg.get("box_radius", 2.0 if family == "strict_saddle_2d" else 1.0))
    try:
        d = int(cfg["dimension"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("problem.dimension", "required positive integer") from None

    if family == "quadratic":
        A = _quadratic_matrix(params, d, rng)
        c = _vector_param(params, "c", d, rng)
        return Quadratic(A, c, box_radius=box, **noise)
    if family == "strict_saddle_2d":
        if d != 2:
            raise ConfigError("problem.dimension", "strict_saddle_2d is two-dimensional")
        return StrictSaddle2D(box_radius=box, **noise)
    if family == "least_squares":
        if "A" in params:
            A = np.asarray(params["A"], dtype=float)
        else:
            A = rng.standard_normal((int(params.get("rows", d)), d))
        b = np.asarray(params["b"], dtype=float) if "b" in params else rng.standard_normal(A.shape[0])
        return LeastSquares(A, b, box_radius=box, **noise)

    # sparse_support
    if "support" in params:
        support = np.asarray(params["support"], dtype=int)
    elif "s" in params:
        s = int(params["s"])
        support = np.sort(rng.choice(d, s, replace=False)) if params.get("random_support", True) else np.arange(s)
    else:
        raise ConfigError("problem.parameters.support", "sparse_support needs 'support' or 's'")
    inner_cfg = dict(params.get("inner", {"family": "quadratic"}))
    inner_cfg.setdefault("family", "quadratic")
    inner_cfg["dimension"] = len(support)
    inner_cfg.setdefault("seed", cfg.get("seed", 0))
    if inner_cfg["family"] == "sparse_support":
        raise ConfigError("problem.parameters.inner.family", "cannot nest sparse_support")
    inner = problem_from_config(inner_cfg)
    return SparseSupport(inner, support, d, box_radius=box, **noise)


def load_problem(path) -> Problem:
    return problem_from_config(json.loads(Path(path).read_text()))
