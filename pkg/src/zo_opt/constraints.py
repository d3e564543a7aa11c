"""Feasible sets with linear minimization, projection and the ICG subsolver."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation, IcgBudgetError

FEASIBILITY_TOL = 1e-9


def _vec(g):
    g = np.asarray(g, dtype=float)
    if g.ndim != 1:
        raise ContractViolation("expected a 1-d vector")
    return g


def _proj_simplex(y, r):
    """Euclidean projection onto {x >= 0, sum x = r} by sorting."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - r
    j = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / j > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(y - theta, 0.0)


class ConstraintSet:
    kind = "abstract"

    def lmo(self, g):
        raise NotImplementedError

    def project(self, y):
        raise NotImplementedError

    def contains(self, x, tol=FEASIBILITY_TOL):
        raise NotImplementedError

    def diameter(self, d):
        raise NotImplementedError

    def max_norm(self, d):
        """max ||x||_2 over the set."""
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError


class L1Ball(ConstraintSet):
    kind = "l1_ball"

    def __init__(self, radius=1.0):
        if not radius > 0:
            raise ContractViolation("radius must be positive")
        self.radius = float(radius)

    def lmo(self, g):
        g = _vec(g)
        i = int(np.argmax(np.abs(g)))
        v = np.zeros_like(g)
        v[i] = self.radius if g[i] < 0 else -self.radius
        return v

    def project(self, y):
        y = _vec(y)
        if np.abs(y).sum() <= self.radius:
            return y.copy()
        return np.sign(y) * _proj_simplex(np.abs(y), self.radius)

    def contains(self, x, tol=FEASIBILITY_TOL):
        return bool(np.abs(x).sum() <= self.radius + tol)

    def diameter(self, d):
        return 2.0 * self.radius

    def max_norm(self, d):
        return self.radius

    def to_config(self):
        return {"kind": self.kind, "radius": self.radius}

    def __repr__(self):
        return f"L1Ball({self.radius})"


class L2Ball(ConstraintSet):
    kind = "l2_ball"

    def __init__(self, radius=1.0):
        if not radius > 0:
            raise ContractViolation("radius must be positive")
        self.radius = float(radius)

    def lmo(self, g):
        g = _vec(g)
        n = np.linalg.norm(g)
        if n == 0.0:
            v = np.zeros_like(g)
            v[0] = -self.radius
            return v
        return -self.radius * g / n

    def project(self, y):
        y = _vec(y)
        n = np.linalg.norm(y)
        return y.copy() if n <= self.radius else y * (self.radius / n)

    def contains(self, x, tol=FEASIBILITY_TOL):
        return bool(np.linalg.norm(x) <= self.radius + tol)

    def diameter(self, d):
        return 2.0 * self.radius

    def max_norm(self, d):
        return self.radius

    def to_config(self):
        return {"kind": self.kind, "radius": self.radius}

    def __repr__(self):
        return f"L2Ball({self.radius})"


class Box(ConstraintSet):
    kind = "box"

    def __init__(self, lo=-1.0, hi=1.0):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ContractViolation("box needs lo <= hi")
        self._cache = {}

    def _bounds(self, d):
        if d not in self._cache:
            self._cache[d] = (np.broadcast_to(self.lo, (d,)).copy(), np.broadcast_to(self.hi, (d,)).copy())
        return self._cache[d]

    def lmo(self, g):
        g = _vec(g)
        lo, hi = self._bounds(g.size)
        return np.where(g < 0, hi, lo).astype(float)

    def project(self, y):
        y = _vec(y)
        lo, hi = self._bounds(y.size)
        return np.clip(y, lo, hi)

    def contains(self, x, tol=FEASIBILITY_TOL):
        lo, hi = self._bounds(np.size(x))
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def diameter(self, d):
        lo, hi = self._bounds(d)
        return float(np.linalg.norm(hi - lo))

    def max_norm(self, d):
        lo, hi = self._bounds(d)
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    def to_config(self):
        return {"kind": self.kind, "bounds": [self.lo.tolist(), self.hi.tolist()]}

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"


class Simplex(ConstraintSet):
    """{x >= 0, sum x = r}."""

    kind = "simplex"

    def __init__(self, radius=1.0):
        if not radius > 0:
            raise ContractViolation("radius must be positive")
        self.radius = float(radius)

    def lmo(self, g):
        g = _vec(g)
        v = np.zeros_like(g)
        v[int(np.argmin(g))] = self.radius
        return v

    def project(self, y):
        return _proj_simplex(_vec(y), self.radius)

    def contains(self, x, tol=FEASIBILITY_TOL):
        x = np.asarray(x)
        return bool(np.all(x >= -tol) and abs(x.sum() - self.radius) <= tol * max(1.0, self.radius))

    def diameter(self, d):
        return math.sqrt(2.0) * self.radius if d > 1 else 0.0

    def max_norm(self, d):
        return self.radius

    def to_config(self):
        return {"kind": self.kind, "radius": self.radius}

    def __repr__(self):
        return f"Simplex({self.radius})"


SET_KINDS = {"l1_ball": L1Ball, "l2_ball": L2Ball, "box": Box, "simplex": Simplex}


def constraint_from_config(cfg) -> ConstraintSet:
    if not isinstance(cfg, dict):
        raise ConfigError("set", "must be a JSON object")
    kind = cfg.get("kind")
    if kind not in SET_KINDS:
        raise ConfigError("set.kind", f"must be one of {sorted(SET_KINDS)}, got {kind!r}")
    if kind == "box":
        bounds = cfg.get("bounds")
        if bounds is None or len(bounds) != 2:
            raise ConfigError("set.bounds", "box needs bounds [lo, hi]")
        return Box(*bounds)
    try:
        return SET_KINDS[kind](float(cfg.get("radius", 1.0)))
    except ContractViolation as exc:
        raise ConfigError("set.radius", str(exc)) from None


# ---------------------------------------------------------------------------
# Module-level operations


def lmo(cset: ConstraintSet, g):
    g = _vec(g)
    if not np.all(np.isfinite(g)):
        raise ContractViolation("LMO direction must be finite")
    return cset.lmo(g)


def project(cset: ConstraintSet, y):
    return cset.project(y)


def fw_gap_at(cset: ConstraintSet, x, g):
    """<g, x - lmo(g)> for a given gradient."""
    x = _vec(x)
    return float(g @ (x - cset.lmo(g)))


def fw_gap(problem, cset: ConstraintSet, x):
    """Frank-Wolfe gap of the noiseless objective (verification only)."""
    return fw_gap_at(cset, x, problem.gradient(problem.check_point(x)))


def prox_exact(cset: ConstraintSet, x, g, gamma):
    """argmin_u <g, u> + gamma/2 ||u - x||^2 over the set."""
    if not gamma > 0:
        raise ContractViolation("gamma must be positive")
    return cset.project(_vec(x) - _vec(g) / gamma)


def gradient_mapping(problem, cset: ConstraintSet, x, gamma):
    x = problem.check_point(x)
    return gamma * (x - prox_exact(cset, x, problem.gradient(x), gamma))


@dataclass(frozen=True)
class IcgParams:
    gamma: float
    mu: float
    max_iters: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ContractViolation("gamma must be positive")
        if not self.mu >= 0:
            raise ContractViolation("mu must be nonnegative")

    def cap(self, diameter):
        if self.max_iters is not None:
            return int(self.max_iters)
        if self.mu == 0:
            return 1_000_000
        return max(1, 10 * math.ceil(self.gamma * diameter**2 / self.mu))


@dataclass
class IcgResult:
    point: np.ndarray
    iterations: int  # LMO calls
    gap: float  # h at the terminating LMO, >= -mu


def icg(cset: ConstraintSet, x, g, params: IcgParams) -> IcgResult:
    """Frank-Wolfe on u -> <g, u> + gamma/2 ||u - x||^2 until the gap test passes.

    Stops at the first t with <g + gamma (ybar - x), y_t - ybar> >= -mu and
    returns that ybar, so min_u <g + gamma (ybar - x), u - ybar> >= -mu.
    """
    x = _vec(x)
    g = _vec(g)
    gamma, mu = params.gamma, params.mu
    cap = params.cap(cset.diameter(x.size))
    ybar = x.copy()
    t = 1
    while True:
        grad = g + gamma * (ybar - x)
        y = cset.lmo(grad)
        h = float(grad @ (y - ybar))
        if h >= -mu:
            return IcgResult(ybar, t, h)
        if t >= cap:
            raise IcgBudgetError(
                f"ICG did not certify within {cap} iterations (gap {h:.3e}, mu {mu:.3e})",
                best=ybar, gap=h, iterations=t,
            )
        ybar = ((t - 1) / (t + 1)) * ybar + (2.0 / (t + 1)) * y
        t += 1


def icg_certificate(cset: ConstraintSet, x, g, gamma, ybar):
    """min_u <g + gamma (ybar - x), u - ybar>, recomputed with a fresh LMO."""
    grad = _vec(g) + gamma * (_vec(ybar) - _vec(x))
    return float(grad @ (cset.lmo(grad) - ybar))
