import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zo_opt.constraints import (
    Box,
    IcgParams,
    L1Ball,
    L2Ball,
    Simplex,
    constraint_from_config,
    fw_gap,
    fw_gap_at,
    gradient_mapping,
    icg,
    icg_certificate,
    lmo,
    project,
    prox_exact,
)
from zo_opt.errors import ConfigError, ContractViolation, IcgBudgetError
from zo_opt.oracle import Quadratic

SETS = [L1Ball(1.0), L1Ball(2.5), L2Ball(1.0), Box(-1.0, 1.0), Box(0.0, 2.0), Simplex(1.0)]


def rng(seed=0):
    return np.random.default_rng(seed)


def feasible_points(cset, d, n, r):
    """Random points of the set (convex combinations of LMO outputs plus projections)."""
    pts = [cset.project(r.standard_normal(d) * 3) for _ in range(n // 2)]
    for _ in range(n - len(pts)):
        w = r.dirichlet(np.ones(4))
        pts.append(sum(wi * cset.lmo(r.standard_normal(d)) for wi in w))
    return np.array(pts)


def segment_min(fun, a, b, iters=100):
    """Minimise a convex function of t in [0,1] along a + t (b - a): coarse grid then ternary refinement."""
    ts = np.linspace(0.0, 1.0, 201)
    vals = [fun(a + t * (b - a)) for t in ts]
    i = int(np.argmin(vals))
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, 200)]
    for _ in range(iters):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if fun(a + m1 * (b - a)) <= fun(a + m2 * (b - a)):
            hi = m2
        else:
            lo = m1
    return a + (lo + hi) / 2 * (b - a)


def brute_project_2d(cset, y):
    dist = lambda p: np.sum((p - y) ** 2)
    if isinstance(cset, Simplex):
        r = cset.radius
        return segment_min(dist, np.array([r, 0.0]), np.array([0.0, r]))
    if np.abs(y).sum() <= cset.radius:
        return y
    r = cset.radius
    corners = [np.array(c, float) for c in ([r, 0], [0, r], [-r, 0], [0, -r])]
    cands = [segment_min(dist, corners[i], corners[(i + 1) % 4]) for i in range(4)]
    return min(cands, key=dist)


# -- LMO ------------------------------------------------------------------


def test_lmo_examples():
    assert np.array_equal(lmo(L1Ball(1.0), [3.0, -4.0]), [0.0, 1.0])
    assert np.array_equal(lmo(Simplex(1.0), [0.2, -0.5, 0.1]), [0.0, 1.0, 0.0])
    assert np.array_equal(lmo(Box(-1.0, 1.0), [1.0, -2.0]), [-1.0, 1.0])
    assert np.allclose(lmo(L2Ball(2.0), [3.0, 4.0]), [-1.2, -1.6])


def test_lmo_ties_use_lowest_index():
    assert np.array_equal(lmo(L1Ball(1.0), [2.0, -2.0, 2.0]), [-1.0, 0.0, 0.0])
    assert np.array_equal(lmo(Simplex(1.0), [0.0, 0.0]), [1.0, 0.0])
    assert np.array_equal(lmo(L1Ball(1.0), np.zeros(3)), [-1.0, 0.0, 0.0])
    assert np.array_equal(lmo(L2Ball(1.0), np.zeros(3)), [-1.0, 0.0, 0.0])


def test_lmo_rejects_non_finite():
    with pytest.raises(ContractViolation):
        lmo(L1Ball(), [np.nan, 1.0])


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_lmo_optimality(cset):
    r = rng(1)
    d = 6
    V = feasible_points(cset, d, 100, r)
    for _ in range(1000):
        g = r.standard_normal(d)
        v = lmo(cset, g)
        assert cset.contains(v)
        assert g @ v <= np.min(V @ g) + 1e-12


@pytest.mark.parametrize("cset, d, D", [
    (L1Ball(1.5), 5, 3.0), (L2Ball(2.0), 5, 4.0), (Box(-1.0, 1.0), 4, 4.0), (Simplex(1.0), 3, np.sqrt(2)),
])
def test_diameter_formulas(cset, d, D):
    assert cset.diameter(d) == pytest.approx(D)
    P = feasible_points(cset, d, 200, rng(2))
    gaps = np.linalg.norm(P[:, None] - P[None], axis=-1)
    assert gaps.max() <= D + 1e-12


# -- projection -------------------------------------------------------------


def test_projection_examples():
    assert np.array_equal(project(Box(0.0, 1.0), [2.0, -1.0]), [1.0, 0.0])
    assert np.allclose(project(L2Ball(1.0), [3.0, 4.0]), [0.6, 0.8])
    assert np.allclose(project(Simplex(1.0), [0.8, 0.8]), [0.5, 0.5])
    assert np.allclose(project(L1Ball(1.0), [2.0, 0.5]), [1.0, 0.0])


@pytest.mark.parametrize("cset", [L1Ball(1.0), L1Ball(0.7), Simplex(1.0), Simplex(2.0)], ids=repr)
def test_projection_matches_grid_refinement(cset):
    r = rng(3)
    for _ in range(200):
        y = r.standard_normal(2) * 2
        assert np.allclose(project(cset, y), brute_project_2d(cset, y), atol=1e-9)


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_projection_is_nonexpansive_and_idempotent(cset):
    r = rng(4)
    for _ in range(200):
        y1, y2 = r.standard_normal((2, 7)) * 3
        p1, p2 = project(cset, y1), project(cset, y2)
        assert cset.contains(p1)
        assert np.linalg.norm(p1 - p2) <= np.linalg.norm(y1 - y2) + 1e-12
        assert np.allclose(project(cset, p1), p1, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=15), st.floats(0.1, 10))
def test_projection_satisfies_variational_inequality(ys, radius):
    y = np.array(ys)
    for cset in (L1Ball(radius), Simplex(radius)):
        p = project(cset, y)
        assert cset.contains(p, tol=1e-8)
        # <y - p, v - p> <= 0 at every vertex v certifies the projection
        for v in np.vstack([np.eye(y.size), -np.eye(y.size)]) * radius:
            if cset.contains(v):
                assert (y - p) @ (v - p) <= 1e-8 * max(1.0, np.abs(y).max())


# -- FW gap, prox and gradient mapping --------------------------------------


def test_fw_gap_examples():
    q = Quadratic(np.eye(2))
    assert fw_gap(q, L2Ball(1.0), [1.0, 0.0]) == pytest.approx(2.0)
    # constant gradient and x at the minimising vertex
    lin = Quadratic(np.zeros((2, 2)), [1.0, 2.0])
    assert fw_gap(lin, Simplex(1.0), [1.0, 0.0]) == 0.0
    # analytic constrained optimum of a quadratic over the ball
    shifted = Quadratic(np.eye(3), [-3.0, 0.0, 0.0])
    assert fw_gap(shifted, L2Ball(1.0), [1.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_fw_gap_nonnegative_and_bounds_suboptimality(cset):
    r = rng(5)
    d = 5
    B = r.standard_normal((d, d))
    q = Quadratic(B @ B.T / d + 0.1 * np.eye(d), r.standard_normal(d) * 2)
    # f* over the set by projected gradient descent
    x = cset.project(np.zeros(d))
    step = 1.0 / q.lipschitz_grad
    for _ in range(20_000):
        x = cset.project(x - step * q.gradient(x))
    fstar = q.value(x)
    for z in feasible_points(cset, d, 50, r):
        gap = fw_gap(q, cset, z)
        assert gap >= 0.0
        assert gap >= q.value(z) - fstar - 1e-9


def test_prox_examples():
    x = np.array([0.3, -0.2])
    assert np.array_equal(prox_exact(L1Ball(), x, np.zeros(2), 5.0), project(L1Ball(), x))
    assert np.allclose(prox_exact(L2Ball(1.0), x, [0.1, 0.1], 10.0), x - 0.01)
    assert np.array_equal(prox_exact(Box(-1.0, 1.0), [0.0, 0.0], [4.0, 0.0], 2.0), [-1.0, 0.0])
    with pytest.raises(ContractViolation):
        prox_exact(Box(), x, x, 0.0)


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_prox_is_lipschitz_in_direction(cset):
    r = rng(6)
    for _ in range(200):
        x = cset.project(r.standard_normal(8))
        g, h = r.standard_normal((2, 8)) * 3
        gamma = r.uniform(0.1, 10)
        diff = np.linalg.norm(prox_exact(cset, x, g, gamma) - prox_exact(cset, x, h, gamma))
        assert diff <= np.linalg.norm(g - h) / gamma + 1e-12


def test_gradient_mapping_examples():
    q = Quadratic(np.diag([1.0, 2.0]), [0.5, -0.5])
    x = np.array([0.1, 0.2])
    assert np.allclose(gradient_mapping(q, Box(-100.0, 100.0), x, 10.0), q.gradient(x))
    shifted = Quadratic(np.eye(2), [-3.0, 0.0])
    assert np.allclose(gradient_mapping(shifted, L2Ball(1.0), [1.0, 0.0], 2.0), 0.0)


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_gradient_mapping_sandwich(cset):
    r = rng(7)
    d = 10
    for _ in range(100):
        B = r.standard_normal((d, d))
        q = Quadratic(B @ B.T / d, r.standard_normal(d) * r.uniform(0.1, 5))
        x = feasible_points(cset, d, 2, r)[r.integers(2)]
        gamma = r.uniform(0.1, 20)
        gp = np.linalg.norm(gradient_mapping(q, cset, x, gamma))
        gap = fw_gap(q, cset, x)
        bound = np.linalg.norm(q.gradient(x))
        assert gp**2 <= gamma * gap + 1e-8
        assert gap <= (bound / gamma + cset.diameter(d)) * gp + 1e-8


# -- ICG --------------------------------------------------------------------


def test_icg_params_validation():
    with pytest.raises(ContractViolation):
        IcgParams(0.0, 1.0)
    with pytest.raises(ContractViolation):
        IcgParams(1.0, -1.0)
    assert IcgParams(2.0, 0.5).cap(3.0) == 10 * 36
    assert IcgParams(2.0, 0.0).cap(3.0) == 1_000_000
    assert IcgParams(2.0, 0.5, max_iters=7).cap(3.0) == 7


def test_icg_returns_optimal_start_after_one_check():
    # x solves the QP when g = 0 and x is feasible
    x = np.array([0.2, -0.3, 0.1])
    res = icg(L1Ball(), x, np.zeros(3), IcgParams(1.0, 1e-3))
    assert res.iterations == 1
    assert np.array_equal(res.point, x)


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_icg_certificate_and_distance(cset):
    r = rng(8)
    d = 20
    for _ in range(100 if isinstance(cset, L1Ball) else 20):
        x = feasible_points(cset, d, 2, r)[0]
        g = r.standard_normal(d) * r.uniform(0.1, 10)
        gamma, mu = r.uniform(0.5, 10), 10 ** r.uniform(-4, -1)
        res = icg(cset, x, g, IcgParams(gamma, mu))
        assert cset.contains(res.point)
        assert res.gap >= -mu
        assert icg_certificate(cset, x, g, gamma, res.point) >= -mu - 1e-12
        exact = prox_exact(cset, x, g, gamma)
        assert np.sum((exact - res.point) ** 2) <= mu / gamma + 1e-12


def test_icg_step_rule_matches_hand_iteration():
    cset, x, g, gamma, mu = L1Ball(1.0), np.zeros(2), np.array([3.0, 1.0]), 1.0, 1e-2
    ybar, t = x.copy(), 1
    while True:
        grad = g + gamma * (ybar - x)
        y = cset.lmo(grad)
        if grad @ (y - ybar) >= -mu:
            break
        ybar = (t - 1) / (t + 1) * ybar + 2 / (t + 1) * y
        t += 1
    res = icg(cset, x, g, IcgParams(gamma, mu))
    assert res.iterations == t
    assert np.array_equal(res.point, ybar)


def test_icg_budget_error_carries_state():
    with pytest.raises(IcgBudgetError) as exc:
        icg(L2Ball(1.0), np.zeros(5), np.full(5, 0.1), IcgParams(1.0, 0.0, max_iters=3))
    assert exc.value.iterations == 3
    assert exc.value.gap < 0
    assert exc.value.best.shape == (5,)


# -- configuration ----------------------------------------------------------


@pytest.mark.parametrize("cset", SETS, ids=repr)
def test_config_roundtrip(cset):
    again = constraint_from_config(cset.to_config())
    g = rng(9).standard_normal(4)
    assert np.array_equal(again.lmo(g), cset.lmo(g))


@pytest.mark.parametrize("cfg, key", [
    ({"kind": "ellipse"}, "set.kind"),
    ({"kind": "box"}, "set.bounds"),
    ({"kind": "l1_ball", "radius": -1}, "set.radius"),
    ([], "set"),
])
def test_config_errors(cfg, key):
    with pytest.raises(ConfigError) as exc:
        constraint_from_config(cfg)
    assert exc.value.key == key


def test_fw_gap_at_matches_definition():
    g = np.array([1.0, -2.0])
    x = np.array([0.5, 0.0])
    assert fw_gap_at(L1Ball(1.0), x, g) == pytest.approx(g @ (x - np.array([0.0, 1.0])))
