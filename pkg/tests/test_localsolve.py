import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from iegsopt.formulation import QuadConstraint
from iegsopt.localsolve import (
    BoxQp,
    ConvexQcqp,
    EqQp,
    LocalSolveError,
    eq_qp_operator,
    phase_one,
    solve_box,
    solve_convex_qcqp,
    solve_eq_qp,
)


def box_for_cost(quad, target, lam, d, lo, hi):
    # quad*p**2 + lam*(p - t) + d/2 (p - t)**2  ->  0.5 h p**2 + f p
    return BoxQp(
        h=np.array([2.0 * quad + d]),
        f=np.array([lam - d * target]),
        lo=np.array([lo]),
        hi=np.array([hi]),
    )


def test_box_interior():
    p = box_for_cost(1.0, 3.0, 0.0, 1.0, 0.0, 10.0)
    x = solve_box(p)
    assert x[0] == pytest.approx(1.0)
    grid = np.linspace(0.0, 10.0, 1_000_001)
    best = grid[np.argmin(0.5 * p.h[0] * grid**2 + p.f[0] * grid)]
    assert x[0] == pytest.approx(best, abs=1e-6)


def test_box_clamped():
    assert solve_box(box_for_cost(1.0, 3.0, 0.0, 1.0, 2.0, 10.0))[0] == 2.0


def test_box_zero():
    assert solve_box(box_for_cost(1.0, 0.0, 0.0, 1.0, -5.0, 5.0))[0] == 0.0


def test_box_bad_bounds():
    with pytest.raises(ValueError):
        solve_box(BoxQp(np.ones(1), np.zeros(1), np.ones(1), np.zeros(1)))


def test_box_zero_curvature_goes_to_bound():
    x = solve_box(BoxQp(np.zeros(2), np.array([1.0, -1.0]), np.array([-2.0, -2.0]), np.array([3.0, 3.0])))
    np.testing.assert_array_equal(x, [-2.0, 3.0])


def test_eq_qp_line_agent():
    # y = (p, theta_m, theta_n); x = 0.5: p = 2(theta_m - theta_n) and p = 1
    G = np.array([[1.0, -2.0, 2.0], [1.0, 0.0, 0.0]])
    g = np.array([0.0, 1.0])
    p = EqQp(h=np.ones(3), f=np.zeros(3), G=G, g=g)
    y = solve_eq_qp(p)
    # eliminating p and the angle gap by hand gives theta_m = -theta_n = 1/4
    np.testing.assert_allclose(y, [1.0, 0.25, -0.25], atol=1e-14)
    w = np.linalg.lstsq(G.T, -(p.h * y + p.f), rcond=None)[0]
    assert np.max(np.abs(p.h * y + p.f + G.T @ w)) <= 1e-10
    assert np.max(np.abs(G @ y - g)) <= 1e-10


def test_eq_qp_zero_load():
    G = np.array([[1.0, -2.0, 2.0], [1.0, 0.0, 0.0]])
    y = solve_eq_qp(EqQp(np.ones(3), np.zeros(3), G, np.zeros(2)))
    np.testing.assert_array_equal(y, 0.0)


def test_eq_qp_duplicate_row():
    G = np.array([[1.0, -2.0, 2.0], [1.0, -2.0, 2.0]])
    with pytest.raises(LocalSolveError, match="rank"):
        solve_eq_qp(EqQp(np.ones(3), np.zeros(3), G, np.zeros(2)))


def test_eq_qp_operator_matches_solver():
    rng = np.random.default_rng(0)
    h = rng.uniform(0.5, 2.0, 5)
    G = rng.normal(size=(2, 5))
    g = rng.normal(size=2)
    P, r = eq_qp_operator(h, G, g)
    for _ in range(3):
        t = rng.normal(size=5)
        np.testing.assert_allclose(P @ t + r, solve_eq_qp(EqQp(h, -h * t, G, g)), atol=1e-12)


def weymouth_row(n, ig, im, i_n, w2=1.0):
    """Convex row g**2 - w2 (pi_m - pi_n) <= 0."""
    Q = np.zeros((n, n))
    Q[ig, ig] = 2.0
    q = np.zeros(n)
    q[im], q[i_n] = -w2, w2
    return QuadConstraint(Q, q)


def gas_node_problem(targets=np.zeros(4), d=1.0):
    # y = (g_w, g, pi_m, pi_n): g_w - g = 2, g**2 <= pi_m - pi_n, pi_m >= pi_n
    return ConvexQcqp(
        h=np.full(4, d),
        f=-d * np.asarray(targets, dtype=float),
        A=np.array([[1.0, -1.0, 0.0, 0.0]]),
        b=np.array([2.0]),
        G=np.array([[0.0, 0.0, -1.0, 1.0]]),
        g=np.zeros(1),
        quad=[weymouth_row(4, 1, 2, 3)],
    )


def test_gas_node_hand_solution():
    p = gas_node_problem()
    y, info = solve_convex_qcqp(p, full_output=True)
    # active Weymouth row with pi_m = -pi_n = g**2/2 leaves g**3 + 2g + 2 = 0
    g = brentq(lambda s: s**3 + 2 * s + 2, -2.0, 0.0)
    np.testing.assert_allclose(y, [2 + g, g, g * g / 2, -g * g / 2], atol=1e-8)
    assert info.stationarity <= 1e-7
    assert info.feasibility <= 1e-8
    assert info.complementarity <= 1e-7


def test_gas_node_dense_grid():
    p = gas_node_problem()
    y = solve_convex_qcqp(p)
    # grid over (g, pi_m, pi_n) with g_w eliminated by the balance row
    gs = np.linspace(-1.5, 0.5, 201)
    ps = np.linspace(-1.0, 1.0, 201)
    G_, M_, N_ = np.meshgrid(gs, ps, ps, indexing="ij")
    feas = (G_**2 <= M_ - N_) & (M_ >= N_)
    obj = 0.5 * ((2 + G_) ** 2 + G_**2 + M_**2 + N_**2)
    best = obj[feas].min()
    assert p.objective(y) <= best + 1e-12
    assert p.objective(y) == pytest.approx(best, abs=1e-3)


def test_no_rows_reduces_to_eq_qp():
    rng = np.random.default_rng(2)
    h, f = rng.uniform(0.5, 2.0, 4), rng.normal(size=4)
    A, b = rng.normal(size=(2, 4)), rng.normal(size=2)
    p = ConvexQcqp(h, f, A, b, np.zeros((0, 4)), np.zeros(0))
    np.testing.assert_allclose(solve_convex_qcqp(p), solve_eq_qp(EqQp(h, f, A, b)), atol=1e-8)


def test_eq_qp_without_rows_matches_box():
    rng = np.random.default_rng(3)
    h, f = rng.uniform(0.5, 2.0, 4), rng.normal(size=4)
    box = solve_box(BoxQp(h, f, np.full(4, -np.inf), np.full(4, np.inf)))
    np.testing.assert_allclose(solve_eq_qp(EqQp(h, f, np.zeros((0, 4)), np.zeros(0))), box, atol=1e-8)


def test_inactive_compressor_row_has_zero_multiplier():
    # y = (pi_m, pi_n), pi_n <= 1.5 pi_m, targets (2, 1)
    p = ConvexQcqp(
        h=np.ones(2),
        f=-np.array([2.0, 1.0]),
        A=np.zeros((0, 2)),
        b=np.zeros(0),
        G=np.array([[-1.5, 1.0]]),
        g=np.zeros(1),
    )
    y, info = solve_convex_qcqp(p, full_output=True)
    np.testing.assert_allclose(y, [2.0, 1.0], atol=1e-8)
    assert abs(info.z[0]) <= 1e-8
    # tightening the row makes it bind with a positive multiplier
    p.g[0] = -2.5
    y, info = solve_convex_qcqp(p, full_output=True)
    assert p.G[0] @ y == pytest.approx(-2.5, abs=1e-8)
    assert info.z[0] > 1e-3


def test_infeasible_subproblem_names_row():
    p = ConvexQcqp(
        h=np.ones(2),
        f=np.zeros(2),
        A=np.zeros((0, 2)),
        b=np.zeros(0),
        G=np.array([[1.0, 0.0], [-1.0, 0.0]]),
        g=np.array([-1.0, -1.0]),
    )
    with pytest.raises(LocalSolveError, match="row"):
        phase_one(p)


def test_nonconvex_row_rejected():
    with pytest.raises(ValueError):
        ConvexQcqp(np.ones(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0),
                   quad=[QuadConstraint(np.diag([-2.0, 0.0]), np.array([0.0, 1.0]))])


@settings(max_examples=40, deadline=None)
@given(
    t=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    d=st.floats(0.2, 5.0),
    seed=st.integers(0, 2**31),
)
def test_objective_monotone_and_kkt(t, d, seed):
    p = gas_node_problem(t, d)
    y, info = solve_convex_qcqp(p, full_output=True)
    assert info.stationarity <= 1e-7
    assert info.feasibility <= 1e-8
    assert info.complementarity <= 1e-7
    assert np.max(p.inequalities(y)) <= 1e-8
    assert abs(p.A @ y - p.b)[0] <= 1e-8
    # random feasible candidates never beat the solution
    rng = np.random.default_rng(seed)
    for _ in range(20):
        g = rng.uniform(-3, 3)
        pn = rng.uniform(-3, 3)
        pm = pn + g * g + rng.uniform(0, 2)
        z = np.array([2 + g, g, pm, pn])
        assert p.objective(y) <= p.objective(z) + 1e-6
