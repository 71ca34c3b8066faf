import numpy as np
import pytest

from conftest import spec
from iegsopt.formulation import BIDIRECTIONAL, UNIDIRECTIONAL, assemble_centralized
from iegsopt.oracle import OracleConfig, OracleInfeasible, brute_force_qcqp1, solve_reference
from iegsopt.qcqp1 import Qcqp1Problem, solve


def _at(ref, label):
    return ref.x[ref.labels.index(label)]


def test_two_node_reference():
    ref = solve_reference(assemble_centralized(spec("two_node"), UNIDIRECTIONAL))
    assert ref.objective == pytest.approx(2.0, abs=1e-8)
    assert _at(ref, "flow[p1]@gas:n2") == pytest.approx(2.0, abs=1e-6)
    dpi = _at(ref, "psq[n1]@gas:n1") - _at(ref, "psq[n2]@gas:n2")
    assert dpi == pytest.approx(4.0, abs=1e-6)
    assert ref.max_violation <= 1e-8
    assert ref.directions is None
    assert ref.feasible_starts >= 1


def test_zero_load_reference():
    ref = solve_reference(assemble_centralized(spec("zero_load"), UNIDIRECTIONAL))
    assert ref.objective == pytest.approx(0.0, abs=1e-10)


def test_reversed_bidirectional_reference():
    ref = solve_reference(assemble_centralized(spec("two_node_reversed"), BIDIRECTIONAL))
    assert ref.directions == {"p1": -1}
    assert _at(ref, "direction[p1]@gas:n2") == -1.0
    assert _at(ref, "flow[p1]@gas:n2") == pytest.approx(-2.0, abs=1e-6)
    assert ref.objective == pytest.approx(2.0, abs=1e-8)


def test_reversed_unidirectional_is_infeasible():
    with pytest.raises(OracleInfeasible):
        solve_reference(assemble_centralized(spec("two_node_reversed"), UNIDIRECTIONAL), OracleConfig(multistart=4))


@pytest.mark.parametrize("mode", [UNIDIRECTIONAL, BIDIRECTIONAL])
def test_six_seven_modes_agree(mode):
    ref = solve_reference(assemble_centralized(spec("iegs_6_7"), mode))
    assert ref.max_violation <= 1e-8
    assert ref.objective == pytest.approx(83.83215151287435, rel=1e-6)


def test_seed_changes_starts_not_optimum():
    c = assemble_centralized(spec("two_node"), UNIDIRECTIONAL)
    a = solve_reference(c, OracleConfig(seed=0, multistart=8))
    b = solve_reference(c, OracleConfig(seed=7, multistart=8))
    assert a.objective == pytest.approx(b.objective, abs=1e-8)
    again = solve_reference(c, OracleConfig(seed=0, multistart=8))
    np.testing.assert_array_equal(a.x, again.x)


def test_to_dict_keys():
    ref = solve_reference(assemble_centralized(spec("two_node"), UNIDIRECTIONAL), OracleConfig(multistart=4))
    d = ref.to_dict()
    assert set(d) == {"objective", "max_violation", "directions", "x", "starts", "feasible_starts"}
    assert d["x"]["flow[p1]@gas:n2"] == pytest.approx(2.0, abs=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(multistart=0)
    with pytest.raises(ValueError):
        OracleConfig(feas_tol=0.0)


def _pipe(t):
    t = np.asarray(t, dtype=float)
    return Qcqp1Problem(np.eye(3), -t, 0.5 * t @ t, np.diag([-2.0, 0.0, 0.0]), np.array([0.0, 1.0, -1.0]))


def test_brute_force_matches_dual_solution():
    p = _pipe([1.0, 4.0, 0.0])
    y, _ = solve(p)
    yb, vb = brute_force_qcqp1(p, [-6.0] * 3, [6.0] * 3, 0.25, 1e-4)
    assert vb == pytest.approx(p.objective(y), abs=1e-3)
    np.testing.assert_allclose(yb, y, atol=5e-2)
    assert p.constraint(yb) <= 0.0


def test_brute_force_unconstrained_minimum_on_grid():
    p = _pipe([2.0, 1.0, 0.0])
    yb, vb = brute_force_qcqp1(p, [-4.0] * 3, [4.0] * 3, 0.5)
    np.testing.assert_allclose(yb, [2.0, 1.0, 0.0], atol=1e-12)
    assert vb == pytest.approx(0.0, abs=1e-12)


def test_brute_force_infeasible_box():
    # the row pi_m - pi_n <= g**2 fails everywhere once pi_m >= 3 and |g| <= 1
    with pytest.raises(OracleInfeasible):
        brute_force_qcqp1(_pipe([0.0, 0.0, 0.0]), [-1.0, 3.0, 0.0], [1.0, 4.0, 0.0], 0.25)


def test_brute_force_dimension_limit():
    n = 5
    p = Qcqp1Problem(np.eye(n), np.zeros(n), 0.0, -np.eye(n), np.zeros(n))
    with pytest.raises(ValueError):
        brute_force_qcqp1(p, [-1.0] * n, [1.0] * n, 0.5)


def test_brute_force_grid_size_limit():
    with pytest.raises(ValueError):
        brute_force_qcqp1(_pipe([0.0, 0.0, 0.0]), [-100.0] * 3, [100.0] * 3, 0.01)
