import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES, raw, spec, spec_from
from iegsopt.formulation import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    InvalidNetwork,
    assemble_centralized,
    decompose,
    dump_debug,
    expand_copies,
    lift_to_feasibility,
)

MODES = [UNIDIRECTIONAL, BIDIRECTIONAL]


def _idx(central, label):
    return central.labels.index(label)


def test_two_node_centralized_rows():
    c = assemble_centralized(spec("two_node"), UNIDIRECTIONAL)
    w = _idx(c, "output[w1]@gas:n1")
    g = _idx(c, "flow[p1]@gas:n2")
    p1, p2 = _idx(c, "psq[n1]@gas:n1"), _idx(c, "psq[n2]@gas:n2")
    assert c.n == 4
    # balances: g_w - g = 0 at n1, g = 2 at n2
    expected_C = np.zeros((2, 4))
    expected_C[0, w], expected_C[0, g] = 1.0, -1.0
    expected_C[1, g] = 1.0
    np.testing.assert_array_equal(c.C, expected_C)
    np.testing.assert_array_equal(c.c, [0.0, 2.0])
    assert c.eq_labels == ["gas_balance[n1]", "gas_balance[n2]"]
    # one Weymouth row g**2 = 1 * (pi1 - pi2)
    assert len(c.quad_eqs) == 1
    x = np.zeros(4)
    x[[g, p1, p2]] = 2.0, 9.0, 5.0
    assert c.quad_eqs[0].residual(x) == pytest.approx(0.0)
    x[p2] = 6.0
    assert c.quad_eqs[0].residual(x) == pytest.approx(1.0)
    for q in c.quad_eqs:
        np.testing.assert_array_equal(q.D, q.D.T)
    # boxes
    assert (c.lb[w], c.ub[w]) == (0.0, 10.0)
    assert (c.lb[g], c.ub[g]) == (0.0, 5.0)
    assert (c.lb[p1], c.ub[p1]) == (0.0, 25.0)
    assert c.E.shape[0] == 0
    x = np.zeros(4)
    x[w] = 2.0
    assert c.objective(x) == pytest.approx(2.0)


def test_two_node_bidirectional_rows():
    c = assemble_centralized(spec("two_node"), BIDIRECTIONAL)
    g = _idx(c, "flow[p1]@gas:n2")
    u = _idx(c, "direction[p1]@gas:n2")
    p1, p2 = _idx(c, "psq[n1]@gas:n1"), _idx(c, "psq[n2]@gas:n2")
    assert (c.lb[g], c.ub[g]) == (-5.0, 5.0)
    assert (c.lb[u], c.ub[u]) == (-1.0, 1.0)
    assert c.quad_labels == ["weymouth[p1]", "direction[p1]"]
    x = np.zeros(c.n)
    x[[g, u, p1, p2]] = -2.0, -1.0, 5.0, 9.0
    np.testing.assert_allclose(c.quad_residuals(x), 0.0, atol=1e-14)
    # big-M rows: Gmax (u - 1) <= g <= Gmax (u + 1)
    assert c.ineq_labels == ["direction_lower[p1]", "direction_upper[p1]"]
    assert np.all(c.E @ x <= c.e + 1e-12)
    x[u] = 1.0
    assert np.max(c.E @ x - c.e) > 0


GAS_FIRED_DOC = {
    "power_nodes": [{"id": "b1", "angle_min": -1, "angle_max": 1, "loads": [1.0], "is_reference": True}],
    "gas_nodes": [{"id": "n1", "psq_min": 1, "psq_max": 4, "loads": []}],
    "units": [
        {"id": "g1", "at_power_node": "b1", "kind": "gas-fired", "p_min": 0, "p_max": 2, "gas_node": "n1", "conversion": 5.0},
        {"id": "g2", "at_power_node": "b1", "kind": "coal-fired", "p_min": 0, "p_max": 2, "cost_quad": 1, "cost_lin": 3},
    ],
    "wells": [{"id": "w1", "at_gas_node": "n1", "g_min": 0, "g_max": 20, "cost": 2}],
    "lines": [],
    "pipelines": [],
    "compressors": [],
}


def test_gas_fired_unit_coupling():
    c = assemble_centralized(spec_from(GAS_FIRED_DOC), UNIDIRECTIONAL)
    pg = _idx(c, "output[g1]@power:b1")
    pc = _idx(c, "output[g2]@power:b1")
    w = _idx(c, "output[w1]@gas:n1")
    pb = c.eq_labels.index("power_balance[b1]")
    gb = c.eq_labels.index("gas_balance[n1]")
    # power balance sees both units with the same sign
    assert c.C[pb, pg] == c.C[pb, pc] != 0.0
    # gas balance: well supplies, gas-fired unit draws 5 per MW
    assert c.C[gb, pg] == pytest.approx(-5.0 * c.C[gb, w])
    # no direct cost for the gas-fired unit
    assert c.obj_lin[pg] == 0.0 and c.obj_quad[pg] == 0.0
    assert c.obj_lin[pc] == 3.0 and c.obj_quad[pc] == 1.0
    assert c.obj_lin[w] == 2.0


def test_invalid_network_rejected():
    doc = raw("iegs_6_7")
    doc["compressors"][0]["ratio"] = 0.5
    with pytest.raises(InvalidNetwork, match="ratio"):
        assemble_centralized(spec_from(doc))
    with pytest.raises(InvalidNetwork):
        decompose(spec_from(doc))


def test_two_node_decomposition_counts():
    dec = decompose(spec("two_node"), UNIDIRECTIONAL)
    kinds = [a.kind for a in dec.agents]
    assert kinds.count("gas") == 2 and kinds.count("pipe") == 1
    pipe = dec.agent("pipe:p1")
    assert pipe.y_names == ["flow[p1]", "psq[n1]", "psq[n2]"]
    assert len(pipe.quad) == 1 and not pipe.quad[0].is_convex
    for a in dec.agents:
        if a.kind == "gas":
            assert all(q.is_convex for q in a.quad)


def test_duplicate_pipe_agents_flag():
    dec = decompose(spec("two_node"), UNIDIRECTIONAL, duplicate_pipe_agents=True)
    assert sum(a.kind == "pipe" for a in dec.agents) == 2


def test_bidirectional_pipe_agents():
    dec = decompose(spec("two_node"), BIDIRECTIONAL)
    pipes = [a for a in dec.agents if a.kind == "pipe"]
    assert len(pipes) == 4
    for a in pipes:
        assert len(a.quad) == 1 and not len(a.eq_b) and not len(a.ineq_h)
    # the owning gas agent keeps the big-M rows
    assert any(len(a.ineq_h) for a in dec.agents if a.kind == "gas")


def test_bidirectional_weymouth_coupling_pattern():
    dec = decompose(spec("two_node"), BIDIRECTIONAL)
    a = dec.agent("pipe:p1:weymouth_le")
    assert a.y_names == ["flow[p1]", "psq[n1]", "psq[n2]", "direction[p1]"]
    Q = a.quad[0].Q
    np.testing.assert_array_equal(Q, Q.T)
    assert Q[0, 0] > 0
    # -W**2 on (pi_m, u), +W**2 on (pi_n, u), up to the common 1/2 factor
    assert Q[1, 3] == pytest.approx(-Q[2, 3]) and Q[1, 3] < 0
    assert Q[0, 0] == pytest.approx(-2.0 * Q[1, 3])


def test_isolated_power_node():
    dec = decompose(spec("isolated_power"), UNIDIRECTIONAL)
    assert [a.name for a in dec.agents] == ["power:b1"]
    assert dec.consensus.labels == ["unit_output", "angle"]


@pytest.mark.parametrize("name", FIXTURES)
@pytest.mark.parametrize("mode", MODES)
def test_consensus_structure(name, mode):
    dec = decompose(spec(name), mode)
    A = dec.consensus.A.toarray()
    B = dec.consensus.B.toarray()
    assert A.shape[0] == B.shape[0] == dec.ny
    assert np.all((A == 0) | (A == 1)) and np.all(A.sum(axis=1) == 1)
    np.testing.assert_array_equal(B, np.eye(dec.ny))
    # every original has at least one copy, every copy exactly one row
    assert np.all(A.sum(axis=0) >= 1)
    assert np.all(B.sum(axis=0) == 1)
    assert sorted(np.concatenate([a.y_idx for a in dec.agents]).tolist()) == list(range(dec.ny))
    json.dumps(dump_debug(dec))


def test_lift_zero_load_all_zero():
    dec = decompose(spec("zero_load"), UNIDIRECTIONAL)
    rep = lift_to_feasibility(dec, np.zeros(dec.nx), np.zeros(dec.ny))
    assert rep.max == 0.0


def _two_node_optimum(dec):
    x = np.zeros(dec.nx)
    lab = dec.central.labels
    x[lab.index("output[w1]@gas:n1")] = 2.0
    x[lab.index("flow[p1]@gas:n2")] = 2.0
    x[lab.index("psq[n1]@gas:n1")] = 25.0
    x[lab.index("psq[n2]@gas:n2")] = 21.0
    return x


def test_lift_two_node_optimum():
    dec = decompose(spec("two_node"), UNIDIRECTIONAL)
    x = _two_node_optimum(dec)
    rep = lift_to_feasibility(dec, x, expand_copies(dec, x))
    assert rep.max <= 1e-12
    assert dec.objective(x) == pytest.approx(2.0)


def test_lift_reports_perturbed_copy():
    dec = decompose(spec("two_node"), UNIDIRECTIONAL)
    x = _two_node_optimum(dec)
    y = expand_copies(dec, x)
    y[3] += 0.1
    rep = lift_to_feasibility(dec, x, y)
    assert rep.consensus[3] == pytest.approx(0.1)
    assert np.count_nonzero(rep.consensus > 1e-12) == 1


def test_lift_dimension_mismatch():
    dec = decompose(spec("two_node"), UNIDIRECTIONAL)
    with pytest.raises(ValueError):
        lift_to_feasibility(dec, np.zeros(dec.nx + 1), np.zeros(dec.ny))


@pytest.mark.parametrize("name", FIXTURES)
@pytest.mark.parametrize("mode", MODES)
def test_objective_partition(name, mode):
    dec = decompose(spec(name), mode)
    rng = np.random.default_rng(3)
    lb = np.where(np.isfinite(dec.x_lb), dec.x_lb, -5.0)
    ub = np.where(np.isfinite(dec.x_ub), dec.x_ub, 5.0)
    for _ in range(5):
        x = rng.uniform(lb, ub)
        total = sum(a.objective(x) for a in dec.agents)
        assert total == pytest.approx(dec.central.objective(x), abs=1e-10, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    g=st.floats(0.0, 5.0),
    pa=st.floats(0.0, 25.0),
    pb=st.floats(0.0, 25.0),
)
def test_bidirectional_reduces_to_unidirectional(g, pa, pb):
    s = spec("two_node")
    cu = assemble_centralized(s, UNIDIRECTIONAL)
    cb = assemble_centralized(s, BIDIRECTIONAL)
    xu = np.zeros(cu.n)
    xb = np.zeros(cb.n)
    for lab, v in [("flow[p1]@gas:n2", g), ("psq[n1]@gas:n1", pa), ("psq[n2]@gas:n2", pb), ("output[w1]@gas:n1", 2.0)]:
        xu[cu.labels.index(lab)] = v
        xb[cb.labels.index(lab)] = v
    xb[cb.labels.index("direction[p1]@gas:n2")] = 1.0
    ru, rb = cu.violations(xu), cb.violations(xb)
    assert rb["quadratic_eq"] == pytest.approx(ru["quadratic_eq"], abs=1e-12)
    assert rb["bounds"] == ru["bounds"]
    assert rb["linear_eq"] == ru["linear_eq"]
    assert rb["linear_ineq"] == 0.0
