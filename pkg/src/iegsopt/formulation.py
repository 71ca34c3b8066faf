"""Centralized OEF assembly and node-wise decomposition into agents.

Both problems share one variable vector ``x`` of original quantities. The
decomposition adds pseudo variables ``y``: every entry of ``y`` is an
agent-local copy of exactly one entry of ``x`` (its *anchor*), so the
coupling constraints read ``x[anchor] == y``, i.e. ``A x = B y`` with ``A`` a
row selection and ``B`` the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .model import NetworkSpec, validate

__all__ = [
    "UNIDIRECTIONAL",
    "BIDIRECTIONAL",
    "QuadConstraint",
    "QuadEq",
    "PipeRef",
    "CentralizedProblem",
    "VariableRegistry",
    "ConsensusMap",
    "Agent",
    "DecomposedProblem",
    "FeasibilityReport",
    "InvalidNetwork",
    "assemble_centralized",
    "decompose",
    "expand_copies",
    "lift_to_feasibility",
    "dump_debug",
    "restore_feasibility",
]

UNIDIRECTIONAL = "uni"
BIDIRECTIONAL = "bi"
_MODES = (UNIDIRECTIONAL, BIDIRECTIONAL)


class InvalidNetwork(ValueError):
    """Raised when a network fails validation before formulation."""

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations[:5])
        super().__init__(f"invalid network: {msg}")


@dataclass(frozen=True)
class QuadConstraint:
    """``0.5 * z'Qz + q'z + r`` over an agent's local vector (≤ 0 when used as a row)."""

    Q: np.ndarray
    q: np.ndarray
    r: float = 0.0

    def value(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.Q @ z + self.q @ z + self.r)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.Q @ z + self.q

    @property
    def is_convex(self) -> bool:
        return bool(np.linalg.eigvalsh(self.Q).min() >= -1e-12)


@dataclass(frozen=True)
class QuadEq:
    """Sparse quadratic equality ``x'Dx = d'x + e`` supported on ``idx``."""

    idx: np.ndarray
    D: np.ndarray
    d: np.ndarray
    e: float = 0.0

    def residual(self, x: np.ndarray) -> float:
        z = x[self.idx]
        return float(z @ self.D @ z - self.d @ z - self.e)

    def grad(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(x))
        z = x[self.idx]
        np.add.at(out, self.idx, 2.0 * self.D @ z - self.d)
        return out

    def dense(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        D = np.zeros((n, n))
        D[np.ix_(self.idx, self.idx)] = self.D
        d = np.zeros(n)
        d[self.idx] = self.d
        return D, d


@dataclass(frozen=True)
class PipeRef:
    """Indices of one pipeline's quantities in ``x``."""

    id: str
    flow: int
    p_from: int
    p_to: int
    weymouth: float
    direction: int | None = None


@dataclass
class CentralizedProblem:
    """Compact centralized OEF problem over the original variables ``x``.

    Objective ``sum(obj_quad * x**2) + obj_lin @ x + obj_const``; constraints
    ``lb <= x <= ub``, ``C x = c``, each :class:`QuadEq`, and ``E x <= e``.
    """

    mode: str
    labels: list[str]
    obj_quad: np.ndarray
    obj_lin: np.ndarray
    obj_const: float
    lb: np.ndarray
    ub: np.ndarray
    C: np.ndarray
    c: np.ndarray
    eq_labels: list[str]
    quad_eqs: list[QuadEq]
    quad_labels: list[str]
    E: np.ndarray
    e: np.ndarray
    ineq_labels: list[str]
    pipes: list[PipeRef]

    @property
    def n(self) -> int:
        return len(self.labels)

    def objective(self, x: np.ndarray) -> float:
        return float(self.obj_quad @ (x * x) + self.obj_lin @ x + self.obj_const)

    def objective_grad(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.obj_quad * x + self.obj_lin

    def quad_residuals(self, x: np.ndarray) -> np.ndarray:
        return np.array([q.residual(x) for q in self.quad_eqs])

    def violations(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation per constraint family (0 when satisfied)."""
        x = np.asarray(x, dtype=float)
        out = {
            "bounds": float(max(np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0))),
            "linear_eq": float(np.max(np.abs(self.C @ x - self.c), initial=0.0)),
            "quadratic_eq": float(np.max(np.abs(self.quad_residuals(x)), initial=0.0)),
            "linear_ineq": float(np.max(self.E @ x - self.e, initial=0.0)),
        }
        return out

    def max_violation(self, x: np.ndarray) -> float:
        return max(self.violations(x).values())


def _check(spec: NetworkSpec, mode: str) -> None:
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    report = validate(spec)
    if report:
        raise InvalidNetwork(report)


# --------------------------------------------------------------------------
# variable layout


@dataclass
class VariableRegistry:
    """Dense indices for original (``x``) and pseudo (``y``) variables.

    Keys are ``(owner, quantity, element)`` triples, e.g.
    ``("gas:m2", "flow", "p1")``.
    """

    x_keys: list[tuple[str, str, str]] = field(default_factory=list)
    y_keys: list[tuple[str, str, str]] = field(default_factory=list)
    _x: dict[tuple[str, str, str], int] = field(default_factory=dict, repr=False)
    _y: dict[tuple[str, str, str], int] = field(default_factory=dict, repr=False)

    def add_x(self, key: tuple[str, str, str]) -> int:
        if key in self._x:
            raise KeyError(f"duplicate x key {key}")
        self._x[key] = len(self.x_keys)
        self.x_keys.append(key)
        return self._x[key]

    def add_y(self, key: tuple[str, str, str]) -> int:
        if key in self._y:
            raise KeyError(f"duplicate y key {key}")
        self._y[key] = len(self.y_keys)
        self.y_keys.append(key)
        return self._y[key]

    def x(self, key: tuple[str, str, str]) -> int:
        return self._x[key]

    def y(self, key: tuple[str, str, str]) -> int:
        return self._y[key]

    @property
    def nx(self) -> int:
        return len(self.x_keys)

    @property
    def ny(self) -> int:
        return len(self.y_keys)


class _Layout:
    """Index bookkeeping for the original variables shared by both problems."""

    def __init__(self, spec: NetworkSpec, mode: str):
        self.spec = spec
        self.mode = mode
        self.reg = VariableRegistry()
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.x_owner: list[str] = []
        # quantity -> element id -> x index
        self.unit: dict[str, int] = {}
        self.line: dict[str, int] = {}
        self.angle: dict[str, int] = {}
        self.well: dict[str, int] = {}
        self.pipe: dict[str, int] = {}
        self.comp: dict[str, int] = {}
        self.direction: dict[str, int] = {}
        self.psq: dict[str, int] = {}

        gmax = max((p.capacity for p in spec.pipelines), default=0.0)
        self.gmax = gmax
        for n in spec.power_nodes:
            owner = f"power:{n.id}"
            for u in spec.units:
                if u.at_power_node == n.id:
                    self.unit[u.id] = self._new(owner, "output", u.id, u.p_min, u.p_max)
            for ln in spec.lines:
                if ln.to == n.id:
                    self.line[ln.id] = self._new(owner, "flow", ln.id, -ln.capacity, ln.capacity)
            lo, hi = (0.0, 0.0) if n.is_reference else (n.angle_min, n.angle_max)
            self.angle[n.id] = self._new(owner, "angle", n.id, lo, hi)
        for n in spec.gas_nodes:
            owner = f"gas:{n.id}"
            for w in spec.wells:
                if w.at_gas_node == n.id:
                    self.well[w.id] = self._new(owner, "output", w.id, w.g_min, w.g_max)
            for p in spec.pipelines:
                if p.to == n.id:
                    lo = -p.capacity if mode == BIDIRECTIONAL else 0.0
                    self.pipe[p.id] = self._new(owner, "flow", p.id, lo, p.capacity)
            for c in spec.compressors:
                if c.to == n.id:
                    self.comp[c.id] = self._new(owner, "flow", c.id, 0.0, c.capacity)
            if mode == BIDIRECTIONAL:
                for p in spec.pipelines:
                    if p.to == n.id:
                        self.direction[p.id] = self._new(owner, "direction", p.id, -1.0, 1.0)
            self.psq[n.id] = self._new(owner, "psq", n.id, n.psq_min, n.psq_max)

    def _new(self, owner: str, qty: str, elem: str, lo: float, hi: float) -> int:
        i = self.reg.add_x((owner, qty, elem))
        self.lb.append(lo)
        self.ub.append(hi)
        self.x_owner.append(owner)
        return i

    def label(self, i: int) -> str:
        owner, qty, elem = self.reg.x_keys[i]
        return f"{qty}[{elem}]@{owner}"


# --------------------------------------------------------------------------
# centralized problem


def _build_central(lay: _Layout) -> CentralizedProblem:
    spec, mode = lay.spec, lay.mode
    n = lay.reg.nx
    obj_quad = np.zeros(n)
    obj_lin = np.zeros(n)
    obj_const = 0.0
    for u in spec.units:
        if not u.is_gas_fired:
            i = lay.unit[u.id]
            obj_quad[i] = u.cost_quad
            obj_lin[i] = u.cost_lin
            obj_const += u.cost_const
    for w in spec.wells:
        obj_lin[lay.well[w.id]] = w.cost

    C_rows: list[np.ndarray] = []
    c_vals: list[float] = []
    eq_labels: list[str] = []

    def row() -> np.ndarray:
        r = np.zeros(n)
        C_rows.append(r)
        return r

    for ln in spec.lines:
        r = row()
        r[lay.line[ln.id]] = ln.reactance
        r[lay.angle[ln.from_]] -= 1.0
        r[lay.angle[ln.to]] += 1.0
        c_vals.append(0.0)
        eq_labels.append(f"dc_flow[{ln.id}]")
    for nd in spec.power_nodes:
        r = row()
        for u in spec.units:
            if u.at_power_node == nd.id:
                r[lay.unit[u.id]] += 1.0
        for ln in spec.lines:
            if ln.to == nd.id:
                r[lay.line[ln.id]] += 1.0
            if ln.from_ == nd.id:
                r[lay.line[ln.id]] -= 1.0
        c_vals.append(nd.total_load)
        eq_labels.append(f"power_balance[{nd.id}]")
    for nd in spec.gas_nodes:
        r = row()
        for w in spec.wells:
            if w.at_gas_node == nd.id:
                r[lay.well[w.id]] += 1.0
        for p in spec.pipelines:
            if p.to == nd.id:
                r[lay.pipe[p.id]] += 1.0
            if p.from_ == nd.id:
                r[lay.pipe[p.id]] -= 1.0
        for cp in spec.compressors:
            if cp.to == nd.id:
                r[lay.comp[cp.id]] += 1.0
            if cp.from_ == nd.id:
                r[lay.comp[cp.id]] -= 1.0
        for u in spec.units:
            if u.is_gas_fired and u.gas_node == nd.id:
                r[lay.unit[u.id]] -= u.conversion
        c_vals.append(nd.total_load)
        eq_labels.append(f"gas_balance[{nd.id}]")

    quad_eqs: list[QuadEq] = []
    quad_labels: list[str] = []
    pipes: list[PipeRef] = []
    for p in spec.pipelines:
        g, a, b = lay.pipe[p.id], lay.psq[p.from_], lay.psq[p.to]
        W2 = p.weymouth
        if mode == UNIDIRECTIONAL:
            quad_eqs.append(
                QuadEq(np.array([g, a, b]), np.diag([1.0, 0.0, 0.0]), np.array([0.0, W2, -W2]))
            )
            quad_labels.append(f"weymouth[{p.id}]")
            pipes.append(PipeRef(p.id, g, a, b, W2))
        else:
            s = lay.direction[p.id]
            D = np.zeros((4, 4))
            D[0, 0] = 1.0
            D[1, 3] = D[3, 1] = -0.5 * W2
            D[2, 3] = D[3, 2] = 0.5 * W2
            quad_eqs.append(QuadEq(np.array([g, a, b, s]), D, np.zeros(4)))
            quad_labels.append(f"weymouth[{p.id}]")
            quad_eqs.append(QuadEq(np.array([s]), np.eye(1), np.zeros(1), 1.0))
            quad_labels.append(f"direction[{p.id}]")
            pipes.append(PipeRef(p.id, g, a, b, W2, s))

    E_rows: list[np.ndarray] = []
    e_vals: list[float] = []
    ineq_labels: list[str] = []
    for cp in spec.compressors:
        r = np.zeros(n)
        r[lay.psq[cp.to]] = 1.0
        r[lay.psq[cp.from_]] -= cp.ratio
        E_rows.append(r)
        e_vals.append(0.0)
        ineq_labels.append(f"compressor_ratio[{cp.id}]")
    if mode == BIDIRECTIONAL:
        for p in spec.pipelines:
            g, s = lay.pipe[p.id], lay.direction[p.id]
            r = np.zeros(n)
            r[s], r[g] = lay.gmax, -1.0
            E_rows.append(r)
            e_vals.append(lay.gmax)
            ineq_labels.append(f"direction_lower[{p.id}]")
            r = np.zeros(n)
            r[g], r[s] = 1.0, -lay.gmax
            E_rows.append(r)
            e_vals.append(lay.gmax)
            ineq_labels.append(f"direction_upper[{p.id}]")

    return CentralizedProblem(
        mode=mode,
        labels=[lay.label(i) for i in range(n)],
        obj_quad=obj_quad,
        obj_lin=obj_lin,
        obj_const=obj_const,
        lb=np.array(lay.lb, dtype=float),
        ub=np.array(lay.ub, dtype=float),
        C=np.array(C_rows).reshape(-1, n),
        c=np.array(c_vals, dtype=float),
        eq_labels=eq_labels,
        quad_eqs=quad_eqs,
        quad_labels=quad_labels,
        E=np.array(E_rows).reshape(-1, n),
        e=np.array(e_vals, dtype=float),
        ineq_labels=ineq_labels,
        pipes=pipes,
    )


def assemble_centralized(spec: NetworkSpec, mode: str = UNIDIRECTIONAL) -> CentralizedProblem:
    """Build the centralized OEF problem for ``spec``.

    Gas-fired units carry no generation cost of their own; their cost enters
    through the fuel they draw from gas wells. In bidirectional mode each pipe
    gets a direction variable ``u`` with ``g**2 = W2*(pi_from - pi_to)*u``,
    ``u**2 = 1`` and the big-M coupling between ``g`` and ``u``.

    Raises:
        InvalidNetwork: if ``validate(spec)`` reports violations.
    """
    _check(spec, mode)
    return _build_central(_Layout(spec, mode))


# --------------------------------------------------------------------------
# decomposition


@dataclass
class ConsensusMap:
    """Coupling rows ``x[anchor[j]] == y[j]`` in matrix form ``A x = B y``."""

    anchor: np.ndarray
    nx: int
    labels: list[str]

    @property
    def rows(self) -> int:
        return len(self.anchor)

    @property
    def A(self) -> sp.csr_matrix:
        m = self.rows
        return sp.csr_matrix((np.ones(m), (np.arange(m), self.anchor)), shape=(m, self.nx))

    @property
    def B(self) -> sp.csr_matrix:
        return sp.identity(self.rows, format="csr")

    def residual(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x[self.anchor] - y

    def copies_per_x(self) -> np.ndarray:
        return np.bincount(self.anchor, minlength=self.nx)

    def scatter(self, v: np.ndarray) -> np.ndarray:
        """``A' v`` without forming ``A``."""
        return np.bincount(self.anchor, weights=v, minlength=self.nx)


@dataclass
class Agent:
    """One decision maker of the decomposed problem.

    ``x_idx`` are the originals it owns (with box ``lb``/``ub`` and a separable
    cost); ``y_idx`` is the contiguous range of its pseudo variables. Local
    constraints act on the agent's own ``y`` block: ``eq_A z = eq_b``,
    ``ineq_G z <= ineq_h`` and every ``QuadConstraint`` ``<= 0``.
    """

    name: str
    kind: str
    x_idx: np.ndarray
    y_idx: np.ndarray
    cost_quad: np.ndarray
    cost_lin: np.ndarray
    cost_const: float
    lb: np.ndarray
    ub: np.ndarray
    eq_A: np.ndarray
    eq_b: np.ndarray
    ineq_G: np.ndarray
    ineq_h: np.ndarray
    quad: list[QuadConstraint]
    y_names: list[str]

    @property
    def ny(self) -> int:
        return len(self.y_idx)

    def objective(self, x: np.ndarray) -> float:
        z = x[self.x_idx]
        return float(self.cost_quad @ (z * z) + self.cost_lin @ z + self.cost_const)

    def violation(self, z: np.ndarray) -> float:
        """Largest violation of this agent's local constraints at ``z``."""
        v = 0.0
        if len(self.eq_b):
            v = max(v, float(np.max(np.abs(self.eq_A @ z - self.eq_b))))
        if len(self.ineq_h):
            v = max(v, float(np.max(self.ineq_G @ z - self.ineq_h)))
        for qc in self.quad:
            v = max(v, qc.value(z))
        return v


@dataclass
class DecomposedProblem:
    agents: list[Agent]
    registry: VariableRegistry
    consensus: ConsensusMap
    mode: str
    central: CentralizedProblem
    x_lb: np.ndarray
    x_ub: np.ndarray
    x_cost_quad: np.ndarray
    x_cost_lin: np.ndarray
    cost_const: float

    @property
    def nx(self) -> int:
        return self.registry.nx

    @property
    def ny(self) -> int:
        return self.registry.ny

    def agent(self, name: str) -> Agent:
        for a in self.agents:
            if a.name == name:
                return a
        raise KeyError(name)

    def objective(self, x: np.ndarray) -> float:
        return float(self.x_cost_quad @ (x * x) + self.x_cost_lin @ x + self.cost_const)


class _AgentBuilder:
    def __init__(self, lay: _Layout, name: str, kind: str, anchors: list[int], labels: list[str]):
        self.lay = lay
        self.name = name
        self.kind = kind
        self.anchors = anchors
        self.labels = labels
        self.slots: dict[tuple[str, str], int] = {}
        self.names: list[str] = []
        self.eq: list[tuple[dict[int, float], float]] = []
        self.ineq: list[tuple[dict[int, float], float]] = []
        self.quad: list[tuple[dict[tuple[int, int], float], dict[int, float], float]] = []

    def copy(self, qty: str, elem: str, anchor: int, label: str) -> int:
        key = (qty, elem)
        if key not in self.slots:
            self.slots[key] = len(self.names)
            self.lay.reg.add_y((self.name, qty, elem))
            self.anchors.append(anchor)
            self.labels.append(label)
            self.names.append(f"{qty}[{elem}]")
        return self.slots[key]

    def build(self, y_start: int) -> Agent:
        k = len(self.names)
        owned = [i for i, o in enumerate(self.lay.x_owner) if o == self.name]
        x_idx = np.array(owned, dtype=int)

        def dense(rows):
            M = np.zeros((len(rows), k))
            for r, (coef, _) in enumerate(rows):
                for j, v in coef.items():
                    M[r, j] += v
            return M, np.array([b for _, b in rows], dtype=float)

        eq_A, eq_b = dense(self.eq)
        ineq_G, ineq_h = dense(self.ineq)
        quads = []
        for Qd, qd, r in self.quad:
            Q = np.zeros((k, k))
            for (i, j), v in Qd.items():
                Q[i, j] += v
            q = np.zeros(k)
            for j, v in qd.items():
                q[j] += v
            quads.append(QuadConstraint(Q, q, r))
        return Agent(
            name=self.name,
            kind=self.kind,
            x_idx=x_idx,
            y_idx=np.arange(y_start, y_start + k),
            cost_quad=np.zeros(len(x_idx)),
            cost_lin=np.zeros(len(x_idx)),
            cost_const=0.0,
            lb=np.array([self.lay.lb[i] for i in owned], dtype=float),
            ub=np.array([self.lay.ub[i] for i in owned], dtype=float),
            eq_A=eq_A,
            eq_b=eq_b,
            ineq_G=ineq_G,
            ineq_h=ineq_h,
            quad=quads,
            y_names=list(self.names),
        )


def decompose(
    spec: NetworkSpec,
    mode: str = UNIDIRECTIONAL,
    duplicate_pipe_agents: bool = False,
) -> DecomposedProblem:
    """Split ``spec`` into power-node, gas-node and pipeline agents.

    Every power node and every gas node becomes an agent owning its originals.
    Each pipe contributes pipeline agents that hold one nonconvex quadratic
    inequality each: in unidirectional mode the convex half
    ``g**2 <= W2*dpi`` of the Weymouth equality lives in both end gas agents
    and the concave half in one pipeline agent (two with
    ``duplicate_pipe_agents``); in bidirectional mode both halves of the
    Weymouth equality and of ``u**2 = 1`` become four pipeline agents and the
    big-M rows go to the gas agent that owns the pipe flow.

    Raises:
        InvalidNetwork: if ``validate(spec)`` reports violations.
    """
    _check(spec, mode)
    lay = _Layout(spec, mode)
    central = _build_central(lay)
    anchors: list[int] = []
    labels: list[str] = []
    builders: list[_AgentBuilder] = []

    units_at: dict[str, list] = {n.id: [] for n in spec.power_nodes}
    for u in spec.units:
        units_at[u.at_power_node].append(u)

    # power node agents
    for nd in spec.power_nodes:
        b = _AgentBuilder(lay, f"power:{nd.id}", "power", anchors, labels)
        balance: dict[int, float] = {}
        for u in units_at[nd.id]:
            j = b.copy("output", u.id, lay.unit[u.id], "unit_output")
            balance[j] = balance.get(j, 0.0) + 1.0
        incident = [ln for ln in spec.lines if nd.id in (ln.from_, ln.to)]
        neighbors = sorted({ln.from_ if ln.to == nd.id else ln.to for ln in incident} | {nd.id})
        theta = {r: b.copy("angle", r, lay.angle[r], "angle") for r in neighbors}
        for ln in incident:
            j = b.copy("flow", ln.id, lay.line[ln.id], "line_flow")
            b.eq.append(({j: ln.reactance, theta[ln.from_]: -1.0, theta[ln.to]: 1.0}, 0.0))
            sign = 1.0 if ln.to == nd.id else -1.0
            balance[j] = balance.get(j, 0.0) + sign
        b.eq.append((balance, nd.total_load))
        builders.append(b)

    # gas node agents
    for nd in spec.gas_nodes:
        b = _AgentBuilder(lay, f"gas:{nd.id}", "gas", anchors, labels)
        balance = {}
        for w in spec.wells:
            if w.at_gas_node == nd.id:
                j = b.copy("output", w.id, lay.well[w.id], "well_output")
                balance[j] = balance.get(j, 0.0) + 1.0
        pipes = [p for p in spec.pipelines if nd.id in (p.from_, p.to)]
        comps = [c for c in spec.compressors if nd.id in (c.from_, c.to)]
        neighbors = sorted(
            {p.from_ if p.to == nd.id else p.to for p in pipes}
            | {c.from_ if c.to == nd.id else c.to for c in comps}
            | {nd.id}
        )
        psq = {r: b.copy("psq", r, lay.psq[r], "pressure") for r in neighbors}
        for p in pipes:
            j = b.copy("flow", p.id, lay.pipe[p.id], "pipe_flow")
            balance[j] = balance.get(j, 0.0) + (1.0 if p.to == nd.id else -1.0)
            ja, jb = psq[p.from_], psq[p.to]
            if mode == UNIDIRECTIONAL:
                # convex half of the Weymouth equality, kept squared; dpi >= 0 explicit
                b.quad.append(({(j, j): 2.0}, {ja: -p.weymouth, jb: p.weymouth}, 0.0))
                b.ineq.append(({ja: -1.0, jb: 1.0}, 0.0))
            elif p.to == nd.id:
                s = b.copy("direction", p.id, lay.direction[p.id], "direction")
                b.ineq.append(({s: lay.gmax, j: -1.0}, lay.gmax))
                b.ineq.append(({j: 1.0, s: -lay.gmax}, lay.gmax))
        for c in comps:
            j = b.copy("flow", c.id, lay.comp[c.id], "compressor_flow")
            balance[j] = balance.get(j, 0.0) + (1.0 if c.to == nd.id else -1.0)
            b.ineq.append(({psq[c.to]: 1.0, psq[c.from_]: -c.ratio}, 0.0))
        for u in spec.units:
            if u.is_gas_fired and u.gas_node == nd.id:
                j = b.copy("fuel", u.id, lay.unit[u.id], "fuel_draw")
                balance[j] = balance.get(j, 0.0) - u.conversion
        b.eq.append((balance, nd.total_load))
        builders.append(b)

    # pipeline agents, each holding exactly one quadratic inequality
    for p in spec.pipelines:
        g, pa, pb = lay.pipe[p.id], lay.psq[p.from_], lay.psq[p.to]
        W2 = p.weymouth
        if mode == UNIDIRECTIONAL:
            owners = [f"pipe:{p.id}@{p.from_}", f"pipe:{p.id}@{p.to}"] if duplicate_pipe_agents else [f"pipe:{p.id}"]
            for name in owners:
                b = _AgentBuilder(lay, name, "pipe", anchors, labels)
                j = b.copy("flow", p.id, g, "pipe_flow_ineq")
                ja = b.copy("psq", p.from_, pa, "pressure_ineq")
                jb = b.copy("psq", p.to, pb, "pressure_ineq")
                # W2*dpi - g**2 <= 0
                b.quad.append(({(j, j): -2.0}, {ja: W2, jb: -W2}, 0.0))
                builders.append(b)
        else:
            s = lay.direction[p.id]
            for tag, sgn in (("weymouth_le", 1.0), ("weymouth_ge", -1.0)):
                b = _AgentBuilder(lay, f"pipe:{p.id}:{tag}", "pipe", anchors, labels)
                j = b.copy("flow", p.id, g, "pipe_flow_ineq")
                ja = b.copy("psq", p.from_, pa, "pressure_ineq")
                jb = b.copy("psq", p.to, pb, "pressure_ineq")
                js = b.copy("direction", p.id, s, "direction_ineq")
                # sgn * (g**2 - W2*(pa - pb)*u) <= 0
                Q = {(j, j): 2.0 * sgn, (ja, js): -W2 * sgn, (js, ja): -W2 * sgn,
                     (jb, js): W2 * sgn, (js, jb): W2 * sgn}
                b.quad.append((Q, {}, 0.0))
                builders.append(b)
            for tag, sgn in (("direction_le", 1.0), ("direction_ge", -1.0)):
                b = _AgentBuilder(lay, f"pipe:{p.id}:{tag}", "pipe", anchors, labels)
                js = b.copy("direction", p.id, s, "direction_ineq")
                # sgn * (u**2 - 1) <= 0
                b.quad.append(({(js, js): 2.0 * sgn}, {}, -sgn))
                builders.append(b)

    agents = []
    start = 0
    for b in builders:
        agents.append(b.build(start))
        start += len(b.names)

    for a in agents:
        if len(a.x_idx):
            a.cost_quad = central.obj_quad[a.x_idx].copy()
            a.cost_lin = central.obj_lin[a.x_idx].copy()
    # constant cost terms of coal units go to the agent owning the unit
    for u in spec.units:
        if not u.is_gas_fired and u.cost_const:
            a = next(a for a in agents if a.name == f"power:{u.at_power_node}")
            a.cost_const += u.cost_const

    consensus = ConsensusMap(np.array(anchors, dtype=int), lay.reg.nx, labels)
    return DecomposedProblem(
        agents=agents,
        registry=lay.reg,
        consensus=consensus,
        mode=mode,
        central=central,
        x_lb=central.lb.copy(),
        x_ub=central.ub.copy(),
        x_cost_quad=central.obj_quad.copy(),
        x_cost_lin=central.obj_lin.copy(),
        cost_const=central.obj_const,
    )


# --------------------------------------------------------------------------
# checks and dumps


@dataclass
class FeasibilityReport:
    """Violations of a decomposed point, broken down by source."""

    central: dict[str, float]
    consensus: np.ndarray
    agents: dict[str, float]

    @property
    def max(self) -> float:
        vals = list(self.central.values()) + list(self.agents.values())
        return max(vals + [float(np.max(np.abs(self.consensus), initial=0.0))])


def expand_copies(dec: DecomposedProblem, x: np.ndarray) -> np.ndarray:
    """Pseudo variables that agree exactly with the originals ``x``."""
    return np.asarray(x, dtype=float)[dec.consensus.anchor].copy()


def lift_to_feasibility(dec: DecomposedProblem, x: np.ndarray, y: np.ndarray) -> FeasibilityReport:
    """Measure how far ``(x, y)`` is from a feasible point of the decomposed problem.

    Raises:
        ValueError: if the vector sizes do not match the registry.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (dec.nx,) or y.shape != (dec.ny,):
        raise ValueError(f"expected x of size {dec.nx} and y of size {dec.ny}, got {x.shape} and {y.shape}")
    central = dec.central.violations(x)
    agents = {a.name: max(0.0, a.violation(y[a.y_idx])) for a in dec.agents}
    return FeasibilityReport(central, np.abs(dec.consensus.residual(x, y)), agents)


def dump_debug(dec: DecomposedProblem) -> dict[str, Any]:
    """JSON-ready description of agents and consensus rows."""
    reg = dec.registry
    out = {
        "mode": dec.mode,
        "x": ["/".join(k) for k in reg.x_keys],
        "y": ["/".join(k) for k in reg.y_keys],
        "agents": [
            {
                "name": a.name,
                "kind": a.kind,
                "x": a.x_idx.tolist(),
                "y": a.y_idx.tolist(),
                "eq_rows": len(a.eq_b),
                "ineq_rows": len(a.ineq_h),
                "quad_rows": len(a.quad),
            }
            for a in dec.agents
        ],
        "consensus": [
            {"row": j, "x": int(i), "y": j, "label": lab}
            for j, (i, lab) in enumerate(zip(dec.consensus.anchor, dec.consensus.labels))
        ],
    }
    json.dumps(out)
    return out


def restore_feasibility(
    central: CentralizedProblem, x: np.ndarray, tol: float = 1e-13, max_iter: int = 50
) -> np.ndarray:
    """Minimum-norm Gauss-Newton correction of ``x`` onto the constraint set.

    Equalities (linear and quadratic) and currently violated inequality rows
    are driven to zero while variables stay inside their bounds. Meant for
    points that are already nearly feasible; it does not optimize.
    """
    x = np.clip(np.asarray(x, dtype=float).copy(), central.lb, central.ub)
    n = central.n
    for _ in range(max_iter):
        r_eq = central.C @ x - central.c
        r_q = central.quad_residuals(x)
        r_in = central.E @ x - central.e
        viol = r_in > 0
        r = np.concatenate([r_eq, r_q, r_in[viol]])
        if np.max(np.abs(r), initial=0.0) <= tol:
            break
        J = np.vstack(
            [central.C]
            + [q.grad(x)[None, :] for q in central.quad_eqs]
            + [central.E[viol]]
        ).reshape(-1, n)
        free = central.ub > central.lb
        dx = np.zeros(n)
        for _ in range(3):
            dx = np.zeros(n)
            dx[free] = np.linalg.lstsq(J[:, free], -r, rcond=None)[0]
            out = ((x + dx < central.lb) & (x <= central.lb)) | ((x + dx > central.ub) & (x >= central.ub))
            if not np.any(out & free):
                break
            free &= ~out
        x = np.clip(x + dx, central.lb, central.ub)
    return x
