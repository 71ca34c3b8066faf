"""Consensus ADMM over the node-wise decomposition.

Each iteration runs three phases separated by barriers:

1. originals ``x``: separable box QP per agent (closed form),
2. pseudo copies ``y``: per-agent projection of ``x[anchor] + lam/d`` onto the
   agent's local constraint set (linear KKT solve for power agents, barrier
   method for gas agents, exact one-constraint dual for pipeline agents),
3. multipliers: ``lam += d * (A x - B y)`` row by row.

Agents are processed in their fixed declaration order, so runs are
bit-reproducible.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.optimize import linprog, lsq_linear

from . import qcqp1
from .formulation import (
    BIDIRECTIONAL,
    Agent,
    CentralizedProblem,
    DecomposedProblem,
    restore_feasibility,
)
from .localsolve import (
    BoxQp,
    ConvexQcqpSolver,
    LocalSolveError,
    eq_qp_operator,
    solve_box,
)

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "TraceRow",
    "AdmmResult",
    "SubproblemFailure",
    "run",
    "residuals",
    "initial_state",
    "direction_seed",
    "kkt_residual",
    "project_feasible",
    "write_trace_csv",
    "result_summary",
]

CONVERGED = "converged"
MAX_ITER = "max_iter"
SUBPROBLEM_FAILURE = "subproblem_failure"


@dataclass(frozen=True)
class AdmmConfig:
    """ADMM settings.

    Attributes:
        d: Penalty weight, also the multiplier step.
        eps_pri, eps_dual: Residual thresholds.
        max_iter: Iteration cap.
        stop_on_either: Stop as soon as either residual is below its threshold
            instead of requiring both.
        init: ``"midpoint"`` starts from the middle of each box (0 where a
            side is unbounded, clipped into the box); ``"zero"`` from 0
            clipped into the box.
        seed_directions: In bidirectional mode, start every flow-direction
            variable at the sign of that pipe's flow in a linear relaxation
            (see :func:`direction_seed`). A start of ``u = 0`` sits on the
            symmetric saddle of ``u**2 = 1`` and can cycle.
        deterministic: Agents run in fixed order and wall times are still
            measured; kept for interface stability (execution is always
            sequential and reproducible).
    """

    d: float = 1.0
    eps_pri: float = 1e-4
    eps_dual: float = 1e-4
    max_iter: int = 5000
    stop_on_either: bool = False
    init: str = "midpoint"
    seed_directions: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"penalty d must be positive, got {self.d}")
        if not (self.eps_pri > 0 and self.eps_dual > 0):
            raise ValueError("residual tolerances must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")
        if self.init not in ("midpoint", "zero"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class AdmmState:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class TraceRow:
    k: int
    pri_res: float
    dual_res: float
    objective: float
    wall_time: float
    lam_step: float = 0.0


@dataclass(frozen=True)
class SubproblemFailure:
    agent: str
    iteration: int
    message: str


@dataclass
class AdmmResult:
    state: AdmmState
    trace: list[TraceRow]
    status: str
    kkt_residual: float
    objective_raw: float
    objective_projected: float
    x_projected: np.ndarray
    max_violation: float
    failure: SubproblemFailure | None = None
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return self.state.k

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


# --------------------------------------------------------------------------
# residuals and start


def residuals(dec: DecomposedProblem, state: AdmmState, y_prev: np.ndarray | None = None, d: float = 1.0) -> tuple[float, float]:
    """Primal ``|A x - B y|`` and dual ``d |A'B (y - y_prev)|`` residuals.

    With ``y_prev`` omitted the dual residual is 0 (no previous iterate).
    """
    cm = dec.consensus
    pri = float(np.linalg.norm(cm.residual(state.x, state.y)))
    if y_prev is None:
        return pri, 0.0
    dual = d * float(np.linalg.norm(cm.scatter(state.y - y_prev)))
    return pri, dual


def direction_seed(central: CentralizedProblem) -> np.ndarray:
    """Flow signs (+1/-1 per pipe) from a linear relaxation of ``central``.

    Quadratic rows and quadratic cost terms are dropped, which leaves a
    transport LP over balances, bounds and the linear inequalities. Pipes with
    zero relaxed flow, or every pipe if the LP fails, get +1.
    """
    signs = np.ones(len(central.pipes))
    if not central.pipes:
        return signs
    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None) for lo, hi in zip(central.lb, central.ub)]
    res = linprog(
        central.obj_lin,
        A_ub=central.E if central.E.shape[0] else None,
        b_ub=central.e if central.E.shape[0] else None,
        A_eq=central.C if central.C.shape[0] else None,
        b_eq=central.c if central.C.shape[0] else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 0:
        flows = res.x[[p.flow for p in central.pipes]]
        signs[flows < -1e-9] = -1.0
    return signs


def initial_state(dec: DecomposedProblem, init: str = "midpoint", seed_directions: bool = False) -> AdmmState:
    lb, ub = dec.x_lb, dec.x_ub
    if init == "midpoint":
        both = np.isfinite(lb) & np.isfinite(ub)
        x = np.where(both, 0.5 * (np.where(both, lb, 0) + np.where(both, ub, 0)), 0.0)
    else:
        x = np.zeros(dec.nx)
    if seed_directions and dec.mode == BIDIRECTIONAL:
        pipes = dec.central.pipes
        x[[p.direction for p in pipes]] = direction_seed(dec.central)
    x = np.clip(x, lb, ub)
    return AdmmState(x=x, y=x[dec.consensus.anchor].copy(), lam=np.zeros(dec.ny), k=0)


# --------------------------------------------------------------------------
# per-agent y solvers


class _AgentSolver:
    """Projection onto one agent's local set, with any reusable setup cached."""

    def __init__(self, agent: Agent, d: float):
        self.agent = agent
        self.d = d
        n = agent.ny
        self.n = n
        self.kind = "free"
        if agent.quad and len(agent.quad) == 1 and not len(agent.eq_b) and not len(agent.ineq_h) and not agent.quad[0].is_convex:
            self.kind = "qcqp1"
        elif len(agent.ineq_h) or agent.quad:
            self.kind = "interior"
            self.qcqp = ConvexQcqpSolver(agent.eq_A, agent.eq_b, agent.ineq_G, agent.ineq_h, agent.quad, n)
            self.qcqp.interior_point()
            self.h = np.full(n, d)
        elif len(agent.eq_b):
            self.kind = "eq"
            self.P, self.r = eq_qp_operator(np.full(n, d), agent.eq_A, agent.eq_b)

    def solve(self, target: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Minimize ``lam'(x_a - y) + d/2 |x_a - y|^2`` over the local set.

        ``target`` holds the anchored originals ``x_a``.
        """
        d = self.d
        if self.kind == "qcqp1":
            p = qcqp1.build_pipe_subproblem(self.agent, target, lam, d)
            y, _ = qcqp1.solve(p)
            return y
        t = target + lam / d
        if self.kind == "free":
            return t
        if self.kind == "eq":
            return self.P @ t + self.r
        return self.qcqp.solve(self.h, -d * t)


# --------------------------------------------------------------------------
# main loop


def run(
    dec: DecomposedProblem,
    cfg: AdmmConfig | None = None,
    state: AdmmState | None = None,
    callback: Callable[[AdmmState, TraceRow], None] | None = None,
) -> AdmmResult:
    """Run ADMM on ``dec`` until the stopping rule fires or ``max_iter``.

    Args:
        dec: Decomposed problem.
        cfg: Settings; defaults to :class:`AdmmConfig()`.
        state: Optional starting iterate (copied).
        callback: Called after every iteration with the new state and row.

    Returns:
        An :class:`AdmmResult`. Subproblem errors do not raise; they end the
        run with status ``subproblem_failure`` and a :class:`SubproblemFailure`.
    """
    cfg = cfg or AdmmConfig()
    d = float(cfg.d)
    cm = dec.consensus
    anchor = cm.anchor
    if state is None:
        state = initial_state(dec, cfg.init, cfg.seed_directions)
    else:
        state = AdmmState(state.x.copy(), state.y.copy(), state.lam.copy(), state.k)
    if state.x.shape != (dec.nx,) or state.y.shape != (dec.ny,) or state.lam.shape != (dec.ny,):
        raise ValueError("state dimensions do not match the decomposition")

    t0 = time.perf_counter()
    failure = None
    solvers = []
    for a in dec.agents:
        try:
            solvers.append(_AgentSolver(a, d))
        except (LocalSolveError, ValueError) as exc:
            failure = SubproblemFailure(a.name, 0, str(exc))
            break

    h = 2.0 * dec.x_cost_quad + d * cm.copies_per_x()
    trace: list[TraceRow] = []
    status = MAX_ITER
    if failure is not None:
        status = SUBPROBLEM_FAILURE
    else:
        for _ in range(int(cfg.max_iter)):
            # phase 1: originals
            f = dec.x_cost_lin + cm.scatter(state.lam) - d * cm.scatter(state.y)
            x = solve_box(BoxQp(h, f, dec.x_lb, dec.x_ub))
            # phase 2: pseudo copies
            xa = x[anchor]
            y = np.empty_like(state.y)
            for s in solvers:
                idx = s.agent.y_idx
                try:
                    y[idx] = s.solve(xa[idx], state.lam[idx])
                except (LocalSolveError, qcqp1.Qcqp1Error, np.linalg.LinAlgError) as exc:
                    failure = SubproblemFailure(s.agent.name, state.k + 1, str(exc))
                    break
            if failure is not None:
                status = SUBPROBLEM_FAILURE
                break
            # phase 3: multipliers
            r = xa - y
            lam = state.lam + d * r
            pri = float(np.linalg.norm(r))
            dual = d * float(np.linalg.norm(cm.scatter(y - state.y)))
            lam_step = float(np.linalg.norm(lam - state.lam))
            state = AdmmState(x, y, lam, state.k + 1)
            row = TraceRow(state.k, pri, dual, dec.objective(x), time.perf_counter() - t0, lam_step)
            trace.append(row)
            if callback is not None:
                callback(state, row)
            if not (math.isfinite(pri) and math.isfinite(dual)):
                break
            ok_p, ok_d = pri <= cfg.eps_pri, dual <= cfg.eps_dual
            if (ok_p or ok_d) if cfg.stop_on_either else (ok_p and ok_d):
                status = CONVERGED
                break

    x_proj = project_feasible(dec.central, state.x)
    return AdmmResult(
        state=state,
        trace=trace,
        status=status,
        kkt_residual=kkt_residual(dec.central, state.x),
        objective_raw=dec.objective(state.x),
        objective_projected=dec.central.objective(x_proj),
        x_projected=x_proj,
        max_violation=dec.central.max_violation(x_proj),
        failure=failure,
        wall_time=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# post-processing


def project_feasible(central: CentralizedProblem, x: np.ndarray) -> np.ndarray:
    """Snap ``x`` onto the Weymouth equalities, then repair the rest.

    Each pipe flow is rescaled to ``sign * sqrt(W2 * |dpi|)``; in
    bidirectional mode the direction variable is set to that sign. A
    Gauss-Newton pass then restores the balances and any bound or ratio row
    the rescaling disturbed.
    """
    x = np.clip(np.asarray(x, dtype=float).copy(), central.lb, central.ub)
    for p in central.pipes:
        dpi = x[p.p_from] - x[p.p_to]
        if central.mode == BIDIRECTIONAL:
            if abs(dpi) > 1e-12:
                s = 1.0 if dpi > 0 else -1.0
            else:
                s = 1.0 if x[p.flow] >= 0 else -1.0
            x[p.direction] = s
            x[p.flow] = s * math.sqrt(p.weymouth * abs(dpi))
        else:
            x[p.flow] = math.sqrt(p.weymouth * max(dpi, 0.0))
    x = np.clip(x, central.lb, central.ub)
    return restore_feasibility(central, x)


def kkt_residual(central: CentralizedProblem, x: np.ndarray, active_tol: float = 1e-6) -> float:
    """KKT residual of the centralized problem at ``x``.

    Multipliers are estimated by nonnegative least squares on the
    stationarity condition using the equality rows and the inequality rows
    (bounds included) whose slack is within ``active_tol`` relative. Returns
    the largest of the scaled stationarity residual, the constraint
    violation, and the complementarity ``|mult * slack|``.
    """
    x = np.asarray(x, dtype=float)
    n = central.n
    grad = central.objective_grad(x)
    viol = central.max_violation(x)

    fixed = central.lb == central.ub
    eq_rows = [central.C] + [q.grad(x)[None, :] for q in central.quad_eqs]
    eq_rows.append(np.eye(n)[fixed])
    Jeq = np.vstack(eq_rows).reshape(-1, n)

    # inequality rows g(x) <= 0 with slack s = -g(x)
    G_rows, slack = [], []
    if central.E.shape[0]:
        G_rows.append(central.E)
        slack.append(central.e - central.E @ x)
    I = np.eye(n)
    fin_u = np.isfinite(central.ub) & ~fixed
    fin_l = np.isfinite(central.lb) & ~fixed
    G_rows += [I[fin_u], -I[fin_l]]
    slack += [central.ub[fin_u] - x[fin_u], x[fin_l] - central.lb[fin_l]]
    G = np.vstack(G_rows).reshape(-1, n)
    s = np.concatenate(slack) if slack else np.zeros(0)
    scale_s = 1.0 + np.abs(np.concatenate([central.e, central.ub[fin_u], central.lb[fin_l]]))
    act = s <= active_tol * scale_s
    Gact = G[act]

    M = np.vstack([Jeq, Gact]).T
    m_eq = Jeq.shape[0]
    if M.shape[1]:
        lo = np.r_[np.full(m_eq, -np.inf), np.zeros(Gact.shape[0])]
        sol = lsq_linear(M, -grad, bounds=(lo, np.full(M.shape[1], np.inf)), method="bvls")
        mult = sol.x
        stat_vec = grad + M @ mult
        comp = float(np.max(np.abs(mult[m_eq:] * s[act]), initial=0.0))
    else:
        stat_vec = grad
        comp = 0.0
    stat = float(np.max(np.abs(stat_vec), initial=0.0)) / max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    return max(stat, viol, comp)


# --------------------------------------------------------------------------
# output


TRACE_COLUMNS = ("iter", "pri_res", "dual_res", "objective", "wall_time_ms")


def write_trace_csv(path, trace: list[TraceRow], deterministic: bool = False) -> None:
    """Write the iteration trace; ``deterministic`` blanks the wall-time column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            wt = "" if deterministic else repr(round(1000.0 * r.wall_time, 3))
            w.writerow([r.k, repr(r.pri_res), repr(r.dual_res), repr(r.objective), wt])


def result_summary(res: AdmmResult) -> dict[str, Any]:
    last = res.trace[-1] if res.trace else None
    out: dict[str, Any] = {
        "status": res.status,
        "iterations": res.iterations,
        "objective_raw": res.objective_raw,
        "objective_projected": res.objective_projected,
        "max_violation": res.max_violation,
        "kkt_residual": res.kkt_residual,
        "pri_res": last.pri_res if last else None,
        "dual_res": last.dual_res if last else None,
    }
    if res.failure is not None:
        out["failure"] = {"agent": res.failure.agent, "iteration": res.failure.iteration, "message": res.failure.message}
    return out
