"""Centralized reference solutions for desk-scale instances.

:func:`solve_reference` runs a local NLP solver (SLSQP) from a set of
low-discrepancy starts and keeps the best feasible point. Bidirectional
problems are solved once per flow-direction pattern with the direction
variables fixed, which turns every Weymouth equality into a smooth oriented
one.

:func:`brute_force_qcqp1` is an independent grid oracle for the
single-constraint subproblems.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.stats import qmc

from .formulation import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    CentralizedProblem,
    PipeRef,
    QuadEq,
    restore_feasibility,
)
from .qcqp1 import Qcqp1Problem

__all__ = [
    "OracleConfig",
    "ReferenceSolution",
    "OracleInfeasible",
    "solve_reference",
    "brute_force_qcqp1",
]


class OracleInfeasible(RuntimeError):
    """No feasible point was found; ``best_violation`` says how close it got."""

    def __init__(self, msg: str, best_violation: float):
        super().__init__(msg)
        self.best_violation = best_violation


@dataclass(frozen=True)
class OracleConfig:
    """Reference-solver settings.

    Attributes:
        multistart: Starts per solve (per direction pattern when bidirectional).
        seed: Seed of the scrambled Sobol sequence.
        ftol: SLSQP objective tolerance.
        max_local_iter: SLSQP iteration cap per start.
        feas_tol: A point counts as feasible below this violation.
        direction_cap: Largest number of direction patterns enumerated.
        box_width: Stand-in width for variables unbounded on one side.
    """

    multistart: int = 32
    seed: int = 0
    ftol: float = 1e-12
    max_local_iter: int = 500
    feas_tol: float = 1e-8
    direction_cap: int = 256
    box_width: float = 100.0

    def __post_init__(self):
        if self.multistart < 1 or self.max_local_iter < 1 or self.direction_cap < 1:
            raise ValueError("multistart, max_local_iter and direction_cap must be positive")
        if not (self.ftol > 0 and self.feas_tol > 0 and self.box_width > 0):
            raise ValueError("tolerances and box_width must be positive")


@dataclass
class ReferenceSolution:
    x: np.ndarray
    objective: float
    max_violation: float
    directions: dict[str, int] | None = None
    labels: list[str] = field(default_factory=list)
    starts: int = 0
    feasible_starts: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective,
            "max_violation": self.max_violation,
            "directions": self.directions,
            "x": dict(zip(self.labels, map(float, self.x))),
            "starts": self.starts,
            "feasible_starts": self.feasible_starts,
        }


# --------------------------------------------------------------------------
# local solves


def _finite_box(central: CentralizedProblem, width: float) -> tuple[np.ndarray, np.ndarray]:
    lb, ub = central.lb.copy(), central.ub.copy()
    lo_inf, hi_inf = ~np.isfinite(lb), ~np.isfinite(ub)
    lb[lo_inf & ~hi_inf] = ub[lo_inf & ~hi_inf] - width
    ub[hi_inf & ~lo_inf] = lb[hi_inf & ~lo_inf] + width
    both = lo_inf & hi_inf
    lb[both], ub[both] = -0.5 * width, 0.5 * width
    return lb, ub


def _starts(central: CentralizedProblem, cfg: OracleConfig) -> np.ndarray:
    lb, ub = _finite_box(central, cfg.box_width)
    n = central.n
    sob = qmc.Sobol(d=n, scramble=True, seed=cfg.seed)
    m = 1 << max(0, math.ceil(math.log2(cfg.multistart)))
    u = sob.random(m)[: cfg.multistart]
    pts = lb + u * (ub - lb)
    # the box midpoint is a cheap, deterministic extra start
    return np.vstack([0.5 * (lb + ub), pts])


def _local(central: CentralizedProblem, x0: np.ndarray, cfg: OracleConfig) -> np.ndarray:
    n = central.n
    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None) for lo, hi in zip(central.lb, central.ub)]
    cons = []
    if central.C.shape[0]:
        cons.append({"type": "eq", "fun": lambda x: central.C @ x - central.c, "jac": lambda x: central.C})
    if central.quad_eqs:
        cons.append(
            {
                "type": "eq",
                "fun": central.quad_residuals,
                "jac": lambda x: np.array([q.grad(x) for q in central.quad_eqs]).reshape(-1, n),
            }
        )
    if central.E.shape[0]:
        cons.append({"type": "ineq", "fun": lambda x: central.e - central.E @ x, "jac": lambda x: -central.E})
    with warnings.catch_warnings():
        # SLSQP clips trial points to the bounds and says so; harmless here
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            lambda x: (central.objective(x), central.objective_grad(x)),
            x0,
            jac=True,
            method="SLSQP",
            bounds=bounds,
            constraints=cons,
            options={"ftol": cfg.ftol, "maxiter": cfg.max_local_iter},
        )
    return np.clip(res.x, central.lb, central.ub)


def _polish(central: CentralizedProblem, x: np.ndarray) -> np.ndarray:
    return restore_feasibility(central, x, tol=1e-14)


def _multistart(central: CentralizedProblem, cfg: OracleConfig) -> tuple[np.ndarray | None, float, float, int, int]:
    best_x, best_f, best_v = None, math.inf, math.inf
    n_feas = 0
    starts = _starts(central, cfg)
    for x0 in starts:
        x = _polish(central, _local(central, x0, cfg))
        v = central.max_violation(x)
        f = central.objective(x)
        if v <= cfg.feas_tol:
            n_feas += 1
            # strict improvement beyond round-off keeps the earliest start on ties
            if f < best_f - 1e-12 * (1 + abs(best_f)) or best_x is None or best_v > cfg.feas_tol:
                best_x, best_f, best_v = x, f, v
        elif best_x is None or (best_v > cfg.feas_tol and v < best_v):
            best_x, best_v, best_f = x, v, f
    return best_x, best_f, best_v, len(starts), n_feas


def _oriented(central: CentralizedProblem, signs: tuple[int, ...]) -> tuple[CentralizedProblem, np.ndarray]:
    """Reduce a bidirectional problem to a fixed flow-direction pattern.

    Direction variables are eliminated, each Weymouth equality becomes
    ``g**2 = s * W2 * dpi`` with ``s * g >= 0``, and the big-M rows (implied
    by the capacity bounds once ``u`` is fixed) are dropped. Returns the
    reduced problem and the kept column indices.
    """
    n = central.n
    u_cols = {p.direction for p in central.pipes}
    keep = np.array([i for i in range(n) if i not in u_cols], dtype=int)
    pos = -np.ones(n, dtype=int)
    pos[keep] = np.arange(len(keep))
    lb, ub = central.lb[keep].copy(), central.ub[keep].copy()
    quad_eqs, quad_labels, pipes = [], [], []
    for p, sgn in zip(central.pipes, signs):
        g, a, b = pos[p.flow], pos[p.p_from], pos[p.p_to]
        if sgn > 0:
            lb[g] = max(lb[g], 0.0)
        else:
            ub[g] = min(ub[g], 0.0)
        w = sgn * p.weymouth
        quad_eqs.append(QuadEq(np.array([g, a, b]), np.diag([1.0, 0.0, 0.0]), np.array([0.0, w, -w])))
        quad_labels.append(f"weymouth[{p.id}]")
        pipes.append(PipeRef(p.id, int(g), int(a), int(b), p.weymouth))
    rows = [i for i, lab in enumerate(central.ineq_labels) if not lab.startswith("direction_")]
    E = central.E[rows][:, keep] if central.E.shape[0] else np.zeros((0, len(keep)))
    red = replace(
        central,
        mode=UNIDIRECTIONAL,
        labels=[central.labels[i] for i in keep],
        obj_quad=central.obj_quad[keep],
        obj_lin=central.obj_lin[keep],
        lb=lb,
        ub=ub,
        C=central.C[:, keep],
        quad_eqs=quad_eqs,
        quad_labels=quad_labels,
        E=E.reshape(-1, len(keep)),
        e=central.e[rows],
        ineq_labels=[central.ineq_labels[i] for i in rows],
        pipes=pipes,
    )
    return red, keep


def _relaxation_feasible(red: CentralizedProblem) -> bool:
    """Linear relaxation of an oriented problem: balances, rows, bounds and
    the pressure-drop sign each oriented pipe implies."""
    n = red.n
    rows, rhs = [red.E], [red.e]
    for p, q in zip(red.pipes, red.quad_eqs):
        # g**2 = w*(pa - pb) needs w*(pa - pb) >= 0
        w = q.d[1]
        r = np.zeros(n)
        r[p.p_from], r[p.p_to] = -w, w
        rows.append(r[None, :])
        rhs.append(np.zeros(1))
    A_ub = np.vstack(rows).reshape(-1, n)
    b_ub = np.concatenate(rhs)
    bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None) for lo, hi in zip(red.lb, red.ub)]
    res = linprog(
        np.zeros(n),
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=red.C if red.C.shape[0] else None,
        b_eq=red.c if red.C.shape[0] else None,
        bounds=bounds,
        method="highs",
    )
    return res.status != 2


def solve_reference(central: CentralizedProblem, cfg: OracleConfig | None = None) -> ReferenceSolution:
    """Best feasible point of ``central`` over a deterministic multistart.

    Raises:
        OracleInfeasible: if no start reaches ``cfg.feas_tol``.
    """
    cfg = cfg or OracleConfig()
    directions = None
    if central.mode == BIDIRECTIONAL and central.pipes:
        patterns = itertools.product((1, -1), repeat=len(central.pipes))
        best = None
        total = feas = 0
        for signs in itertools.islice(patterns, cfg.direction_cap):
            red, keep = _oriented(central, signs)
            if not _relaxation_feasible(red):
                continue
            xr, f, _, k, kf = _multistart(red, cfg)
            total += k
            feas += kf
            x = np.zeros(central.n)
            x[keep] = xr
            for p, sgn in zip(central.pipes, signs):
                x[p.direction] = sgn
            v = central.max_violation(x)
            key = (0, f) if v <= cfg.feas_tol else (1, v)
            if best is None or key < best[0]:
                best = (key, x, f, v, signs)
        if best is None:
            raise OracleInfeasible("every flow-direction pattern is infeasible", math.inf)
        _, x, f, v, signs = best
        directions = {p.id: int(s) for p, s in zip(central.pipes, signs)}
    else:
        x, f, v, total, feas = _multistart(central, cfg)
    if v > cfg.feas_tol:
        raise OracleInfeasible(f"no feasible point found (best violation {v:.3e})", v)
    return ReferenceSolution(
        x=x,
        objective=float(central.objective(x)),
        max_violation=float(v),
        directions=directions,
        labels=list(central.labels),
        starts=total,
        feasible_starts=feas,
    )


# --------------------------------------------------------------------------
# grid oracle for one-constraint subproblems


def _grid(lo, hi, step):
    axes = [np.arange(a, b + 0.5 * step, step) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _eval(p: Qcqp1Problem, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    obj = 0.5 * np.einsum("ij,jk,ik->i", Y, p.A0, Y) + Y @ p.b0 + p.c0
    con = 0.5 * np.einsum("ij,jk,ik->i", Y, p.A1, Y) + Y @ p.b1 + p.c1
    return obj, con


def _snap(p: Qcqp1Problem, Y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Points where the axis lines through ``Y`` cross the constraint surface.

    Along coordinate ``j`` the constraint is a scalar quadratic
    ``a s**2 + b s + c``; each real root inside ``[lo_j, hi_j]`` gives a
    boundary point.
    """
    out = []
    for j in range(p.n):
        Y0 = Y.copy()
        Y0[:, j] = 0.0
        a = 0.5 * p.A1[j, j]
        b = Y0 @ p.A1[j] + p.b1[j]
        c = 0.5 * np.einsum("ij,jk,ik->i", Y0, p.A1, Y0) + Y0 @ p.b1 + p.c1
        if abs(a) > 1e-14:
            disc = b * b - 4.0 * a * c
            ok = disc >= 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            # stable pair of roots
            qv = -0.5 * (b + np.copysign(sq, b))
            with np.errstate(divide="ignore", invalid="ignore"):
                roots = [np.where(ok, qv / a, np.nan), np.where(ok & (qv != 0), c / qv, np.nan)]
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                roots = [np.where(b != 0, -c / b, np.nan)]
        for r in roots:
            keep = np.isfinite(r) & (r >= lo[j]) & (r <= hi[j])
            if np.any(keep):
                Z = Y0[keep]
                Z[:, j] = r[keep]
                out.append(Z)
    return np.vstack(out) if out else np.zeros((0, p.n))


def _feasible_points(p, Y, lo, hi, snap, snap_tol):
    """Feasible rows of ``Y`` (plus their boundary snaps) with objectives."""
    obj, con = _eval(p, Y)
    worst = float(con.min(initial=np.inf))
    ok = con <= 0
    if snap:
        Z = _snap(p, Y, lo, hi)
        oz, cz = _eval(p, Z)
        Y, obj = np.vstack([Y, Z]), np.concatenate([obj, oz])
        ok = np.concatenate([ok, cz <= snap_tol])
    return Y[ok], obj[ok], worst


def brute_force_qcqp1(
    p: Qcqp1Problem,
    lo,
    hi,
    coarse_step: float,
    fine_step: float | None = None,
    keep: int = 8,
    max_points: int = 2_000_000,
    max_moves: int = 50,
    snap: bool = True,
    snap_tol: float = 1e-10,
) -> tuple[np.ndarray, float]:
    """Best feasible point of ``p`` found by a grid search over ``[lo, hi]``.

    Scans the box at ``coarse_step``, then re-grids a neighbourhood of the
    ``keep`` best feasible points at a ten times finer step. At each step the
    re-gridding repeats (up to ``max_moves`` times) while the best value keeps
    improving, so the search can follow a curved constraint boundary before
    the step shrinks again. Stops once the step reaches ``fine_step``
    (default ``coarse_step / 100``).

    With ``snap`` every grid point also contributes the points where its axis
    lines meet the constraint surface (accepted up to ``snap_tol``). Without
    it a lattice point can only get within about one step of a curved
    boundary, which costs ``|grad| * step`` in objective when the minimum is
    on the boundary.

    Raises:
        ValueError: if the dimension exceeds 4 or the coarse grid is too large.
        OracleInfeasible: if no grid point is feasible.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if p.n > 4:
        raise ValueError("brute force is limited to dimension 4")
    fine_step = coarse_step / 100.0 if fine_step is None else fine_step
    npts = np.prod(np.floor((hi - lo) / coarse_step) + 1)
    if npts > max_points:
        raise ValueError(f"coarse grid would have {int(npts)} points")

    Y, obj, worst = _feasible_points(p, _grid(lo, hi, coarse_step), lo, hi, snap, snap_tol)
    if not len(Y):
        raise OracleInfeasible("no feasible grid point in the box", worst)
    step = coarse_step
    while step > fine_step * (1 + 1e-9):
        new_step = max(step / 10.0, fine_step)
        for _ in range(max_moves):
            best = obj.min()
            order = np.argsort(obj, kind="stable")[:keep]
            cand = [Y[order]]
            for c in Y[order]:
                cand.append(_grid(np.maximum(c - step, lo), np.minimum(c + step, hi), new_step))
            Y, obj, _ = _feasible_points(p, np.vstack(cand), lo, hi, snap, snap_tol)
            if not obj.min() < best:
                break
        step = new_step
    i = int(np.argmin(obj))
    return Y[i].copy(), float(obj[i])
