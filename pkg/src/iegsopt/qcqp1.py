"""Exact solver for quadratic programs with a single quadratic constraint.

Problems have the form::

    minimize    0.5 y'A0 y + b0'y + c0
    subject to  0.5 y'A1 y + b1'y + c1 <= 0

with ``A0`` positive definite and ``A1`` symmetric (typically indefinite).
Strong duality holds whenever a strictly feasible point exists, so the
global minimizer is recovered from the one-dimensional concave dual

    q(v) = c0 + v c1 - 0.5 b(v)' (A0 + v A1)^{-1} b(v),   b(v) = b0 + v b1,

maximized over ``v >= 0`` with ``A0 + v A1`` positive semidefinite.

All work happens in the basis that diagonalizes the pencil ``(A1, A0)``:
``V' A0 V = I`` and ``V' A1 V = diag(lam)``, where the dual, its derivatives
and the primal candidate are closed-form sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

__all__ = [
    "Qcqp1Problem",
    "DualSolution",
    "Qcqp1Error",
    "build_pipe_subproblem",
    "dual_value",
    "solve_dual",
    "recover_primal",
    "duality_gap",
    "sdp_block",
    "sdp_min_eig",
    "solve",
]


class Qcqp1Error(RuntimeError):
    """The subproblem is degenerate or infeasible; carries diagnostics."""


@dataclass(frozen=True, eq=False)
class Qcqp1Problem:
    A0: np.ndarray
    b0: np.ndarray
    c0: float
    A1: np.ndarray
    b1: np.ndarray
    c1: float = 0.0

    def __post_init__(self):
        n = len(self.b0)
        if self.A0.shape != (n, n) or self.A1.shape != (n, n) or self.b1.shape != (n,):
            raise ValueError("inconsistent Qcqp1Problem dimensions")
        if not (np.allclose(self.A0, self.A0.T) and np.allclose(self.A1, self.A1.T)):
            raise ValueError("A0 and A1 must be symmetric")

    @property
    def n(self) -> int:
        return len(self.b0)

    def objective(self, y: np.ndarray) -> float:
        return float(0.5 * y @ self.A0 @ y + self.b0 @ y + self.c0)

    def constraint(self, y: np.ndarray) -> float:
        return float(0.5 * y @ self.A1 @ y + self.b1 @ y + self.c1)

    @cached_property
    def _pencil(self):
        lam, V = scipy.linalg.eigh(self.A1, self.A0)
        return lam, V, V.T @ self.b0, V.T @ self.b1

    @property
    def v_max(self) -> float:
        """Right end of the interval where ``A0 + v A1`` stays PSD."""
        lam_min = self._pencil[0][0]
        return -1.0 / lam_min if lam_min < 0 else math.inf

    @property
    def scale(self) -> float:
        return 1.0 + float(np.abs(self.b0).max(initial=0) + np.abs(self.b1).max(initial=0))


@dataclass(frozen=True)
class DualSolution:
    """Dual maximizer ``v`` with dual value ``gamma``.

    ``hard_case`` marks a maximizer at the PSD boundary where the primal needs
    a null-space completion; ``min_eig`` is the smallest eigenvalue of
    ``A0 + v A1``.
    """

    v: float
    gamma: float
    hard_case: bool
    min_eig: float


def build_pipe_subproblem(agent, targets: np.ndarray, multipliers: np.ndarray, d: float) -> Qcqp1Problem:
    """Augmented-Lagrangian block of a pipeline agent as a :class:`Qcqp1Problem`.

    Each local copy ``y_j`` contributes ``lam_j (t_j - y_j) + d/2 (t_j - y_j)**2``
    where ``t_j`` is the anchored original; expanding gives ``A0 = d I``,
    ``b0 = -(d t + lam)`` and ``c0 = lam't + d/2 |t|**2``.
    """
    if not d > 0:
        raise ValueError(f"penalty d must be positive, got {d}")
    if len(agent.quad) != 1:
        raise ValueError(f"agent {agent.name} must carry exactly one quadratic constraint")
    t = np.asarray(targets, dtype=float)
    lam = np.asarray(multipliers, dtype=float)
    qc = agent.quad[0]
    n = len(t)
    return Qcqp1Problem(
        A0=d * np.eye(n),
        b0=-(d * t + lam),
        c0=float(lam @ t + 0.5 * d * t @ t),
        A1=qc.Q,
        b1=qc.q,
        c1=float(qc.r),
    )


# --------------------------------------------------------------------------
# dual function in the pencil basis

# null-space part of b0 + v b1 below which the boundary point is a hard case
_HARD_TOL = 1e-12


def _z(p: Qcqp1Problem, v: float) -> np.ndarray:
    lam, _, beta0, beta1 = p._pencil
    return -(beta0 + v * beta1) / (1.0 + v * lam)


def _dq(p: Qcqp1Problem, v: float) -> tuple[float, float]:
    """First and second derivative of the dual at ``v`` (interior of the domain)."""
    lam, _, _, beta1 = p._pencil
    z = _z(p, v)
    g = 0.5 * lam @ (z * z) + beta1 @ z + p.c1
    h = -np.sum((lam * z + beta1) ** 2 / (1.0 + v * lam))
    return float(g), float(h)


def dual_value(p: Qcqp1Problem, v: float) -> float:
    """Dual function ``q(v)``; ``-inf`` outside the PSD interval."""
    lam, _, beta0, beta1 = p._pencil
    if v < 0 or v > p.v_max:
        return -math.inf
    beta = beta0 + v * beta1
    den = 1.0 + v * lam
    tiny = den <= 1e-14
    if np.any(tiny & (np.abs(beta) > _HARD_TOL * p.scale)):
        return -math.inf
    den = np.where(tiny, 1.0, den)
    beta = np.where(tiny, 0.0, beta)
    return float(p.c0 + v * p.c1 - 0.5 * np.sum(beta * beta / den))


def _null_mask(p: Qcqp1Problem) -> np.ndarray:
    lam = p._pencil[0]
    return np.abs(1.0 + p.v_max * lam) <= 1e-12 * (1.0 + np.abs(p.v_max * lam))


def _boundary_z(p: Qcqp1Problem) -> np.ndarray:
    """Minimum-norm limit of the primal candidate as ``v`` approaches ``v_max``."""
    lam, _, beta0, beta1 = p._pencil
    vm = p.v_max
    null = _null_mask(p)
    z = np.empty_like(lam)
    z[~null] = -(beta0[~null] + vm * beta1[~null]) / (1.0 + vm * lam[~null])
    # beta vanishes at vm along the null directions, leaving a finite limit
    z[null] = -beta1[null] / lam[null]
    return z


def _boundary_value(p: Qcqp1Problem) -> float:
    """``q(v_max)`` with the (negligible) null-space part of ``b0 + v b1`` dropped.

    This is how the hard case is classified, so the dual value has to agree
    with it; otherwise a residual of order ``1e-12`` would give ``-inf``.
    """
    lam, _, beta0, beta1 = p._pencil
    vm = p.v_max
    keep = ~_null_mask(p)
    beta = beta0[keep] + vm * beta1[keep]
    return float(p.c0 + vm * p.c1 - 0.5 * np.sum(beta * beta / (1.0 + vm * lam[keep])))


def _strictly_feasible(p: Qcqp1Problem) -> bool:
    w = np.linalg.eigvalsh(p.A1)
    if w[0] < -1e-12:
        return True
    y, *_ = np.linalg.lstsq(p.A1, -p.b1, rcond=None)
    if np.linalg.norm(p.A1 @ y + p.b1) > 1e-9 * p.scale:
        return True  # linear term not in range: constraint is unbounded below
    return p.constraint(y) < 0


def solve_dual(p: Qcqp1Problem, rtol: float = 1e-15, max_iter: int = 200) -> DualSolution:
    """Maximize the dual over its PSD interval.

    Safeguarded Newton on ``q'(v)`` with bisection fallback. The returned
    ``v`` always sits on the side of the root where the primal candidate is
    feasible.

    Raises:
        Qcqp1Error: if no strictly feasible point exists or the root cannot be
            bracketed.
    """
    if not _strictly_feasible(p):
        raise Qcqp1Error("constraint admits no strictly feasible point; strong duality not guaranteed")
    lam = p._pencil[0]

    def result(v: float, hard: bool) -> DualSolution:
        M = p.A0 + v * p.A1
        gamma = _boundary_value(p) if hard else dual_value(p, v)
        return DualSolution(v, gamma, hard, float(np.linalg.eigvalsh(M)[0]))

    g0, _ = _dq(p, 0.0)
    if g0 <= 0.0:
        return result(0.0, False)

    vmax = p.v_max
    if math.isinf(vmax):
        hi = 1.0
        while _dq(p, hi)[0] > 0.0:
            hi *= 2.0
            if hi > 1e300:
                raise Qcqp1Error("dual derivative stays positive; could not bracket the maximizer")
    else:
        _, _, beta0, beta1 = p._pencil
        null = _null_mask(p)
        beta_end = beta0[null] + vmax * beta1[null]
        if np.all(np.abs(beta_end) <= _HARD_TOL * p.scale):
            z = _boundary_z(p)
            g_end = 0.5 * lam @ (z * z) + beta1 @ z + p.c1
            if g_end >= 0.0:
                return result(vmax, True)
        hi = vmax

    lo, v = 0.0, (hi * 0.5 if math.isinf(vmax) else 0.0)
    if not math.isinf(vmax):
        v = 0.5 * hi
    for _ in range(max_iter):
        g, h = _dq(p, v)
        if g > 0.0:
            lo = v
        else:
            hi = v
        if g == 0.0 or hi - lo <= rtol * max(1.0, hi):
            break
        step = v - g / h if h < 0 else math.nan
        v = step if lo < step < hi else 0.5 * (lo + hi)
    # finish on the feasible side of the root
    v = hi if _dq(p, v)[0] > 0.0 else v
    if not math.isinf(vmax) and v >= vmax:
        v = np.nextafter(vmax, 0.0)
    return result(float(v), False)


def _completions(p: Qcqp1Problem, v: float | None = None) -> list[np.ndarray] | None:
    """Points on the constraint surface that differ only along the null direction.

    The other pencil coordinates are the stationary values at ``v`` (default
    the PSD boundary, where they are the limits of :func:`_boundary_z`); the
    null coordinate solves the scalar quadratic that makes the constraint
    active. Returns ``None`` if it has no real root.
    """
    lam, V, _, beta1 = p._pencil
    z = _boundary_z(p)
    null = np.flatnonzero(_null_mask(p))
    k = null[0]
    if v is not None:
        other = np.ones(len(z), dtype=bool)
        other[null] = False
        z[other] = _z(p, v)[other]
    # 0.5 lam_k s**2 + beta1_k s + rest = 0 in the null coordinate s
    zk = z.copy()
    zk[k] = 0.0
    rest = 0.5 * lam @ (zk * zk) + beta1 @ zk + p.c1
    a, b = 0.5 * lam[k], beta1[k]
    disc = b * b - 4.0 * a * rest
    if disc < -1e-12 * p.scale * (1.0 + b * b):
        return None
    sq = math.sqrt(max(disc, 0.0))
    out = []
    for s in ((-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)):
        zs = zk.copy()
        zs[k] = s
        out.append(V @ zs)
    return out


def _pick(p: Qcqp1Problem, cands: list[np.ndarray]) -> np.ndarray:
    # lowest objective; near-ties go to the larger first coordinate
    objs = [p.objective(y) for y in cands]
    best = min(objs)
    tied = [y for y, f in zip(cands, objs) if f <= best + 1e-12 * (1.0 + abs(best))]
    return max(tied, key=lambda y: y[0])


def recover_primal(p: Qcqp1Problem, sol: DualSolution) -> np.ndarray:
    """Global minimizer of ``p`` from its dual maximizer.

    Regular case: ``y = -(A0 + v A1)^{-1} (b0 + v b1)``. Hard case: the
    minimum-norm stationary point plus a step along the null space of
    ``A0 + v A1`` that makes the constraint active; of the two such steps the
    one with the lower objective is returned, ties going to the larger first
    coordinate.

    When ``v`` is within ``1e-6`` of the PSD boundary the regular formula is
    ill-conditioned; if its point then misses the constraint surface, the
    hard-case completions are also tried and the best feasible candidate wins.

    Raises:
        Qcqp1Error: if the hard-case completion has no real solution.
    """
    _, V, _, _ = p._pencil
    if not sol.hard_case:
        y = V @ _z(p, sol.v)
        vm = p.v_max
        if math.isinf(vm) or vm - sol.v > 1e-6 * max(1.0, vm) or abs(p.constraint(y)) <= 1e-9 * p.scale:
            return y
        cands = [y] + (_completions(p, sol.v) or [])
        feas = [c for c in cands if p.constraint(c) <= 1e-12 * p.scale]
        return _pick(p, feas or [y])
    cands = _completions(p)
    if cands is None:
        raise Qcqp1Error("hard-case completion has no real step")
    return _pick(p, cands)


def duality_gap(p: Qcqp1Problem, y: np.ndarray, sol: DualSolution, feas_tol: float = 1e-8) -> float:
    """Primal objective at ``y`` minus the dual value.

    Raises:
        ValueError: if ``y`` violates the constraint by more than ``feas_tol``.
    """
    c = p.constraint(y)
    if c > feas_tol * p.scale:
        raise ValueError(f"y is infeasible (constraint {c:.3e})")
    return p.objective(y) - sol.gamma


def sdp_block(p: Qcqp1Problem, v: float, gamma: float) -> np.ndarray:
    """Block matrix whose PSD-ness with ``v >= 0`` is equivalent to ``q(v) >= gamma``."""
    n = p.n
    M = np.empty((n + 1, n + 1))
    M[:n, :n] = p.A0 + v * p.A1
    bv = p.b0 + v * p.b1
    M[:n, n] = bv
    M[n, :n] = bv
    M[n, n] = 2.0 * (p.c0 + v * p.c1 - gamma)
    return M


def sdp_min_eig(p: Qcqp1Problem, sol: DualSolution) -> float:
    return float(np.linalg.eigvalsh(sdp_block(p, sol.v, sol.gamma))[0])


def solve(p: Qcqp1Problem) -> tuple[np.ndarray, DualSolution]:
    sol = solve_dual(p)
    return recover_primal(p, sol), sol
