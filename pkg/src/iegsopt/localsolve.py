"""Solvers for the convex agent subproblems.

* :func:`solve_box` - separable quadratic over a box (closed form).
* :func:`solve_eq_qp` - diagonal QP with linear equalities (KKT solve).
* :func:`solve_convex_qcqp` - diagonal QP with linear equalities, linear
  inequalities and convex quadratic inequalities, by primal-dual Newton
  steps along the log-barrier central path.

Problems here are tiny and dense; the interior-point kernel is compiled
with numba because it runs once per gas agent per ADMM iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .formulation import QuadConstraint

__all__ = [
    "BoxQp",
    "EqQp",
    "ConvexQcqp",
    "ConvexQcqpSolver",
    "BarrierInfo",
    "LocalSolveError",
    "solve_box",
    "solve_eq_qp",
    "eq_qp_operator",
    "solve_convex_qcqp",
    "phase_one",
]


class LocalSolveError(RuntimeError):
    """A local subproblem could not be solved."""


@dataclass
class BoxQp:
    """``minimize sum(0.5 * h * x**2 + f * x)`` subject to ``lo <= x <= hi``."""

    h: np.ndarray
    f: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class EqQp:
    """``minimize 0.5 y'diag(h)y + f'y`` subject to ``G y = g``."""

    h: np.ndarray
    f: np.ndarray
    G: np.ndarray
    g: np.ndarray


@dataclass
class ConvexQcqp:
    """Diagonal QP with equalities, linear and convex quadratic inequalities.

    ``minimize 0.5 y'diag(h)y + f'y`` subject to ``A y = b``, ``G y <= g`` and
    ``c(y) <= 0`` for every :class:`QuadConstraint` in ``quad``.
    """

    h: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    g: np.ndarray
    quad: list[QuadConstraint] = field(default_factory=list)

    def __post_init__(self):
        for k, qc in enumerate(self.quad):
            if not qc.is_convex:
                raise ValueError(f"quadratic row {k} is not convex")

    @property
    def n(self) -> int:
        return len(self.f)

    def objective(self, y: np.ndarray) -> float:
        return float(0.5 * self.h @ (y * y) + self.f @ y)

    def inequalities(self, y: np.ndarray) -> np.ndarray:
        lin = self.G @ y - self.g
        quad = [qc.value(y) for qc in self.quad]
        return np.concatenate([lin, quad])


def solve_box(p: BoxQp) -> np.ndarray:
    """Coordinate-wise minimizer: the stationary point clipped to the box.

    Raises:
        ValueError: if some ``lo > hi`` or a curvature is negative.
    """
    h, f, lo, hi = (np.asarray(a, dtype=float) for a in (p.h, p.f, p.lo, p.hi))
    if np.any(lo > hi):
        raise ValueError("box has lo > hi")
    if np.any(h < 0):
        raise ValueError("negative curvature in box QP")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(h > 0, -f / h, np.where(f > 0, -np.inf, np.where(f < 0, np.inf, 0.0)))
    return np.clip(x, lo, hi)


def _kkt_solve(h: np.ndarray, G: np.ndarray, rhs_top: np.ndarray, rhs_bot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, m = len(h), G.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = np.diag(h) if h.ndim == 1 else h
    K[:n, n:] = G.T
    K[n:, :n] = G
    sol = np.linalg.solve(K, np.concatenate([rhs_top, rhs_bot]))
    return sol[:n], sol[n:]


def _check_rank(G: np.ndarray) -> None:
    if G.shape[0] and np.linalg.matrix_rank(G) < G.shape[0]:
        raise LocalSolveError("equality rows are rank deficient (missing reference bus or duplicated row?)")


def solve_eq_qp(p: EqQp) -> np.ndarray:
    """Exact minimizer through the symmetric KKT system.

    Raises:
        LocalSolveError: if the equality rows are linearly dependent or the
            KKT residual is not small.
    """
    h = np.asarray(p.h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("EqQp needs a positive definite diagonal")
    G = np.asarray(p.G, dtype=float).reshape(-1, len(h))
    _check_rank(G)
    y, w = _kkt_solve(h, G, -np.asarray(p.f, dtype=float), np.asarray(p.g, dtype=float))
    res = max(
        float(np.max(np.abs(h * y + p.f + G.T @ w), initial=0.0)),
        float(np.max(np.abs(G @ y - p.g), initial=0.0)),
    )
    scale = 1.0 + float(np.max(np.abs(p.f), initial=0.0)) + float(np.max(np.abs(p.g), initial=0.0))
    if res > 1e-10 * scale:
        raise LocalSolveError(f"KKT residual {res:.3e} too large")
    return y


def eq_qp_operator(h: np.ndarray, G: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``t -> P t + r`` giving the solution of :class:`EqQp` with ``f = -h * t``.

    Lets a caller that solves the same constraint set repeatedly (one ADMM
    agent across iterations) factor once.
    """
    h = np.asarray(h, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, len(h))
    _check_rank(G)
    n = len(h)
    if G.shape[0] == 0:
        return np.eye(n), np.zeros(n)
    HiGt = G.T / h[:, None]
    S = G @ HiGt
    K = HiGt @ np.linalg.inv(S)
    return np.eye(n) - K @ G, K @ np.asarray(g, dtype=float)


# --------------------------------------------------------------------------
# interior-point machinery


@dataclass
class BarrierInfo:
    """Diagnostics of an interior-point solve.

    ``z`` are inequality multipliers (linear rows first, then quadratic rows),
    ``nu`` the equality multipliers. ``outer`` counts barrier-weight
    reductions and ``newton`` the Newton steps (one per reduction).
    """

    z: np.ndarray
    nu: np.ndarray
    outer: int
    newton: int
    stationarity: float
    feasibility: float
    complementarity: float


@njit(cache=True)
def _row_values(y, G, g, Q, q, r):
    mi, k = G.shape[0], Q.shape[0]
    c = np.empty(mi + k)
    for i in range(mi):
        c[i] = G[i] @ y - g[i]
    for j in range(k):
        c[mi + j] = 0.5 * (y @ (Q[j] @ y)) + q[j] @ y + r[j]
    return c


@njit(cache=True)
def _row_jac(y, G, Q, q):
    mi, k, n = G.shape[0], Q.shape[0], len(y)
    J = np.empty((mi + k, n))
    J[:mi] = G
    for j in range(k):
        J[mi + j] = Q[j] @ y + q[j]
    return J


@njit(cache=True)
def _pd_kernel(h, f, A, b, G, g, Q, q, r, y0, mu0, factor, tol, max_iter):
    """Primal-dual path following on the log-barrier central path.

    Inequalities are written ``c(y) + s = 0`` with slacks ``s > 0``; each
    iteration takes one Newton step on the perturbed KKT system
    ``s_i z_i = mu`` and then sets ``mu`` to ``factor`` times the average
    complementarity. ``y0`` must satisfy the equalities.

    Returns ``(y, z, nu, iterations, status)``; status 0 converged,
    1 iteration cap.
    """
    n, me = len(y0), A.shape[0]
    mi, k = G.shape[0], Q.shape[0]
    m = mi + k
    y = y0.copy()
    s = np.maximum(-_row_values(y, G, g, Q, q, r), 1e-2)
    z = mu0 / s
    nu = np.zeros(me)
    scale = 1.0 + np.max(np.abs(f))
    status = 1
    it = 0
    K = np.zeros((n + me, n + me))
    rhs = np.empty(n + me)
    mu = mu0
    for it in range(max_iter + 1):
        c = _row_values(y, G, g, Q, q, r)
        J = _row_jac(y, G, Q, q)
        rd = h * y + f + J.T @ z
        if me:
            rd += A.T @ nu
        rs = c + s
        gap = s @ z
        if np.max(np.abs(rd)) <= tol * scale and np.max(np.abs(rs)) <= tol and gap <= tol * scale:
            status = 0
            break
        if it == max_iter:
            break
        if it > 0:
            mu = factor * gap / m
        H = np.diag(h.copy())
        for j in range(k):
            H += z[mi + j] * Q[j]
        w = z / s
        H += J.T @ (J * w[:, None])
        K[:n, :n] = H
        if me:
            K[:n, n:] = A.T
            K[n:, :n] = A
            rhs[n:] = b - A @ y
        rc = s * z - mu
        rhs[:n] = -rd - J.T @ ((z * rs - rc) / s)
        sol = np.linalg.solve(K, rhs)
        dy = sol[:n]
        ds = -rs - J @ dy
        dz = (-rc - z * ds) / s
        alpha = 1.0
        for i in range(m):
            if dz[i] < 0:
                alpha = min(alpha, -0.995 * z[i] / dz[i])
            if ds[i] < 0:
                alpha = min(alpha, -0.995 * s[i] / ds[i])
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if me:
            nu = nu + alpha * sol[n:]
    return y, z, nu, it, status


def _pack_rows(G, g, quad: list[QuadConstraint], n: int):
    G = np.ascontiguousarray(np.asarray(G, dtype=float).reshape(-1, n))
    g = np.ascontiguousarray(np.asarray(g, dtype=float).reshape(-1))
    k = len(quad)
    Q = np.ascontiguousarray(np.array([qc.Q for qc in quad], dtype=float).reshape(k, n, n))
    q = np.ascontiguousarray(np.array([qc.q for qc in quad], dtype=float).reshape(k, n))
    r = np.array([qc.r for qc in quad], dtype=float).reshape(k)
    return G, g, Q, q, r


class ConvexQcqpSolver:
    """Interior-point solver for a fixed constraint set.

    The constraint data are packed once and a strictly feasible start is
    found once by :meth:`interior_point`; :meth:`solve` then only takes the
    objective ``0.5 y'diag(h)y + f'y``. Every solve starts cold from the same
    interior point, so results do not depend on call history.

    Raises:
        ValueError: if a quadratic row is not convex.
        LocalSolveError: if the equality rows are rank deficient.
    """

    def __init__(self, A, b, G, g, quad: list[QuadConstraint], n: int):
        for k, qc in enumerate(quad):
            if not qc.is_convex:
                raise ValueError(f"quadratic row {k} is not convex")
        self.n = n
        self.A = np.ascontiguousarray(np.asarray(A, dtype=float).reshape(-1, n))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        _check_rank(self.A)
        self.G, self.g, self.Q, self.q, self.r = _pack_rows(G, g, quad, n)
        self.m = self.G.shape[0] + len(quad)
        self._start: np.ndarray | None = None

    @classmethod
    def from_problem(cls, p: ConvexQcqp) -> "ConvexQcqpSolver":
        return cls(p.A, p.b, p.G, p.g, p.quad, p.n)

    def values(self, y: np.ndarray) -> np.ndarray:
        return _row_values(np.asarray(y, dtype=float), self.G, self.g, self.Q, self.q, self.r)

    def interior_point(self, margin: float = 1.0) -> np.ndarray:
        if self._start is None:
            self._start = _phase_one(self, margin)
        return self._start

    def solve(
        self,
        h: np.ndarray,
        f: np.ndarray,
        start: np.ndarray | None = None,
        mu0: float = 1.0,
        factor: float = 0.2,
        tol: float = 1e-11,
        max_iter: int = 200,
        full_output: bool = False,
    ):
        h = np.ascontiguousarray(h, dtype=float)
        f = np.ascontiguousarray(f, dtype=float)
        y = solve_eq_qp(EqQp(h, f, self.A, self.b))
        z, its = np.zeros(self.m), 0
        if self.m == 0 or np.all(self.values(y) <= 0.0):
            # no inequality binds with a positive multiplier
            nu = np.linalg.lstsq(self.A.T, -(h * y + f), rcond=None)[0] if len(self.b) else np.zeros(0)
        else:
            y0 = self.interior_point() if start is None else np.asarray(start, dtype=float)
            if np.any(self.values(y0) >= 0):
                raise LocalSolveError("start point is not strictly feasible")
            y, z, nu, its, status = _pd_kernel(
                h, f, self.A, self.b, self.G, self.g, self.Q, self.q, self.r,
                np.ascontiguousarray(y0), float(mu0), float(factor), float(tol), int(max_iter),
            )
            if status != 0:
                raise LocalSolveError(f"interior-point solve hit the iteration cap ({its} steps)")
        if not full_output:
            return y
        c = self.values(y)
        J = _row_jac(y, self.G, self.Q, self.q)
        stat = h * y + f + J.T @ z + (self.A.T @ nu if len(nu) else 0.0)
        info = BarrierInfo(
            z=z,
            nu=nu,
            outer=its,
            newton=its,
            stationarity=float(np.max(np.abs(stat), initial=0.0)),
            feasibility=float(max(np.max(c, initial=0.0), np.max(np.abs(self.A @ y - self.b), initial=0.0))),
            complementarity=float(np.max(np.abs(z * c), initial=0.0)),
        )
        return y, info


def _phase_one(s: ConvexQcqpSolver, margin: float) -> np.ndarray:
    """Strictly feasible point by minimizing a common slack ``t``.

    Solves ``min t`` over ``c_i(y) <= t``, ``t >= -margin`` and the
    equalities, with a tiny proximal term to keep the Newton system regular.
    """
    n, A, b = s.n, s.A, s.b
    if A.shape[0]:
        y0 = np.linalg.lstsq(A, b, rcond=None)[0]
        if np.max(np.abs(A @ y0 - b), initial=0.0) > 1e-9 * (1 + np.abs(b).max(initial=0)):
            raise LocalSolveError("equality rows are inconsistent")
    else:
        y0 = np.zeros(n)
    if s.m == 0:
        return y0
    c0 = s.values(y0)
    if np.all(c0 < -1e-6):
        return y0
    mi, k = s.G.shape[0], s.Q.shape[0]
    G = np.zeros((mi + 1, n + 1))
    G[:mi, :n] = s.G
    G[:mi, n] = -1.0
    G[mi, n] = -1.0
    g = np.r_[s.g, margin]
    Q = np.zeros((k, n + 1, n + 1))
    Q[:, :n, :n] = s.Q
    q = np.zeros((k, n + 1))
    q[:, :n] = s.q
    q[:, n] = -1.0
    Ae = np.ascontiguousarray(np.hstack([A, np.zeros((A.shape[0], 1))]))
    reg = 1e-6
    h = np.full(n + 1, reg)
    f = np.r_[-reg * y0, 1.0]
    v0 = np.r_[y0, float(np.max(c0)) + 1.0]
    v, _, _, its, status = _pd_kernel(h, f, Ae, b, G, g, Q, q, s.r, v0, 1.0, 0.2, 1e-9, 200)
    y = v[:n]
    vals = s.values(y)
    if np.max(vals) >= 0:
        k_bad = int(np.argmax(vals))
        raise LocalSolveError(f"no strictly feasible point: row {k_bad} stays at {vals[k_bad]:.3e}")
    return y


def phase_one(p: ConvexQcqp, margin: float = 1.0) -> np.ndarray:
    """Find ``y`` with ``A y = b`` and every inequality row strictly negative.

    Raises:
        LocalSolveError: if no such point exists.
    """
    return ConvexQcqpSolver.from_problem(p).interior_point(margin)


def solve_convex_qcqp(
    p: ConvexQcqp,
    start: np.ndarray | None = None,
    mu0: float = 1.0,
    factor: float = 0.2,
    tol: float = 1e-11,
    max_iter: int = 200,
    full_output: bool = False,
):
    """Minimize ``p`` by primal-dual path following on the log-barrier central path.

    Args:
        p: The problem.
        start: A strictly feasible point satisfying the equalities; found by
            :func:`phase_one` when omitted.
        mu0, factor: Initial barrier weight and the reduction applied to the
            average complementarity at each step.
        tol: Stop when the stationarity residual and the duality gap are both
            below ``tol * (1 + max|f|)``.
        max_iter: Cap on Newton steps.
        full_output: Also return a :class:`BarrierInfo`.

    Raises:
        LocalSolveError: if no strictly feasible start exists or the
            iteration fails.
    """
    return ConvexQcqpSolver.from_problem(p).solve(
        p.h, p.f, start=start, mu0=mu0, factor=factor, tol=tol, max_iter=max_iter, full_output=full_output
    )
