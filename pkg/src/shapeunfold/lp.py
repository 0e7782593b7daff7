"""Small dense linear programs with box-bounded variables.

Every program here has the form::

    maximize    c @ x
    subject to  A @ x <= b,   0 <= x <= U

Rows are rescaled to unit infinity norm before solving; feasibility is
always re-checked on the rescaled rows so a reported ``OPTIMAL`` point meets
the tolerance regardless of what the backend believed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from ._exceptions import DomainError

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), c.shape).copy()
        if A.shape != (b.size, c.size):
            raise DomainError(f"A has shape {A.shape}, expected ({b.size}, {c.size})")
        if not np.all(np.isfinite(upper)) or np.any(upper <= 0):
            raise DomainError("variable upper bounds must be finite and positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "upper", upper)

    @property
    def n_vars(self):
        return self.c.size

    def scaled_rows(self):
        """Rows and rhs divided by each row's infinity norm (zero rows left as is)."""
        norms = np.abs(self.A).max(axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        return self.A / norms[:, None], self.b / norms


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray | None
    objective: float
    max_violation: float
    iterations: int = 0
    info: dict = field(default_factory=dict)


def check_feasibility(x, prog, scaled=True):
    """Largest violation of the row constraints and variable bounds at `x`.

    Row residuals are measured after scaling rows to unit infinity norm.  A
    value ``<= tol`` means `x` is feasible at tolerance ``tol``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != prog.c.shape:
        raise DomainError(f"x has shape {x.shape}, expected {prog.c.shape}")
    A, b = prog.scaled_rows() if scaled else (prog.A, prog.b)
    row = (A @ x - b).max(initial=-np.inf)
    bnd = max(float((-x).max()), float((x - prog.upper).max()))
    return float(max(row, bnd))


def solve_lp(prog, method="highs", tol=FEAS_TOL, max_iter=20000):
    """Maximize ``c @ x`` over the program's feasible set.

    `method` is ``"highs"`` (scipy's HiGHS dual simplex) or ``"simplex"``
    (the dense bounded-variable simplex in this module).  An ``OPTIMAL``
    result always has ``max_violation <= tol``; a backend optimum that fails
    the re-check is downgraded to ``ITERATION_LIMIT`` with its point attached.
    """
    A, b = prog.scaled_rows()
    zero = ~np.any(A != 0, axis=1)
    if np.any(zero & (b < -tol)):
        return LpSolution(Status.INFEASIBLE, None, -np.inf, np.inf)
    A, b = A[~zero], b[~zero]
    if method == "highs":
        status, x, nit = _solve_highs(prog.c, A, b, prog.upper, max_iter)
    elif method == "simplex":
        status, x, nit = _bounded_simplex(prog.c, A, b, prog.upper, max_iter=max_iter)
    else:
        raise DomainError(f"unknown LP method {method!r}")
    if x is None:
        return LpSolution(status, None, -np.inf if status is Status.INFEASIBLE else np.nan,
                          np.inf, nit)
    x = np.clip(x, 0.0, prog.upper)
    viol = check_feasibility(x, prog)
    if status is Status.OPTIMAL and viol > tol:
        logger.debug("backend optimum violates rows by %.3g; downgrading", viol)
        status = Status.ITERATION_LIMIT
    return LpSolution(status, x, float(prog.c @ x), viol, nit, {"method": method})


_HIGHS_STATUS = {0: Status.OPTIMAL, 1: Status.ITERATION_LIMIT, 2: Status.INFEASIBLE,
                 3: Status.UNBOUNDED, 4: Status.ITERATION_LIMIT}


def _solve_highs(c, A, b, upper, max_iter):
    # HiGHS is sensitive to badly scaled objectives at tight tolerances, so
    # normalize c and fall back to its default tolerances if it gives up
    cmax = np.abs(c).max(initial=0.0)
    c_scaled = c / cmax if cmax > 0 else c
    bounds = np.column_stack([np.zeros_like(upper), upper])
    res = None
    for tight in (True, False):
        opts = {"maxiter": max_iter, "presolve": True}
        if tight:
            opts.update(primal_feasibility_tolerance=1e-10, dual_feasibility_tolerance=1e-10)
        res = linprog(-c_scaled, A_ub=A if A.size else None, b_ub=b if A.size else None,
                      bounds=bounds, method="highs-ds", options=opts)
        if res.status in (0, 2, 3):
            break
    status = _HIGHS_STATUS.get(res.status, Status.ITERATION_LIMIT)
    x = res.x if res.x is not None and status is not Status.INFEASIBLE else None
    return status, x, int(getattr(res, "nit", 0) or 0)


def _bounded_simplex(c, A, b, upper, max_iter=20000, tol=1e-9):
    """Two-phase primal simplex with the upper-bounding technique.

    Structural variables live in ``[0, upper]``, slacks in ``[0, inf)``.  Rows
    with negative rhs get an artificial variable for phase one; artificials
    are then fixed at zero for phase two.
    """
    mr, n = A.shape
    neg = b < 0
    n_art = int(neg.sum())
    N = n + mr + n_art
    T = np.zeros((mr, N))
    T[:, :n] = A
    T[np.arange(mr), n + np.arange(mr)] = 1.0
    rhs = b.astype(float).copy()
    T[neg] *= -1.0
    rhs[neg] *= -1.0
    art_rows = np.flatnonzero(neg)
    T[art_rows, n + mr + np.arange(n_art)] = 1.0
    basis = n + np.arange(mr)
    basis[art_rows] = n + mr + np.arange(n_art)
    ub = np.concatenate([upper, np.full(mr, np.inf), np.full(n_art, np.inf)])
    at_upper = np.zeros(N, dtype=bool)
    beta = rhs.copy()
    state = [T, beta, basis, at_upper]
    total = 0

    if n_art:
        cost1 = np.zeros(N)
        cost1[n + mr:] = -1.0
        status, nit = _simplex_phase(state, ub, cost1, max_iter, tol)
        total += nit
        if status is not Status.OPTIMAL:
            return status, None, total
        x_full = _values(state, ub)
        if -cost1 @ x_full > tol * max(1.0, np.abs(rhs).max()):
            return Status.INFEASIBLE, None, total
        ub[n + mr:] = 0.0

    cost2 = np.zeros(N)
    cost2[:n] = c
    status, nit = _simplex_phase(state, ub, cost2, max_iter - total, tol)
    total += nit
    x_full = _values(state, ub)
    if status is Status.UNBOUNDED:
        return status, None, total
    return status, x_full[:n], total


def _values(state, ub):
    T, beta, basis, at_upper = state
    x = np.where(at_upper, ub, 0.0)
    x[basis] = beta
    return x


def _simplex_phase(state, ub, cost, max_iter, tol, piv_tol=1e-11, bland_after=50):
    T, beta, basis, at_upper = state
    mr, N = T.shape
    z = cost - cost[basis] @ T
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True
    movable = ub > 0
    stall = 0
    for it in range(max_iter):
        cand_inc = ~is_basic & ~at_upper & movable & (z > tol)
        cand_dec = ~is_basic & at_upper & (z < -tol)
        cand = cand_inc | cand_dec
        if not cand.any():
            return Status.OPTIMAL, it
        if stall >= bland_after:
            j = int(np.flatnonzero(cand)[0])
        else:
            j = int(np.argmax(np.where(cand, np.abs(z), -1.0)))
        direction = 1.0 if cand_inc[j] else -1.0
        col = T[:, j].copy()
        delta = -direction * col
        ubb = ub[basis]
        with np.errstate(divide="ignore", invalid="ignore"):
            theta_lo = np.where(delta < -piv_tol, beta / -delta, np.inf)
            theta_up = np.where((delta > piv_tol) & np.isfinite(ubb), (ubb - beta) / delta, np.inf)
        theta_rows = np.maximum(np.minimum(theta_lo, theta_up), 0.0)
        if stall >= bland_after:
            best = theta_rows.min()
            ties = np.flatnonzero(theta_rows <= best + 1e-12)
            r = int(ties[np.argmin(basis[ties])]) if ties.size else 0
        else:
            r = int(np.argmin(theta_rows)) if mr else 0
        theta = theta_rows[r] if mr else np.inf
        flip = ub[j]
        if flip <= theta:
            beta += delta * flip
            at_upper[j] = not at_upper[j]
            stall = 0 if flip > 0 else stall + 1
            continue
        if not np.isfinite(theta):
            return Status.UNBOUNDED, it
        stall = stall + 1 if theta <= 1e-12 else 0
        beta += delta * theta
        leaving = basis[r]
        at_upper[leaving] = bool(delta[r] > 0 and theta_up[r] <= theta_lo[r])
        entering_val = (ub[j] if at_upper[j] else 0.0) + direction * theta
        at_upper[j] = False
        piv = T[r, j]
        T[r] /= piv
        others = col.copy()
        others[r] = 0.0
        T -= np.outer(others, T[r])
        z -= z[j] * T[r]
        beta[r] = entering_val
        basis[r] = j
        is_basic[leaving] = False
        is_basic[j] = True
    return Status.ITERATION_LIMIT, max_iter
