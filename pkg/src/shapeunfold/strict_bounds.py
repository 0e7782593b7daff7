"""Shape-constrained strict-bounds confidence envelopes.

For each true bin ``k`` the lower bound on ``lambda_k`` is the value of a
finite-dimensional dual program in ``nu_tilde = [nu_plus, nu_minus]``::

    maximize (D^T y_tilde - l_tilde) @ nu_tilde   subject to  shape rows <= +b_k

and the upper bound is minus the value of the same objective maximized under
``shape rows <= -b_k``.  Any feasible point gives a valid bound, which is what
makes it safe to stop at a repaired, possibly suboptimal point.

Every constraint row has nonnegative coefficients on ``nu_plus`` and
nonpositive ones on ``nu_minus``; shrinking ``nu_plus`` and growing
``nu_minus`` therefore only ever helps feasibility.  The repair step relies on
this.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from ._exceptions import DomainError, RepairFailure
from .lp import FEAS_TOL, LinearProgram, check_feasibility, solve_lp

logger = logging.getLogger(__name__)

DEFAULT_U = {"p": 30.0, "d": 15.0, "c": 10.0}
LINEAR_PARABOLA_EPS = 1e-14


class Family(str, Enum):
    POSITIVE = "p"
    DECREASING = "d"
    CONVEX = "c"


class Mode(str, Enum):
    CONSERVATIVE = "conservative"
    GRID = "grid"


class Direction(str, Enum):
    LOWER = "lower"
    UPPER = "upper"


def _sign(direction):
    return 1.0 if Direction(direction) is Direction.LOWER else -1.0


def _bin_limits(true_edges, k):
    p = len(true_edges) - 1
    if not 0 <= k < p:
        raise DomainError(f"bin index {k} outside 0..{p - 1}")
    return true_edges[k], true_edges[k + 1], k == p - 1


def bounding_function(family, t, true_edges, k):
    """Right-hand side ``L_k(t)`` of the lower-bound dual constraint for bin `k`."""
    family = Family(family)
    lo, hi, last = _bin_limits(true_edges, k)
    t = np.asarray(t, dtype=float)
    w = hi - lo
    if family is Family.POSITIVE:
        inside = (t >= lo) & ((t <= hi) if last else (t < hi))
        return inside.astype(float)
    if family is Family.DECREASING:
        return np.clip(t - lo, 0.0, w)
    below = t < lo
    mid = (t >= lo) & (t < hi)
    return np.where(below, 0.0, np.where(mid, 0.5 * (t - lo) ** 2, 0.5 * w * w + w * (t - hi)))


def objective_vector(box):
    """``D^T y_tilde - l_tilde`` for ``nu_tilde = [nu_plus, nu_minus]``."""
    return np.concatenate([box.center - box.half_width, -box.center - box.half_width])


def _split(A_pos, A_neg):
    return np.hstack([A_pos, -A_neg])


def constraint_rows(family, mode, tables, k):
    """Constraint matrix and lower-direction rhs for bin `k` (upper uses ``-b``)."""
    family, mode = Family(family), Mode(mode)
    t = tables.t
    edges = tables.true_edges
    if family is Family.POSITIVE:
        if mode is Mode.CONSERVATIVE:
            return _split(tables.rho_hi, tables.rho_lo), bounding_function(family, t[:-1], edges, k)
        return _split(tables.kb, tables.kb), bounding_function(family, t, edges, k)
    if family is Family.DECREASING:
        if mode is Mode.CONSERVATIVE:
            h = tables.steps[:, None]
            A = _split(tables.ks[:-1] + h * tables.rho_hi, tables.ks[:-1] + h * tables.rho_lo)
            return A, bounding_function(family, t[1:], edges, k)
        return _split(tables.ks, tables.ks), bounding_function(family, t, edges, k)
    lo, hi, _ = _bin_limits(edges, k)
    A = np.vstack([_split(tables.kss, tables.kss), _split(tables.ks[-1:], tables.ks[-1:])])
    b = np.concatenate([bounding_function(family, t, edges, k), [hi - lo]])
    return A, b


def build_dual_program(family, direction, k, tables, box, U=None, mode=Mode.CONSERVATIVE):
    """Linear program whose feasible points bound ``lambda_k`` in `direction`.

    For the convex family the program is always the grid discretization.  The
    conservative convex bound adds linear Taylor rows and vertex cuts to it
    and finishes with :func:`repair_feasibility` against
    :func:`conservative_c_violation`.
    """
    family = Family(family)
    if box.n != tables.n:
        raise DomainError(f"box has {box.n} bins but tables have {tables.n}")
    U = DEFAULT_U[family.value] if U is None else float(U)
    A, b = constraint_rows(family, mode, tables, k)
    return LinearProgram(objective_vector(box), A, _sign(direction) * b, U)


def parabola_coefficients(nu_tilde, k, direction, tables):
    """Global-coordinate coefficients ``(a, b, c)`` of the convexity slack parabolas.

    On ``[t_i, t_{i+1})`` the conservative convexity constraint requires
    ``a_i t^2 + b_i t + c_i >= 0``.  Returned arrays have length m.
    """
    A_i, B_i, C_i = _taylor_terms(nu_tilde, tables)
    s = _sign(direction)
    lo, hi, _ = _bin_limits(tables.true_edges, k)
    ti = tables.t[:-1]
    below, above = ti < lo, ti >= hi
    mid = ~below & ~above
    a = -A_i + np.where(mid, 0.5 * s, 0.0)
    b = 2 * A_i * ti - B_i + np.where(mid, -s * lo, np.where(above, s * (hi - lo), 0.0))
    c = (-A_i * ti ** 2 + B_i * ti - C_i
         + np.where(mid, 0.5 * s * lo ** 2, np.where(above, s * 0.5 * (lo ** 2 - hi ** 2), 0.0)))
    return a, b, c


def _taylor_terms(nu_tilde, tables):
    n = tables.n
    nu_p, nu_m = nu_tilde[:n], nu_tilde[n:]
    nu = nu_p - nu_m
    A_i = 0.5 * (tables.rho_hi @ nu_p - tables.rho_lo @ nu_m)
    B_i = tables.ks[:-1] @ nu
    C_i = tables.kss[:-1] @ nu
    return A_i, B_i, C_i


def _parabola_slack(nu_tilde, k, direction, tables):
    """Per-subinterval local parabola ``q(u) = +-L_C(t_i + u) - upper Taylor bound``."""
    s = _sign(direction)
    lo, hi, _ = _bin_limits(tables.true_edges, k)
    A_i, B_i, C_i = _taylor_terms(nu_tilde, tables)
    ti = tables.t[:-1]
    h = tables.steps
    # local expansion of s * L_C around t_i
    L0 = s * bounding_function(Family.CONVEX, ti, tables.true_edges, k)
    L1 = s * np.where(ti < lo, 0.0, np.where(ti < hi, ti - lo, hi - lo))
    L2 = s * np.where((ti >= lo) & (ti < hi), 0.5, 0.0)
    qa, qb, qc = L2 - A_i, L1 - B_i, L0 - C_i
    q_end = qa * h * h + qb * h + qc
    degenerate = np.abs(qa) < LINEAR_PARABOLA_EPS * np.maximum(np.maximum(np.abs(qb), np.abs(qc)), 1.0)
    safe_a = np.where(degenerate, 1.0, qa)
    u_star = np.where(degenerate, -1.0, -qb / (2.0 * safe_a))
    interior = ~degenerate & (u_star > 0) & (u_star < h)
    q_vertex = np.where(interior, qc - qb * qb / (4.0 * safe_a), np.inf)
    scale = np.maximum.reduce([np.abs(L0) + np.abs(L1) * h + np.abs(L2) * h * h,
                               np.abs(C_i) + np.abs(B_i) * h + np.abs(A_i) * h * h,
                               np.ones_like(h)])
    return q_end / scale, q_vertex / scale, np.where(interior, u_star, np.nan)


def conservative_c_violation(nu_tilde, k, direction, tables):
    """Worst scaled violation of the conservative convexity constraints.

    Checks, on every subinterval, the Taylor upper parabola against ``+-L_C``
    at the right endpoint and at an interior vertex, plus the boundary row on
    ``nu . k*(T_max)``.  Parabolas are evaluated in local coordinates
    ``u = t - t_i`` to avoid cancellation; they equal the ones from
    :func:`parabola_coefficients`.
    """
    nu_tilde = np.asarray(nu_tilde, dtype=float)
    if np.any(nu_tilde < 0):
        return float(-nu_tilde.min())
    q_end, q_vertex, _ = _parabola_slack(nu_tilde, k, direction, tables)
    worst = float(np.max(-np.minimum(q_end, q_vertex)))
    lo, hi, _ = _bin_limits(tables.true_edges, k)
    ks_end = tables.ks[-1]
    n = tables.n
    row_norm = max(float(np.abs(ks_end).max()), 1e-300)
    boundary = (ks_end @ (nu_tilde[:n] - nu_tilde[n:]) - _sign(direction) * (hi - lo)) / row_norm
    return max(worst, float(boundary))


def taylor_rows(tables, k, direction, idx, u):
    """Linear rows ``Taylor bound at t_i + u <= +-L_C(t_i + u)`` for subintervals `idx`.

    For fixed offsets these are linear in ``nu_tilde`` and imply the
    conservative convexity constraint at those points.
    """
    idx = np.asarray(idx, dtype=int)
    u = np.asarray(u, dtype=float)[:, None]
    base = tables.kss[idx] + tables.ks[idx] * u
    A = np.hstack([base + 0.5 * tables.rho_hi[idx] * u * u,
                   -(base + 0.5 * tables.rho_lo[idx] * u * u)])
    b = _sign(direction) * bounding_function(Family.CONVEX, tables.t[idx] + u[:, 0],
                                             tables.true_edges, k)
    return A, b


def _solve_conservative_c(prog, k, direction, tables, tol, method, max_rounds=4):
    """Grid LP tightened by Taylor rows at the right endpoints plus vertex cuts.

    A few cutting rounds leave only small vertex violations, which the
    scaling repair then removes at negligible cost in tightness.
    """
    m = tables.m
    A_end, b_end = taylor_rows(tables, k, direction, np.arange(m), tables.steps)
    A = np.vstack([prog.A, A_end])
    b = np.concatenate([prog.b, b_end])
    sol = None
    for _ in range(max_rounds):
        sol = solve_lp(LinearProgram(prog.c, A, b, prog.upper), method=method, tol=tol)
        if sol.x is None:
            return sol
        _, q_vertex, u_star = _parabola_slack(sol.x, k, direction, tables)
        bad = np.flatnonzero(q_vertex < -tol)
        if bad.size == 0:
            break
        A_cut, b_cut = taylor_rows(tables, k, direction, bad, u_star[bad])
        A = np.vstack([A, A_cut])
        b = np.concatenate([b, b_cut])
    return sol


def _shrink(nu_tilde, eta):
    n = nu_tilde.size // 2
    out = nu_tilde.copy()
    out[:n] *= max(1.0 - eta, 0.0)
    out[n:] *= 1.0 + eta
    return out


@dataclass
class RepairResult:
    nu_tilde: np.ndarray
    iterations: int
    eta: float


def repair_feasibility(nu_tilde, violation, tol=FEAS_TOL, max_iters=200, eta0=1e-8,
                       refine_steps=30):
    """Scale ``nu_plus`` down and ``nu_minus`` up until `violation` is within `tol`.

    The scale ``eta`` doubles from `eta0` until the point is feasible; because
    feasibility is monotone in ``eta`` the first feasible ``eta`` is then
    tightened by bisection against the last infeasible one.  Raises
    :class:`RepairFailure` when `max_iters` doublings do not suffice.
    """
    nu_tilde = np.asarray(nu_tilde, dtype=float)
    if violation(nu_tilde) <= tol:
        return RepairResult(nu_tilde, 0, 0.0)
    eta_bad, eta = 0.0, eta0
    for it in range(1, max_iters + 1):
        cand = _shrink(nu_tilde, eta)
        if violation(cand) <= tol:
            for _ in range(refine_steps):
                mid = 0.5 * (eta_bad + eta)
                trial = _shrink(nu_tilde, mid)
                if violation(trial) <= tol:
                    eta, cand = mid, trial
                else:
                    eta_bad = mid
            return RepairResult(cand, it, eta)
        eta_bad = eta
        eta *= 2.0
        if not np.all(np.isfinite(_shrink(nu_tilde, eta))):
            break
    raise RepairFailure(f"no feasible point after {it} scaling steps")


@dataclass
class BinBound:
    value: float
    status: str
    repair_iterations: int = 0
    nu_tilde: np.ndarray | None = None
    warnings: list = field(default_factory=list)


def bound_bin(family, direction, k, tables, box, U=None, mode=Mode.CONSERVATIVE,
              tol=FEAS_TOL, method="highs"):
    """One endpoint of the confidence interval for true bin `k`.

    The LP optimum is re-audited and, if needed, repaired.  When no feasible
    point can be produced the lower bound falls back to 0 (``nu_tilde = 0``
    is always feasible there) and the upper bound to ``+inf``.
    """
    family, mode, direction = Family(family), Mode(mode), Direction(direction)
    prog = build_dual_program(family, direction, k, tables, box, U, mode)
    if family is Family.CONVEX and mode is Mode.CONSERVATIVE:
        sol = _solve_conservative_c(prog, k, direction, tables, tol, method)

        def violation(x):
            return conservative_c_violation(x, k, direction, tables)
    else:
        sol = solve_lp(prog, method=method, tol=tol)

        def violation(x):
            return max(check_feasibility(x, prog), float(-x.min()))

    notes = []
    if sol.x is None:
        return _fallback(direction, f"lp {sol.status.value}", notes)
    try:
        rep = repair_feasibility(sol.x, violation, tol=tol)
    except RepairFailure as exc:
        return _fallback(direction, f"repair failed: {exc}", notes)
    x = rep.nu_tilde
    if np.any(x >= (1 - 1e-6) * prog.upper):
        notes.append("box bound U active; bound valid but may be loose")
    value = float(prog.c @ x)
    status = sol.status.value if rep.iterations == 0 else f"{sol.status.value}+repaired"
    if direction is Direction.LOWER:
        return BinBound(max(value, 0.0), status, rep.iterations, x, notes)
    return BinBound(-value, status, rep.iterations, x, notes)


def _fallback(direction, reason, notes):
    notes.append(reason)
    if direction is Direction.LOWER:
        return BinBound(0.0, "fallback_zero", 0, None, notes)
    return BinBound(math.inf, "no_feasible_point", 0, None, notes)


@dataclass
class ConfidenceEnvelope:
    """Simultaneous intervals ``[lower_k, upper_k]`` for the binned true means."""

    lower: np.ndarray
    upper: np.ndarray
    level: float
    family: Family
    mode: Mode
    true_edges: tuple
    diagnostics: list = field(default_factory=list)

    @property
    def conservative(self):
        return self.mode is Mode.CONSERVATIVE

    @property
    def lengths(self):
        return self.upper - self.lower

    def covers(self, lam):
        lam = np.asarray(lam, dtype=float)
        return bool(np.all((self.lower <= lam) & (lam <= self.upper)))

    def covers_each(self, lam):
        lam = np.asarray(lam, dtype=float)
        return (self.lower <= lam) & (lam <= self.upper)

    @property
    def status(self):
        """Per-bin ``lower/upper`` solver status; grid mode is marked non-conservative."""
        tag = "" if self.conservative else ";nonconservative"
        return [f"{d['lower'].status}/{d['upper'].status}{tag}" for d in self.diagnostics]

    def to_csv(self, path, lambda_true=None):
        return write_interval_csv(path, self.true_edges, self.lower, self.upper, self.status,
                                  lambda_true=lambda_true)


def envelope(family, tables, box, U=None, mode=Mode.CONSERVATIVE, tol=FEAS_TOL, method="highs"):
    """Bound every true bin in both directions; failures degrade single bins only."""
    family, mode = Family(family), Mode(mode)
    p = len(tables.true_edges) - 1
    lower = np.empty(p)
    upper = np.empty(p)
    diags = []
    for k in range(p):
        lo = bound_bin(family, Direction.LOWER, k, tables, box, U, mode, tol, method)
        hi = bound_bin(family, Direction.UPPER, k, tables, box, U, mode, tol, method)
        lower[k], upper[k] = lo.value, hi.value
        if lo.value > hi.value:
            hi.warnings.append("lower exceeds upper: data inconsistent with the shape family")
        diags.append({"lower": lo, "upper": hi})
    return ConfidenceEnvelope(lower, upper, 1.0 - box.alpha, family, mode,
                              tuple(tables.true_edges), diags)


def _fmt(v):
    return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(float(v)))


def write_interval_csv(path, true_edges, lower, upper, status, lambda_true=None, extra=None):
    """Per-bin intervals as CSV; infinities are written as ``inf``."""
    edges = list(true_edges)
    extra = extra or {}
    header = ["bin_lo_gev", "bin_hi_gev", "lambda_true", "lower", "upper", "status", *extra]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(edges) - 1):
            lam = "" if lambda_true is None else _fmt(lambda_true[k])
            w.writerow([_fmt(edges[k]), _fmt(edges[k + 1]), lam, _fmt(lower[k]), _fmt(upper[k]),
                        status[k], *[extra[c] for c in extra]])
    return Path(path)
