"""Regularized unfolding baselines: SVD-variant Tikhonov and D'Agostini EM.

Both work in the discretized model ``y ~ Poisson(K lambda)`` and report
Gaussian error-propagation intervals, which is what makes them undercover
when the regularization bias is large.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import xlogy
from scipy.stats import norm

from ._exceptions import DomainError, NumericError
from ._validation import check_alpha, check_counts, check_positive_vector

logger = logging.getLogger(__name__)

DELTA_GRID = np.logspace(-4, 6, 41)
MAX_ITERATIONS = 20_000


def iteration_grid(max_iter=MAX_ITERATIONS, n_linear=200, n_geometric=40):
    """Candidate iteration counts: every count up to `n_linear`, then geometric."""
    lin = np.arange(1, min(n_linear, max_iter) + 1)
    if max_iter <= n_linear:
        return lin
    geo = np.geomspace(n_linear, max_iter, n_geometric).round().astype(int)
    return np.unique(np.concatenate([lin, geo]))


@dataclass
class UnfoldEstimate:
    lam: np.ndarray
    covariance: np.ndarray
    method: str
    regularization: float
    info: dict = field(default_factory=dict)

    @property
    def variance(self):
        return np.diag(self.covariance).copy()


def _check_response(K, p=None):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2:
        raise DomainError("response matrix must be 2-D")
    if not np.all(np.isfinite(K)) or np.any(K < 0):
        raise DomainError("response matrix must be finite and nonnegative")
    if p is not None and K.shape[1] != p:
        raise DomainError(f"response has {K.shape[1]} columns, expected {p}")
    return K


def second_difference(p):
    """Second-difference matrix with reflexive boundary rows."""
    if p < 2:
        raise DomainError("need at least two bins for a difference penalty")
    L = np.zeros((p, p))
    idx = np.arange(1, p - 1)
    L[idx, idx - 1] = 1.0
    L[idx, idx] = -2.0
    L[idx, idx + 1] = 1.0
    L[0, :2] = [-1.0, 1.0]
    L[-1, -2:] = [1.0, -1.0]
    return L


def _variance_weights(y):
    # zero counts get unit variance so that diag(y) stays invertible
    return 1.0 / np.maximum(y, 1.0)


def svd_pseudoinverse(K, y, lam_mc, delta):
    """``K_plus = (K^T C^-1 K + delta Lt^T Lt)^-1 K^T C^-1`` with ``C = diag(y)``."""
    if not delta >= 0:
        raise DomainError("delta must be nonnegative")
    w = _variance_weights(y)
    Lt = second_difference(K.shape[1]) / lam_mc[None, :]
    KtW = K.T * w[None, :]
    G = KtW @ K + delta * (Lt.T @ Lt)
    try:
        return linalg.solve(G, KtW, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise NumericError(f"normal matrix singular at delta={delta}") from exc


def svd_unfold(y, K, lam_mc, delta):
    """Tikhonov estimate penalizing curvature of ``lambda / lambda_mc``."""
    y = check_counts(y)
    K = _check_response(K)
    lam_mc = check_positive_vector(lam_mc, "lam_mc")
    if K.shape != (y.size, lam_mc.size):
        raise DomainError(f"K has shape {K.shape}, expected ({y.size}, {lam_mc.size})")
    Kp = svd_pseudoinverse(K, y, lam_mc, float(delta))
    lam = Kp @ y
    cov = (Kp * y[None, :]) @ Kp.T
    cov = 0.5 * (cov + cov.T)
    return UnfoldEstimate(lam, cov, "svd", float(delta), {"K_plus": Kp, "hat": K @ Kp})


def svd_cv_curve(y, K, lam_mc, deltas=DELTA_GRID):
    """Weighted leave-one-out CV for each delta via the hat-matrix shortcut."""
    y = check_counts(y)
    K = _check_response(K)
    lam_mc = check_positive_vector(lam_mc, "lam_mc")
    w = _variance_weights(y)
    out = np.empty(len(deltas))
    for d, delta in enumerate(deltas):
        H = K @ svd_pseudoinverse(K, y, lam_mc, float(delta))
        h = np.diag(H)
        if np.any(h >= 1.0):
            raise NumericError(f"leverage >= 1 at delta={delta}")
        out[d] = np.sum(w * ((y - H @ y) / (1.0 - h)) ** 2)
    return out


def svd_cv_explicit(y, K, lam_mc, delta):
    """The same CV value by refitting with each smeared bin removed."""
    y = check_counts(y)
    K = _check_response(K)
    w = _variance_weights(y)
    total = 0.0
    for i in range(y.size):
        keep = np.arange(y.size) != i
        Kp = svd_pseudoinverse(K[keep], y[keep], lam_mc, float(delta))
        total += w[i] * (y[i] - K[i] @ (Kp @ y[keep])) ** 2
    return total


def poisson_loglik(y, mu):
    """Poisson log-likelihood up to the ``log y!`` constant."""
    return float(np.sum(xlogy(y, mu) - mu))


def dagostini(y, K, lam_start, n_iter, track_loglik=False):
    """`n_iter` EM steps from `lam_start` with the linearized covariance."""
    y = check_counts(y)
    K = _check_response(K)
    lam = check_positive_vector(lam_start, "lam_start").copy()
    if K.shape != (y.size, lam.size):
        raise DomainError(f"K has shape {K.shape}, expected ({y.size}, {lam.size})")
    n_iter = int(n_iter)
    if n_iter < 0:
        raise DomainError("n_iter must be nonnegative")
    eps = K.sum(axis=0)
    if np.any(eps <= 0):
        raise DomainError("every true bin needs positive efficiency")
    J = np.zeros((lam.size, y.size))
    logliks = []
    for _ in range(n_iter):
        mu = K @ lam
        if np.any(mu <= 0):
            raise NumericError("EM denominator vanished")
        if track_loglik:
            logliks.append(poisson_loglik(y, mu))
        M = K * (lam / eps)[None, :] / mu[:, None]
        new = M.T @ y
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(lam > 0, new / lam, 0.0)
            eps_over = np.where(lam > 0, eps / lam, 0.0)
        J = M.T + ratio[:, None] * J - (M.T * y[None, :]) @ (M * eps_over[None, :]) @ J
        lam = new
    if track_loglik:
        logliks.append(poisson_loglik(y, K @ lam))
    cov = (J * y[None, :]) @ J.T
    cov = 0.5 * (cov + cov.T)
    info = {"jacobian": J}
    if track_loglik:
        info["loglik"] = np.array(logliks)
    return UnfoldEstimate(lam, cov, "dagostini", float(n_iter), info)


def dagostini_cv_curve(y, K, lam_start, max_iter):
    """Weighted leave-one-out CV after every iteration ``1..max_iter``.

    All n leave-one-out fits run together: fit ``i`` drops row ``i`` of `K`
    and entry ``i`` of `y`, then predicts the left-out bin.
    """
    y = check_counts(y)
    K = _check_response(K)
    lam0 = check_positive_vector(lam_start, "lam_start")
    n = y.size
    w = _variance_weights(y)
    eps = K.sum(axis=0)[None, :] - K
    if np.any(eps <= 0):
        raise DomainError("a true bin loses all efficiency when a smeared bin is dropped")
    lam = np.tile(lam0, (n, 1))
    keep = 1.0 - np.eye(n)
    cv = np.empty(max_iter)
    for t in range(max_iter):
        mu = lam @ K.T
        ratio = keep * y[None, :] / mu
        lam = lam * (ratio @ K) / eps
        pred = np.einsum("ij,ij->i", K, lam)
        cv[t] = np.sum(w * (y - pred) ** 2)
    return cv


def loo_cv_select(method, y, K, lam_mc, candidates=None):
    """Pick the regularization minimizing weighted leave-one-out CV.

    Returns ``(choice, info)`` where ``info`` holds the CV curve and flags for
    a minimizer on the grid boundary.
    """
    if method == "svd":
        cand = np.asarray(DELTA_GRID if candidates is None else candidates, dtype=float)
        curve = svd_cv_curve(y, K, lam_mc, cand)
    elif method == "dagostini":
        cand = np.asarray(iteration_grid() if candidates is None else candidates, dtype=int)
        if np.any(cand < 1):
            raise DomainError("iteration candidates must be >= 1")
        full = dagostini_cv_curve(y, K, lam_mc, int(cand.max()))
        curve = full[cand - 1]
    else:
        raise DomainError(f"unknown method {method!r}")
    best = int(np.argmin(curve))
    info = {"candidates": cand, "cv": curve,
            "at_lower_edge": best == 0 and cand.size > 1,
            "at_upper_edge": best == cand.size - 1 and cand.size > 1}
    if method == "dagostini" and info["at_upper_edge"]:
        info["still_decreasing"] = bool(curve.size < 2 or curve[-1] < curve[-2])
        logger.warning("D'Agostini CV minimized at the iteration cap %d", cand[-1])
    elif info["at_lower_edge"] or info["at_upper_edge"]:
        logger.warning("%s CV minimized at the edge of the candidate grid", method)
    return cand[best].item(), info


def gaussian_intervals(est, alpha=0.05, bonferroni=True):
    """Binwise normal intervals, Bonferroni-adjusted across bins when requested."""
    check_alpha(alpha)
    var = est.variance
    if np.any(var < -1e-12 * max(np.abs(var).max(), 1.0)):
        raise NumericError("negative variance in estimate")
    level = alpha / est.lam.size if bonferroni else alpha
    z = norm.isf(level / 2)
    half = z * np.sqrt(np.maximum(var, 0.0))
    return est.lam - half, est.lam + half
