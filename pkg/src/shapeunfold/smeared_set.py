"""Simultaneous confidence box for the smeared bin means.

Each bin gets an exact Garwood interval at the Sidak-adjusted level, so the
product box covers the whole mean vector with probability at least ``1-alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ._exceptions import DomainError, NumericError
from ._validation import check_alpha, check_counts


@dataclass(frozen=True)
class SmearedBox:
    """Hyperrectangle written as ``center +- half_width``."""

    center: np.ndarray
    half_width: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    alpha_prime: float

    @property
    def n(self):
        return self.center.size

    def contains(self, mu):
        mu = np.asarray(mu, dtype=float)
        return bool(np.all((mu >= self.lower) & (mu <= self.upper)))


def sidak_level(alpha, n):
    """Per-bin level giving simultaneous level ``1-alpha`` over `n` independent bins."""
    alpha = check_alpha(alpha, allow_zero=True)
    if int(n) < 1:
        raise DomainError("n must be >= 1")
    return float(-np.expm1(np.log1p(-alpha) / int(n)))


def garwood_interval(y, alpha_prime):
    """Exact ``1-alpha_prime`` confidence interval for a Poisson mean from count `y`.

    Vectorised over `y`.  Uses the gamma form of the chi-square quantiles:
    half the ``q`` quantile of chi^2 with ``2a`` degrees of freedom is the
    ``q`` quantile of Gamma(a, 1).
    """
    alpha_prime = check_alpha(alpha_prime)
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0) or np.any(y_arr != np.floor(y_arr)):
        raise DomainError("counts must be nonnegative integers")
    q = alpha_prime / 2.0
    with np.errstate(all="ignore"):
        lo = np.where(y_arr > 0, special.gammaincinv(np.maximum(y_arr, 1.0), q), 0.0)
        hi = special.gammainccinv(y_arr + 1.0, q)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise NumericError("chi-square quantile inversion failed")
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def build_box(y, alpha):
    """Sidak/Garwood box ``Xi`` for the smeared means given counts `y`."""
    counts = y.counts if hasattr(y, "counts") else y
    counts = check_counts(counts)
    alpha = check_alpha(alpha)
    alpha_prime = sidak_level(alpha, counts.size)
    lo, hi = garwood_interval(counts, alpha_prime)
    lo = np.atleast_1d(lo)
    hi = np.atleast_1d(hi)
    return SmearedBox(center=0.5 * (lo + hi), half_width=0.5 * (hi - lo), lower=lo, upper=hi,
                      alpha=alpha, alpha_prime=alpha_prime)
