"""Input checks shared by the estimators and the functional API."""
from __future__ import annotations

import numpy as np

from ._exceptions import DomainError


def check_edges(edges, name="edges"):
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise DomainError(f"{name} must be a 1-D array with at least 2 entries")
    if not np.all(np.isfinite(edges)):
        raise DomainError(f"{name} must be finite")
    if np.any(np.diff(edges) <= 0):
        raise DomainError(f"{name} must be strictly increasing")
    return edges


def check_counts(y, n=None, name="y"):
    """Return `y` as a float array of nonnegative counts of length `n`."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DomainError(f"{name} must be 1-D, got shape {y.shape}")
    if n is not None and y.size != n:
        raise DomainError(f"{name} has length {y.size}, expected {n}")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise DomainError(f"{name} must be finite and nonnegative")
    return y


def check_alpha(alpha, allow_zero=False):
    alpha = float(alpha)
    lo_ok = alpha >= 0 if allow_zero else alpha > 0
    if not (lo_ok and alpha < 1):
        raise DomainError(f"alpha must lie in {'[0' if allow_zero else '(0'}, 1), got {alpha}")
    return alpha


def check_positive_vector(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DomainError(f"{name} must be a finite, strictly positive 1-D array")
    return x
