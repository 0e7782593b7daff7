"""scikit-learn style front ends.

Each estimator is configured once and then fitted to one vector of smeared
counts; fitted quantities end in an underscore.  Interval bounds are exposed
as ``lower_`` and ``upper_`` and as the ``(p, 2)`` array from ``predict``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_alpha, check_counts
from .baselines import dagostini, gaussian_intervals, loo_cv_select, svd_unfold
from .forward import ResolutionParams, cached_forward_tables
from .smeared_set import build_box
from .spectrum import BinGrid
from .strict_bounds import Family, Mode, envelope


class _IntervalMixin:
    def predict(self, X=None):
        """Per-bin intervals as a ``(p, 2)`` array of ``[lower, upper]``."""
        check_is_fitted(self, "lower_")
        return np.column_stack([self.lower_, self.upper_])

    def covers(self, lam):
        """Whether every interval contains the corresponding entry of `lam`."""
        check_is_fitted(self, "lower_")
        lam = np.asarray(lam, dtype=float)
        return bool(np.all((self.lower_ <= lam) & (lam <= self.upper_)))


class StrictBoundsUnfolder(_IntervalMixin, BaseEstimator):
    """Simultaneous shape-constrained confidence intervals for binned true means.

    Parameters
    ----------
    family : {"p", "d", "c"}
        Positive; positive and decreasing; positive, decreasing and convex.
    mode : {"conservative", "grid"}
        ``"grid"`` imposes the dual constraint only at grid points and is not
        guaranteed to keep the coverage level.
    alpha : float
        One minus the simultaneous confidence level.
    true_edges, smeared_edges : array-like
        Bin edges in GeV.  ``smeared_edges`` defaults to ``true_edges``.
    resolution : tuple of (c1, c2, c3)
    m : int or None
        Discretization points; defaults to 10 per true bin.
    U : float or None
        Box bound on the dual variables; family default when None.
    lp_method : {"highs", "simplex"}
    cache_dir : str or None
        Where to cache forward tables between fits.
    """

    def __init__(self, family="d", mode="conservative", alpha=0.05,
                 true_edges=tuple(np.linspace(400, 1000, 31)), smeared_edges=None,
                 resolution=(1.0, 1.0, 0.05), m=None, U=None, lp_method="highs",
                 cache_dir=None):
        self.family = family
        self.mode = mode
        self.alpha = alpha
        self.true_edges = true_edges
        self.smeared_edges = smeared_edges
        self.resolution = resolution
        self.m = m
        self.U = U
        self.lp_method = lp_method
        self.cache_dir = cache_dir

    def _tables(self):
        true_grid = BinGrid(tuple(self.true_edges))
        smeared = true_grid if self.smeared_edges is None else BinGrid(tuple(self.smeared_edges))
        key = (tuple(true_grid.edges), tuple(smeared.edges), tuple(self.resolution), self.m)
        if getattr(self, "_tables_key", None) != key:
            self._tables_cache = cached_forward_tables(ResolutionParams(*self.resolution), smeared,
                                                       true_grid, self.m, self.cache_dir)
            self._tables_key = key
        return self._tables_cache

    def fit(self, X, y=None):
        """Fit to the smeared counts `X` (one count per smeared bin)."""
        Family(self.family)
        Mode(self.mode)
        check_alpha(self.alpha)
        tables = self._tables()
        counts = check_counts(X, tables.n, name="counts")
        self.box_ = build_box(counts, self.alpha)
        self.envelope_ = envelope(self.family, tables, self.box_, U=self.U, mode=self.mode,
                                  method=self.lp_method)
        self.lower_ = self.envelope_.lower
        self.upper_ = self.envelope_.upper
        self.n_features_in_ = tables.n
        return self


class _BaselineUnfolder(_IntervalMixin, BaseEstimator):
    _method = None

    def fit(self, X, y=None):
        """Fit to the smeared counts `X`; ``reg="cv"`` selects by leave-one-out CV."""
        check_alpha(self.alpha)
        K = np.asarray(self.response, dtype=float)
        counts = check_counts(X, K.shape[0], name="counts")
        lam_mc = np.asarray(self.lam_mc, dtype=float)
        if isinstance(self.reg, str):
            if self.reg != "cv":
                raise ValueError(f"reg must be a number or 'cv', got {self.reg!r}")
            reg, self.cv_info_ = loo_cv_select(self._method, counts, K, lam_mc, self.candidates)
        else:
            reg, self.cv_info_ = self.reg, None
        self.estimate_ = self._fit_one(counts, K, lam_mc, reg)
        self.regularization_ = self.estimate_.regularization
        self.lam_ = self.estimate_.lam
        self.covariance_ = self.estimate_.covariance
        self.lower_, self.upper_ = gaussian_intervals(self.estimate_, self.alpha, self.bonferroni)
        self.n_features_in_ = K.shape[0]
        return self

    def point_estimate(self):
        check_is_fitted(self, "lam_")
        return self.lam_


class SVDUnfolder(_BaselineUnfolder):
    """Tikhonov unfolding with a curvature penalty relative to an MC spectrum.

    ``reg`` is the penalty weight delta or ``"cv"``.
    """

    _method = "svd"

    def __init__(self, response, lam_mc, reg="cv", alpha=0.05, bonferroni=True, candidates=None):
        self.response = response
        self.lam_mc = lam_mc
        self.reg = reg
        self.alpha = alpha
        self.bonferroni = bonferroni
        self.candidates = candidates

    def _fit_one(self, counts, K, lam_mc, reg):
        return svd_unfold(counts, K, lam_mc, float(reg))


class DAgostiniUnfolder(_BaselineUnfolder):
    """Early-stopped EM started at the MC spectrum.

    ``reg`` is the number of iterations or ``"cv"``.
    """

    _method = "dagostini"

    def __init__(self, response, lam_mc, reg="cv", alpha=0.05, bonferroni=True, candidates=None):
        self.response = response
        self.lam_mc = lam_mc
        self.reg = reg
        self.alpha = alpha
        self.bonferroni = bonferroni
        self.candidates = candidates

    def _fit_one(self, counts, K, lam_mc, reg):
        return dagostini(counts, K, lam_mc, int(reg))
