"""Gaussian smearing kernel and the tables the dual programs are built from.

The detector response is additive Gaussian noise whose width depends on the
true momentum.  Everything the strict-bounds programs need about the forward
operator is precomputed once per (resolution, grids, m) into a
:class:`ForwardTables`, which does not depend on the observed data and can be
shared by every replication of a coverage study.
"""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from ._exceptions import DomainError, NumericError
from .spectrum import QUAD_EPSREL, BinGrid

logger = logging.getLogger(__name__)

ENVELOPE_SAMPLES = 65
GOLDEN_ITERS = 20
PAD_ABS = 1e-9
PAD_REL = 1e-6


@dataclass(frozen=True)
class ResolutionParams:
    """Calorimeter resolution ``(sigma/t)^2 = C1^2/t + C2^2/t^2 + C3^2``.

    c1 is in GeV^1/2, c2 in GeV, c3 dimensionless.
    """

    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.05

    def __post_init__(self):
        vals = (self.c1, self.c2, self.c3)
        if any(not np.isfinite(v) or v < 0 for v in vals) or not any(v > 0 for v in vals):
            raise DomainError("resolution constants must be nonnegative and not all zero")

    def to_dict(self):
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3}


def resolution_sigma(params, t):
    """Gaussian smearing width (GeV) at true momentum `t`."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("resolution is defined for t > 0 only")
    sigma = np.sqrt(params.c1 ** 2 * t + params.c2 ** 2 + (params.c3 * t) ** 2)
    return float(sigma) if sigma.ndim == 0 else sigma


def _gauss_mass(z_lo, z_hi):
    # upper-tail form when both limits sit right of the mean keeps relative precision
    right = z_lo > 0
    return np.where(right, ndtr(-z_lo) - ndtr(-z_hi), ndtr(z_hi) - ndtr(z_lo))


def _kernel(params, a, b, t):
    sigma = resolution_sigma(params, t)
    return _gauss_mass((a - t) / sigma, (b - t) / sigma)


def bin_kernel(params, smeared_bin, t):
    """Probability that an event at true momentum `t` is observed in ``smeared_bin = (a, b)``."""
    a, b = smeared_bin
    if not a < b:
        raise DomainError("smeared bin needs a < b")
    out = _kernel(params, a, b, np.asarray(t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def kernel_matrix(params, smeared_grid, t):
    """``k_j(t)`` for all smeared bins; shape ``(len(t), n)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return _kernel(params, smeared_grid.lo[None, :], smeared_grid.hi[None, :], t[:, None])


@dataclass(frozen=True, eq=False)
class ForwardTables:
    """Kernel values, antiderivatives and subinterval envelopes on the grid ``t``.

    ``kb``, ``ks`` and ``kss`` have shape ``(m+1, n)`` and hold ``k_j``, its
    antiderivative from ``t[0]`` and the second antiderivative.  ``rho_hi`` and
    ``rho_lo`` have shape ``(m, n)`` and bound ``k_j`` from above and below on
    each ``[t[i], t[i+1])``.
    """

    t: np.ndarray
    kb: np.ndarray
    ks: np.ndarray
    kss: np.ndarray
    rho_hi: np.ndarray
    rho_lo: np.ndarray
    smeared_edges: tuple
    true_edges: tuple
    resolution: ResolutionParams

    def __post_init__(self):
        for name in ("t", "kb", "ks", "kss", "rho_hi", "rho_lo"):
            getattr(self, name).setflags(write=False)

    @property
    def m(self):
        return self.t.size - 1

    @property
    def n(self):
        return self.kb.shape[1]

    @property
    def steps(self):
        return np.diff(self.t)

    @property
    def true_grid(self):
        return BinGrid(self.true_edges)

    @property
    def smeared_grid(self):
        return BinGrid(self.smeared_edges)


def _kahan_cumsum(increments):
    """Compensated cumulative sum along axis 0, with a leading zero row."""
    out = np.zeros((increments.shape[0] + 1,) + increments.shape[1:])
    total = np.zeros(increments.shape[1:])
    comp = np.zeros_like(total)
    for i, inc in enumerate(increments):
        yk = inc - comp
        tk = total + yk
        comp = (tk - total) - yk
        total = tk
        out[i + 1] = total
    return out


def _quad_vec(func, a, b, scale):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad_vec(func, a, b, epsrel=QUAD_EPSREL,
                                            epsabs=1e-14 * scale, full_output=True)
    if not info.success:
        raise NumericError(f"vector quadrature on [{a}, {b}] failed: {info.message}")
    return val


def _golden_refine(f, lo, hi, sign, iters=GOLDEN_ITERS):
    """Vectorised golden-section search for the max of ``sign * f`` on ``[lo, hi]``."""
    g = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1, f2 = sign * f(x1), sign * f(x2)
    best = np.maximum(f1, f2)
    for _ in range(iters):
        left = f1 >= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + g * (hi - lo))
        x1n = np.where(left, hi - g * (hi - lo), x2)
        fnew = sign * f(np.where(left, x1n, x2n))
        f1n = np.where(left, fnew, f2)
        f2n = np.where(left, f1, fnew)
        x1, x2, f1, f2 = x1n, x2n, f1n, f2n
        best = np.maximum(best, np.maximum(f1, f2))
    return sign * best


def kernel_envelopes(params, smeared_grid, t):
    """Padded sup/inf of every ``k_j`` over each subinterval ``[t[i], t[i+1])``.

    Samples each subinterval at 65 points, refines the extremal sample with a
    golden-section search, then widens by ``1e-9 + 1e-6 * range``.
    """
    t = np.asarray(t, dtype=float)
    m = t.size - 1
    frac = np.linspace(0.0, 1.0, ENVELOPE_SAMPLES)
    tt = t[:-1, None] + frac[None, :] * np.diff(t)[:, None]            # (m, S)
    a = smeared_grid.lo[None, None, :]
    b = smeared_grid.hi[None, None, :]
    vals = _kernel(params, a, b, tt[:, :, None])                        # (m, S, n)
    hi_idx = vals.argmax(axis=1)
    lo_idx = vals.argmin(axis=1)
    samp_hi = vals.max(axis=1)
    samp_lo = vals.min(axis=1)

    rows = np.arange(m)[:, None]
    aa = smeared_grid.lo[None, :]
    bb = smeared_grid.hi[None, :]

    def f(x):
        return _kernel(params, aa, bb, x)

    def bracket(idx):
        left = tt[rows, np.clip(idx - 1, 0, ENVELOPE_SAMPLES - 1)]
        right = tt[rows, np.clip(idx + 1, 0, ENVELOPE_SAMPLES - 1)]
        return left, right

    lo_b, hi_b = bracket(hi_idx)
    rho_hi = np.maximum(samp_hi, _golden_refine(f, lo_b, hi_b, +1.0))
    lo_b, hi_b = bracket(lo_idx)
    rho_lo = np.minimum(samp_lo, _golden_refine(f, lo_b, hi_b, -1.0))
    pad = PAD_ABS + PAD_REL * (samp_hi - samp_lo)
    return rho_hi + pad, np.maximum(rho_lo - pad, 0.0)


def discretization_grid(true_grid, m=None):
    """Uniform subdivision of every true bin; ``m`` must be a multiple of p (default 10 p)."""
    p = true_grid.n_bins
    m = 10 * p if m is None else int(m)
    if m < p or m % p:
        raise DomainError(f"m={m} must be a positive multiple of p={p}")
    per_bin = m // p
    pieces = [np.linspace(a, b, per_bin + 1)[:-1] for a, b in zip(true_grid.lo, true_grid.hi)]
    return np.concatenate(pieces + [np.array([true_grid.edges[-1]])])


def build_forward_tables(params, smeared_grid, true_grid, m=None):
    """Precompute kernel values, antiderivatives and envelopes on the discretization grid."""
    t = discretization_grid(true_grid, m)
    n = smeared_grid.n_bins
    kb = kernel_matrix(params, smeared_grid, t)
    inc1 = np.empty((t.size - 1, n))
    inc2 = np.empty((t.size - 1, n))
    for i in range(t.size - 1):
        t0, t1 = t[i], t[i + 1]

        def integrand(s, t1=t1):
            k = kernel_matrix(params, smeared_grid, s)[0]
            return np.concatenate([k, (t1 - s) * k])

        try:
            val = _quad_vec(integrand, t0, t1, scale=(t1 - t0) ** 2)
        except NumericError as exc:
            raise NumericError(f"antiderivative on subinterval {i}: {exc}") from exc
        inc1[i] = val[:n]
        inc2[i] = val[n:]
    ks = _kahan_cumsum(inc1)
    # int_{t_i}^{t_{i+1}} k*(s) ds = k*(t_i) h + int (t_{i+1} - s) k(s) ds
    kss = _kahan_cumsum(ks[:-1] * np.diff(t)[:, None] + inc2)
    rho_hi, rho_lo = kernel_envelopes(params, smeared_grid, t)
    return ForwardTables(t=t, kb=kb, ks=ks, kss=kss, rho_hi=rho_hi, rho_lo=rho_lo,
                         smeared_edges=smeared_grid.edges, true_edges=true_grid.edges,
                         resolution=params)


def smeared_means(model, params, smeared_grid, true_domain):
    """Expected smeared counts ``mu_j = int_T k_j(t) f(t) dt`` over ``true_domain``."""
    t_min, t_max = true_domain
    scale = (t_max - t_min) * max(model(t_min), model(t_max), 1e-300)

    def integrand(t):
        return kernel_matrix(params, smeared_grid, t)[0] * model(t)

    return np.maximum(_quad_vec(integrand, t_min, t_max, scale), 0.0)


def response_matrix(ansatz, params, smeared_grid, true_grid):
    """Discretized response ``K`` (n x p) built with the ansatz spectrum inside each true bin."""
    from .spectrum import true_bin_means

    lam = true_bin_means(ansatz, true_grid)
    K = np.empty((smeared_grid.n_bins, true_grid.n_bins))
    for j, (a, b) in enumerate(zip(true_grid.lo, true_grid.hi)):
        if not lam[j] > 0:
            raise DomainError(f"ansatz has zero mass in true bin {j}")

        def integrand(t):
            return kernel_matrix(params, smeared_grid, t)[0] * ansatz(t)

        K[:, j] = _quad_vec(integrand, a, b, lam[j]) / lam[j]
    return K


def tables_key(params, smeared_grid, true_grid, m=None):
    """Stable hash identifying a table configuration."""
    m = 10 * true_grid.n_bins if m is None else int(m)
    blob = json.dumps({"resolution": params.to_dict(), "smeared": list(smeared_grid.edges),
                       "true": list(true_grid.edges), "m": m}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_tables(tables, path):
    path = Path(path)
    np.savez(path, t=tables.t, kb=tables.kb, ks=tables.ks, kss=tables.kss,
             rho_hi=tables.rho_hi, rho_lo=tables.rho_lo,
             smeared_edges=np.asarray(tables.smeared_edges),
             true_edges=np.asarray(tables.true_edges),
             resolution=np.array([tables.resolution.c1, tables.resolution.c2,
                                  tables.resolution.c3]))
    return path


def load_tables(path):
    with np.load(path) as z:
        c1, c2, c3 = z["resolution"]
        return ForwardTables(t=z["t"].copy(), kb=z["kb"].copy(), ks=z["ks"].copy(),
                             kss=z["kss"].copy(), rho_hi=z["rho_hi"].copy(),
                             rho_lo=z["rho_lo"].copy(),
                             smeared_edges=tuple(z["smeared_edges"].tolist()),
                             true_edges=tuple(z["true_edges"].tolist()),
                             resolution=ResolutionParams(float(c1), float(c2), float(c3)))


def cached_forward_tables(params, smeared_grid, true_grid, m=None, cache_dir=None):
    """Build tables, reusing ``<cache_dir>/tables-<hash>.npz`` when present."""
    if cache_dir is None:
        return build_forward_tables(params, smeared_grid, true_grid, m)
    cache_dir = Path(cache_dir)
    path = cache_dir / f"tables-{tables_key(params, smeared_grid, true_grid, m)}.npz"
    if path.exists():
        logger.info("loading forward tables from %s", path)
        return load_tables(path)
    tables = build_forward_tables(params, smeared_grid, true_grid, m)
    cache_dir.mkdir(parents=True, exist_ok=True)
    save_tables(tables, path)
    logger.info("cached forward tables at %s", path)
    return tables
