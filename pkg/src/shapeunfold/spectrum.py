"""Particle-level intensity functions and binned true means.

Momenta are in GeV and intensities in events/GeV; the integrated luminosity is
folded into the intensity scale so that bin integrals are expected counts.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate

from ._exceptions import DomainError, NumericError
from ._validation import check_edges

QUAD_EPSREL = 1e-10
QUAD_EPSABS_FACTOR = 1e-12


class Variant(str, Enum):
    INCLUSIVE_JET = "inclusive_jet"
    LINEAR = "linear"
    CONSTANT = "constant"


@dataclass(frozen=True)
class IntensityModel:
    """A parametric true intensity.

    Use the `inclusive_jet`, `linear` and `constant` constructors rather than
    building instances by hand.  ``params`` holds the family parameters as a
    tuple of ``(name, value)`` pairs so the model stays hashable.
    """

    variant: Variant
    params: tuple
    t_min: float
    t_max: float

    def __post_init__(self):
        p = dict(self.params)
        if not (self.t_max > self.t_min):
            raise DomainError("model domain must have t_max > t_min")
        if any(not (v > 0) for v in p.values()):
            raise DomainError(f"all {self.variant.value} parameters must be strictly positive")
        if self.variant is Variant.INCLUSIVE_JET:
            if self.t_min < 0:
                raise DomainError("jet model needs t_min >= 0")
            if not p["sqrt_s"] > 2 * self.t_max:
                raise DomainError("jet model needs sqrt_s > 2 * t_max")

    @classmethod
    def inclusive_jet(cls, luminosity=5.1, n0=1e17, alpha=5.0, beta=10.0, gamma=10.0,
                      sqrt_s=7000.0, t_min=0.0, t_max=None):
        """Inclusive jet transverse momentum spectrum.

        Defaults are the 7 TeV CMS-like values (L in fb^-1, N0 in fb/GeV,
        gamma and sqrt_s in GeV).  The domain defaults to ``(0, sqrt_s/2)``
        with the right end pulled slightly inside so ``sqrt_s > 2 t_max``.
        """
        if t_max is None:
            t_max = 0.5 * sqrt_s * (1 - 1e-12)
        params = (("luminosity", float(luminosity)), ("n0", float(n0)), ("alpha", float(alpha)),
                  ("beta", float(beta)), ("gamma", float(gamma)), ("sqrt_s", float(sqrt_s)))
        return cls(Variant.INCLUSIVE_JET, params, float(t_min), float(t_max))

    @classmethod
    def linear(cls, scale, t_min=400.0, t_max=1000.0):
        """``scale * (t_max - t)`` on ``[t_min, t_max]``."""
        return cls(Variant.LINEAR, (("scale", float(scale)),), float(t_min), float(t_max))

    @classmethod
    def constant(cls, scale, t_min=400.0, t_max=1000.0):
        return cls(Variant.CONSTANT, (("scale", float(scale)),), float(t_min), float(t_max))

    @property
    def param_dict(self):
        return dict(self.params)

    def __call__(self, t):
        return eval_intensity(self, t)

    def to_dict(self):
        return {"variant": self.variant.value, "t_min": self.t_min, "t_max": self.t_max,
                **self.param_dict}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        variant = Variant(d.pop("variant"))
        if variant is Variant.INCLUSIVE_JET:
            return cls.inclusive_jet(**d)
        if variant is Variant.LINEAR:
            return cls.linear(**d)
        return cls.constant(**d)


def eval_intensity(model, t):
    """Evaluate the intensity at momentum `t` (scalar or array, GeV)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t_arr)) or np.any(t_arr < model.t_min) or np.any(t_arr > model.t_max):
        raise DomainError(f"t outside model domain [{model.t_min}, {model.t_max}]")
    p = model.param_dict
    if model.variant is Variant.INCLUSIVE_JET:
        if np.any(t_arr <= 0):
            raise DomainError("jet intensity is defined for t > 0 only")
        out = (p["luminosity"] * p["n0"] * t_arr ** (-p["alpha"])
               * (1.0 - 2.0 * t_arr / p["sqrt_s"]) ** p["beta"] * np.exp(-p["gamma"] / t_arr))
    elif model.variant is Variant.LINEAR:
        out = p["scale"] * (model.t_max - t_arr)
    else:
        out = np.full_like(t_arr, p["scale"])
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BinGrid:
    """Contiguous bins; all bins half-open on the right except the last, which is closed."""

    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(check_edges(self.edges).tolist()))

    @classmethod
    def uniform(cls, lo, hi, n_bins):
        return cls(tuple(np.linspace(lo, hi, n_bins + 1).tolist()))

    @property
    def n_bins(self):
        return len(self.edges) - 1

    @property
    def lo(self):
        return np.asarray(self.edges[:-1])

    @property
    def hi(self):
        return np.asarray(self.edges[1:])

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def centers(self):
        return 0.5 * (self.lo + self.hi)

    def __len__(self):
        return self.n_bins

    def bin_index(self, t):
        """Index of the bin containing each `t`; -1 outside the grid."""
        t = np.asarray(t, dtype=float)
        e = np.asarray(self.edges)
        idx = np.searchsorted(e, t, side="right") - 1
        idx = np.where(t == e[-1], self.n_bins - 1, idx)
        return np.where((t < e[0]) | (t > e[-1]), -1, idx)


def integrate_scalar(func, a, b, scale, what="integral"):
    """Adaptive Gauss-Kronrod quadrature with the package-wide tolerances."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(func, a, b, epsrel=QUAD_EPSREL,
                             epsabs=QUAD_EPSABS_FACTOR * max(scale, 1e-300),
                             limit=200, full_output=1)
    value, abserr = res[0], res[1]
    if len(res) > 3 and abserr > max(QUAD_EPSREL * abs(value), QUAD_EPSABS_FACTOR * scale) * 1e3:
        raise NumericError(f"{what} on [{a}, {b}] did not converge (abserr={abserr:.3g})")
    return value


def true_bin_means(model, grid):
    """Expected particle-level counts per bin of `grid`."""
    if grid.edges[0] < model.t_min or grid.edges[-1] > model.t_max:
        raise DomainError("true grid extends outside the model domain")
    out = np.empty(grid.n_bins)
    for k, (a, b) in enumerate(zip(grid.edges[:-1], grid.edges[1:])):
        scale = (b - a) * max(abs(model(a)), abs(model(b)), 1e-300)
        try:
            out[k] = integrate_scalar(model, a, b, scale, what=f"bin {k}")
        except NumericError as exc:
            raise NumericError(f"true bin {k}: {exc}") from exc
    return np.maximum(out, 0.0)


def total_events(model, t_min, t_max):
    scale = (t_max - t_min) * max(model(t_min), model(t_max))
    return integrate_scalar(model, t_min, t_max, scale)


def matched_model(variant, reference, t_min=400.0, t_max=1000.0):
    """Linear or constant model with the same expected total as `reference` on the domain."""
    variant = Variant(variant)
    total = total_events(reference, t_min, t_max)
    width = t_max - t_min
    if variant is Variant.CONSTANT:
        return IntensityModel.constant(total / width, t_min, t_max)
    if variant is Variant.LINEAR:
        return IntensityModel.linear(2.0 * total / width ** 2, t_min, t_max)
    raise DomainError("matched_model builds linear or constant models only")

