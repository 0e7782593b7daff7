"""Shape-constrained strict-bounds confidence envelopes for unfolding Poisson spectra."""
__version__ = "0.1.0"

from ._exceptions import DomainError, NumericError, RepairFailure
from .estimators import DAgostiniUnfolder, StrictBoundsUnfolder, SVDUnfolder
from .forward import ResolutionParams, build_forward_tables, smeared_means
from .smeared_set import build_box
from .spectrum import BinGrid, IntensityModel, true_bin_means
from .strict_bounds import ConfidenceEnvelope, Family, Mode, envelope

__all__ = [
    "BinGrid", "ConfidenceEnvelope", "DAgostiniUnfolder", "DomainError", "Family",
    "IntensityModel", "Mode", "NumericError", "RepairFailure", "ResolutionParams",
    "SVDUnfolder", "StrictBoundsUnfolder", "build_box", "build_forward_tables", "envelope",
    "smeared_means", "true_bin_means",
]
