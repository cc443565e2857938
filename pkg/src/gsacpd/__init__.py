"""Sequential change-point detection with a basis-function approximation of the log-likelihood ratio."""

from .basis import BasisSpec, eval_basis, excess_kurtosis, hill_estimator, select_basis
from .calibration import (
    CalibratedModel,
    H0Moments,
    H1Spec,
    MdeSpec,
    calibrate,
    calibrate_exact,
    estimate_h0,
    specify_h1_mde,
    winsorize,
)
from .detector import DetectorState, llr, run, step
from .distributions import SeriesSpec, generate_series, sample
from .threshold import ThresholdSpec, cantelli_threshold, compute_threshold, pe_threshold, vp_threshold

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "CalibratedModel",
    "DetectorState",
    "H0Moments",
    "H1Spec",
    "MdeSpec",
    "SeriesSpec",
    "ThresholdSpec",
    "calibrate",
    "calibrate_exact",
    "cantelli_threshold",
    "compute_threshold",
    "estimate_h0",
    "eval_basis",
    "excess_kurtosis",
    "generate_series",
    "hill_estimator",
    "llr",
    "pe_threshold",
    "run",
    "sample",
    "select_basis",
    "specify_h1_mde",
    "step",
    "vp_threshold",
    "winsorize",
]
