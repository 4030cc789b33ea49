"""Calibration of silicon photomultipliers from output statistics.

Two routes are provided: a moment-based calibration over an attenuation
scan (:mod:`sipmcal.model_one`) and a peak-resolved fit of a single
spectrum (:mod:`sipmcal.model_two`). Both rest on exact pmfs of the
detection chain (:mod:`sipmcal.distributions`) and are checked against a
Monte Carlo simulator (:mod:`sipmcal.simulator`).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .distributions import (
    Coherent,
    Degenerate,
    DetectorParams,
    MultiThermal,
    PhotonDistribution,
    bernoulli_loss,
    chain_response,
    convolve_dark,
    crosstalk_cascade,
    crosstalk_first_order,
    fidelity,
    output_moments,
    pmf_coherent,
    pmf_multithermal,
    rebin_to_counts,
)
from .errors import (
    CalibrationError,
    DetectionError,
    DomainError,
    EstimationError,
    FitError,
    FormatError,
    NoSolutionError,
    ParseError,
    PreconditionError,
    SipmError,
)
from .fitting import FitResult, nonlinear_least_squares, propagate_errors, weighted_constant_fit
from .kernels import BACKEND
from .model_one import (
    EtaScanSeries,
    build_series,
    calibrate_coherent,
    calibrate_thermal,
    reconstruct_and_score,
    solve_gain_crosstalk,
)
from .model_two import (
    Histogram,
    PeakModel,
    calibrate_histogram,
    detect_peaks,
    fit_avalanche_statistics,
    fit_multipeak,
    gain_from_peaks,
    peak_areas,
)
from .moments import MomentSummary, estimate_zero_offset, fano, summarize_shots, symmetry
from .simulator import SimConfig, StaircaseConfig, simulate_shots, simulate_staircase, xtalk_from_staircase

__all__ = [name for name in dir() if not name.startswith("_")]
