"""Moment-based self-consistent calibration over an efficiency scan.

For Poisson light the Fano factor and symmetry parameter of the output are
constant in the mean output:

    F = gamma (1 + 3 eps) / (1 + eps)
    S = gamma^2 (1 + 7 eps) / (1 + eps)

so a constant fit of each across the scan gives (gamma, eps) up to the choice
between the two roots of a quadratic. For multi-mode thermal light the mean
dark contribution ``x_dc`` enters through (1 - x_dc / x_out) and is fitted as
well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import (
    PhotonDistribution,
    convolve_dark,
    crosstalk_first_order,
    fidelity,
    multithermal_probabilities,
    pmf_coherent,
    rebin_to_counts,
)
from .errors import CalibrationError, DomainError, FitError, NoSolutionError
from .fitting import FitResult, nonlinear_least_squares, weighted_constant_fit
from .moments import MomentSummary, Observable, fano, fs_covariance, summarize_shots, symmetry

log = logging.getLogger(__name__)

COHERENT = "coherent"
THERMAL = "thermal"


@dataclass(frozen=True)
class EtaScanSeries:
    """Moment summaries of one light source at several attenuations.

    Means must already be referred to the pedestal (zero offset removed).
    """

    entries: tuple[MomentSummary, ...]
    light_kind: str

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if self.light_kind not in (COHERENT, THERMAL):
            raise DomainError(f"light_kind must be '{COHERENT}' or '{THERMAL}'")
        need = 2 if self.light_kind == COHERENT else 4
        if len(entries) < need:
            raise DomainError(f"a {self.light_kind} scan needs at least {need} settings, got {len(entries)}")
        means = [e.mean for e in entries]
        if len(set(means)) != len(means):
            raise DomainError("scan settings must have distinct means")

    @property
    def x_out(self) -> np.ndarray:
        return np.array([e.mean for e in self.entries])

    def fano_values(self) -> list[Observable]:
        return [fano(e) for e in self.entries]

    def symmetry_values(self) -> list[Observable]:
        return [symmetry(e) for e in self.entries]

    def fs_covariances(self) -> np.ndarray:
        """Per-setting 2x2 covariance of (F, S), shape (n, 2, 2)."""
        return np.array([fs_covariance(e) for e in self.entries])


def build_series(
    datasets: Sequence[Sequence[float]],
    light_kind: str,
    zero_offset: float = 0.0,
    pedestal_variance: float = 0.0,
    bootstrap_reps: int = 0,
    rng: np.random.Generator | None = None,
) -> EtaScanSeries:
    """Summarise raw shot sets after subtracting the pedestal position.

    ``pedestal_variance`` is the electronic-noise variance of the pedestal
    (from a dark acquisition); it is removed from every variance so that
    F is not inflated at low intensity. Third moments are unaffected by
    symmetric noise.
    """
    entries = []
    for d in datasets:
        s = summarize_shots(np.asarray(d, dtype=np.float64) - zero_offset, bootstrap_reps, rng)
        if pedestal_variance:
            s = replace(s, var=s.var - pedestal_variance)
        entries.append(s)
    return EtaScanSeries(tuple(entries), light_kind)


def smoothed_errors(x: np.ndarray, errors: Sequence[float]) -> np.ndarray:
    """Errors replaced by a quadratic trend in log-log space.

    Per-point error estimates of higher moments correlate with the values
    themselves; weighting with them biases a weighted mean low. The trend
    keeps the scaling of the errors with intensity without that correlation.
    """
    e = np.asarray(errors, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if e.size < 4 or np.any(~(e > 0)) or np.any(~(x > 0)):
        return e
    lx = np.log(x)
    coef = np.polyfit(lx, np.log(e), 2)
    return np.exp(np.polyval(coef, lx))


def _weights(x: np.ndarray, errors: Sequence[float], mode: str) -> np.ndarray:
    if mode == "smoothed":
        return smoothed_errors(x, errors)
    if mode == "raw":
        return np.asarray(errors, dtype=np.float64)
    raise DomainError(f"unknown weighting mode {mode!r}")


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float


@dataclass(frozen=True)
class CoherentCalibration:
    F: Observable
    S: Observable
    gamma: Estimate
    epsilon: Estimate
    rejected_root: tuple[float, float] | None
    F_fit: FitResult = field(repr=False)
    S_fit: FitResult = field(repr=False)


@dataclass(frozen=True)
class ThermalCalibration:
    x_dc: Estimate
    B: Estimate
    A: Estimate
    C: Estimate
    gamma: Estimate
    epsilon: Estimate
    mu: Estimate
    m_dc: Estimate
    rejected_root: tuple[float, float] | None
    F_fit: FitResult = field(repr=False)
    S_fit: FitResult = field(repr=False)
    mu_mode: str = "folded"


# --------------------------------------------------------------------------
# Gain / cross-talk algebra
# --------------------------------------------------------------------------
def forward_fs(gamma: float, epsilon: float) -> tuple[float, float]:
    """Constant Fano and symmetry terms produced by (gamma, epsilon)."""
    return gamma * (1 + 3 * epsilon) / (1 + epsilon), gamma**2 * (1 + 7 * epsilon) / (1 + epsilon)


def solve_gain_crosstalk(F_like: float, S_like: float) -> list[tuple[float, float]]:
    """Both real (gamma, epsilon) pairs reproducing the constant terms.

    Eliminating gamma leaves (9r - 7) e^2 + (6r - 8) e + (r - 1) = 0 with
    r = S / F^2. Roots are returned in increasing epsilon; unphysical ones are
    included and filtered by :func:`select_root`.
    """
    if not (F_like > 0 and S_like > 0):
        raise DomainError("F and S must both be positive")
    r = S_like / F_like**2
    a, b, c = 9 * r - 7, 6 * r - 8, r - 1
    if abs(a) < 1e-14:
        eps_roots = [-c / b]
    else:
        disc = b * b - 4 * a * c
        if disc < 0:
            raise NoSolutionError(f"no real gain/cross-talk solution (S/F^2 = {r:.6g})")
        sq = math.sqrt(disc)
        # numerically stable pair
        q = -0.5 * (b + math.copysign(sq, b))
        eps_roots = [q / a, c / q] if q != 0 else [-b / (2 * a)] * 2
    eps_roots = sorted(eps_roots)
    return [(F_like * (1 + e) / (1 + 3 * e), e) for e in eps_roots]


def physical_roots(roots: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    return [(g, e) for g, e in roots if 0.0 <= e < 1.0 and g > 0]


def select_root(
    roots: Sequence[tuple[float, float]],
    peak_spacing: float | None = None,
    spacing_error: float = 0.0,
    gamma_errors: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Pick the root whose gain is closest to the measured peak spacing.

    Distance is in units of the combined error when errors are known. Ties,
    and calls without a spacing, resolve to the smaller epsilon.
    """
    if not roots:
        raise CalibrationError("no candidate roots")
    if len(roots) == 1:
        return roots[0]
    if peak_spacing is None:
        return min(roots, key=lambda r: r[1])
    errs = list(gamma_errors) if gamma_errors is not None else [0.0] * len(roots)
    dist = []
    for (g, _), ge in zip(roots, errs):
        scale = math.hypot(spacing_error, ge)
        dist.append(abs(g - peak_spacing) / scale if scale > 0 else abs(g - peak_spacing))
    best = min(dist)
    tied = [r for r, d in zip(roots, dist) if math.isclose(d, best, rel_tol=1e-9, abs_tol=1e-12)]
    if len(tied) > 1:
        log.warning("roots equidistant from the peak spacing; taking the smaller epsilon")
    return min(tied, key=lambda r: r[1])


def _sensitivity(J: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Rows d(param)/d(y_i) of a linearised weighted least-squares fit."""
    Jw = J / sigma[:, None] ** 2
    return np.linalg.solve(J.T @ Jw, Jw.T)


def _fitted_correlation(
    kF: np.ndarray, kS: np.ndarray, fs_cov: np.ndarray
) -> float:
    """Correlation of two fitted quantities that are linear in per-point F and S."""
    cov = float(np.sum(kF * kS * fs_cov[:, 0, 1]))
    vF = float(np.sum(kF**2 * fs_cov[:, 0, 0]))
    vS = float(np.sum(kS**2 * fs_cov[:, 1, 1]))
    if not (vF > 0 and vS > 0):
        return 0.0
    return float(np.clip(cov / math.sqrt(vF * vS), -1.0, 1.0))


def _root_errors(
    F: Observable,
    S: Observable,
    branch: int,
    rng: np.random.Generator,
    n_draws: int,
    rho: float = 0.0,
) -> tuple[float, float]:
    """Spread of one root branch under correlated Gaussian resampling of F and S."""
    z1 = rng.standard_normal(n_draws)
    z2 = rho * z1 + math.sqrt(max(1.0 - rho * rho, 0.0)) * rng.standard_normal(n_draws)
    Fd = F.value + F.error * z1
    Sd = S.value + S.error * z2
    r = Sd / Fd**2
    a, b, c = 9 * r - 7, 6 * r - 8, r - 1
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (Fd > 0) & (Sd > 0) & (np.abs(a) > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    e_lo = np.where(a > 0, (-b - sq) / (2 * a), (-b + sq) / (2 * a))
    e_hi = np.where(a > 0, (-b + sq) / (2 * a), (-b - sq) / (2 * a))
    e = (e_lo if branch == 0 else e_hi)[ok]
    g = Fd[ok] * (1 + e) / (1 + 3 * e)
    if e.size < 2:
        return math.nan, math.nan
    return float(np.std(g, ddof=1)), float(np.std(e, ddof=1))


def _gain_crosstalk(
    F: Observable,
    S: Observable,
    peak_spacing: float | None,
    spacing_error: float,
    rng: np.random.Generator | None,
    n_draws: int,
    rho: float = 0.0,
) -> tuple[Estimate, Estimate, tuple[float, float] | None]:
    roots = solve_gain_crosstalk(F.value, S.value)
    phys = physical_roots(roots)
    if not phys:
        raise CalibrationError(
            f"no root with epsilon in [0, 1): roots {[(round(g, 4), round(e, 4)) for g, e in roots]}"
        )
    chosen = select_root(phys, peak_spacing, spacing_error)
    branch = roots.index(chosen)
    rejected = next((r for r in phys if r != chosen), None)
    rng = rng if rng is not None else np.random.default_rng(0)
    g_err, e_err = _root_errors(F, S, branch, rng, n_draws, rho)
    return Estimate(chosen[0], g_err), Estimate(chosen[1], e_err), rejected


# --------------------------------------------------------------------------
# Coherent light
# --------------------------------------------------------------------------
def calibrate_coherent(
    series: EtaScanSeries,
    peak_spacing: float | None = None,
    spacing_error: float = 0.0,
    rng: np.random.Generator | None = None,
    n_draws: int = 10_000,
    weights: str = "smoothed",
) -> CoherentCalibration:
    """Gain and cross-talk from constant fits of F and S across the scan.

    ``weights`` selects per-point errors as measured (``"raw"``) or their
    smooth trend (``"smoothed"``, see :func:`smoothed_errors`).
    """
    if series.light_kind != COHERENT:
        raise DomainError("calibrate_coherent needs a coherent scan")
    x = series.x_out
    Fv = series.fano_values()
    Sv = series.symmetry_values()
    Fw = _weights(x, [o.error for o in Fv], weights)
    Sw = _weights(x, [o.error for o in Sv], weights)
    F_fit = weighted_constant_fit(x, [o.value for o in Fv], Fw)
    S_fit = weighted_constant_fit(x, [o.value for o in Sv], Sw)
    F = Observable(float(F_fit.params[0]), float(F_fit.errors[0]))
    S = Observable(float(S_fit.params[0]), float(S_fit.errors[0]))
    ones = np.ones((x.size, 1))
    rho = _fitted_correlation(
        _sensitivity(ones, Fw)[0], _sensitivity(ones, Sw)[0], series.fs_covariances()
    )
    gamma, eps, rejected = _gain_crosstalk(F, S, peak_spacing, spacing_error, rng, n_draws, rho)
    return CoherentCalibration(F, S, gamma, eps, rejected, F_fit, S_fit)


# --------------------------------------------------------------------------
# Multi-mode thermal light
# --------------------------------------------------------------------------
def thermal_fano_model(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """F(x_out) for parameters (x_dc, B, inv_mu)."""
    x_dc, B, inv_mu = p
    y = 1.0 - x_dc / x
    return inv_mu * y * y * x + B


def thermal_symmetry_model(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """S(x_out) for parameters (A, C, x_dc, B, inv_mu)."""
    A, C, x_dc, B, inv_mu = p
    y = 1.0 - x_dc / x
    return A * y**3 * x * x + 3.0 * inv_mu * B * y * y * x + C


def _thermal_fano_jac(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    x_dc, B, inv_mu = p
    y = 1.0 - x_dc / x
    return np.column_stack([-2.0 * inv_mu * y, np.ones_like(x), y * y * x])


def _thermal_symmetry_jac(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    A, C, x_dc, B, inv_mu = p
    y = 1.0 - x_dc / x
    return np.column_stack([
        y**3 * x * x,
        np.ones_like(x),
        -3.0 * A * y * y * x - 6.0 * inv_mu * B * y,
        3.0 * inv_mu * y * y * x,
        3.0 * B * y * y * x,
    ])


def calibrate_thermal(
    series: EtaScanSeries,
    mu_fixed: float | None = 1.0,
    peak_spacing: float | None = None,
    spacing_error: float = 0.0,
    rng: np.random.Generator | None = None,
    n_draws: int = 10_000,
    weights: str = "smoothed",
) -> ThermalCalibration:
    """Sequential thermal calibration: F for (x_dc, B), then S for (A, C).

    With ``mu_fixed`` the mode number is held in the F fit and the reported
    ``mu`` is the consistency value sqrt(2 / A); with ``mu_fixed=None`` the
    coefficient 1/mu is a free parameter of the F fit.
    """
    if series.light_kind != THERMAL:
        raise DomainError("calibrate_thermal needs a thermal scan")
    x = series.x_out
    Fv = series.fano_values()
    Sv = series.symmetry_values()
    Fy = np.array([o.value for o in Fv])
    Fs = _weights(x, [o.error for o in Fv], weights)
    Sy = np.array([o.value for o in Sv])
    Ss = _weights(x, [o.error for o in Sv], weights)

    fold = mu_fixed is not None
    if fold and not mu_fixed > 0:
        raise DomainError("mu_fixed must be > 0")
    inv_mu0 = 1.0 / mu_fixed if fold else 1.0
    F_init = [float(x.min()) / 10.0, float(Fy.min()), inv_mu0]
    try:
        F_fit = nonlinear_least_squares(
            thermal_fano_model, x, Fy, Fs, F_init,
            fixed=[False, False, fold],
            bounds=[(-np.inf, np.inf), (-np.inf, np.inf), (0.0, np.inf)],
            jac=_thermal_fano_jac,
        )
    except FitError as exc:
        raise CalibrationError(f"Fano fit failed: {exc}") from exc
    if not F_fit.converged:
        raise CalibrationError("Fano fit did not converge")
    x_dc, B, inv_mu = (float(v) for v in F_fit.params)
    x_dc_err, B_err, inv_mu_err = (float(v) for v in F_fit.errors)
    if x_dc < 0:
        log.warning("fitted x_dc = %.4g < 0; clamped to 0", x_dc)
        x_dc = 0.0

    S_init = [2.0, B * B, x_dc, B, inv_mu]
    try:
        S_fit = nonlinear_least_squares(
            thermal_symmetry_model, x, Sy, Ss, S_init,
            fixed=[False, False, True, True, True],
            jac=_thermal_symmetry_jac,
        )
    except FitError as exc:
        raise CalibrationError(f"symmetry fit failed: {exc}") from exc
    if not S_fit.converged:
        raise CalibrationError("symmetry fit did not converge")
    A, C = (float(v) for v in S_fit.params[:2])
    A_err, C_err = (float(v) for v in S_fit.errors[:2])

    if not C > 0:
        raise CalibrationError(f"fitted constant term C = {C:.4g} is not positive")
    # C depends on the F data through the x_dc and B held fixed in the S fit
    F_free = np.flatnonzero(~np.array([False, False, fold]))
    kF = _sensitivity(_thermal_fano_jac(x, F_fit.params)[:, F_free], Fs)
    JS = _thermal_symmetry_jac(x, S_fit.params)
    kC_S = _sensitivity(JS[:, :2], Ss)[1]
    kC_F = -sum((kC_S @ JS[:, 2 + j]) * kF[k] for k, j in enumerate(F_free))
    fs_cov = series.fs_covariances()
    kB = kF[1]
    var_C = float(np.sum(kC_S**2 * fs_cov[:, 1, 1] + kC_F**2 * fs_cov[:, 0, 0]
                         + 2.0 * kC_S * kC_F * fs_cov[:, 0, 1]))
    var_B = float(np.sum(kB**2 * fs_cov[:, 0, 0]))
    cov_BC = float(np.sum(kB * kC_F * fs_cov[:, 0, 0] + kB * kC_S * fs_cov[:, 0, 1]))
    C_err = math.sqrt(max(var_C, C_err**2))
    rho = float(np.clip(cov_BC / math.sqrt(var_B * var_C), -1.0, 1.0)) if var_B > 0 and var_C > 0 else 0.0
    gamma, eps, rejected = _gain_crosstalk(
        Observable(B, B_err), Observable(C, C_err), peak_spacing, spacing_error, rng, n_draws, rho
    )

    if fold:
        if not A > 0:
            raise CalibrationError(f"fitted A = {A:.4g} is not positive; mu undefined")
        mu = math.sqrt(2.0 / A)
        mu_est = Estimate(mu, mu / (2.0 * A) * A_err)
    else:
        mu_est = Estimate(1.0 / inv_mu, inv_mu_err / inv_mu**2)

    scale = gamma.value * (1.0 + eps.value)
    m_dc = x_dc / scale
    if x_dc > 0:
        rel = math.sqrt(
            (x_dc_err / x_dc) ** 2
            + (gamma.error / gamma.value) ** 2
            + (eps.error / (1.0 + eps.value)) ** 2
        )
        m_dc_err = m_dc * rel
    else:
        m_dc_err = x_dc_err / scale
    return ThermalCalibration(
        x_dc=Estimate(x_dc, x_dc_err),
        B=Estimate(B, B_err),
        A=Estimate(A, A_err),
        C=Estimate(C, C_err),
        gamma=gamma,
        epsilon=eps,
        mu=mu_est,
        m_dc=Estimate(m_dc, m_dc_err),
        rejected_root=rejected,
        F_fit=F_fit,
        S_fit=S_fit,
        mu_mode="folded" if fold else "free",
    )


# --------------------------------------------------------------------------
# Reconstruction
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class KnownConstants:
    """Gain, cross-talk and dark contribution known from elsewhere."""

    gamma: Estimate
    epsilon: Estimate
    x_dc: Estimate | None = None


@dataclass(frozen=True)
class Reconstruction:
    measured: PhotonDistribution
    bare: PhotonDistribution
    with_crosstalk: PhotonDistribution
    fidelity_bare: float
    fidelity_crosstalk: float
    mean_counts: float


def reconstruct_and_score(
    samples: Sequence[float],
    calibration: CoherentCalibration | ThermalCalibration | KnownConstants,
    light_kind: str | None = None,
    zero_offset: float = 0.0,
    modes: float = 1.0,
) -> Reconstruction:
    """Rebin one data set with the calibrated gain and score two hypotheses.

    ``bare`` ignores cross-talk (for thermal light it keeps the dark-count
    convolution); ``with_crosstalk`` adds first-order cross-talk to the same
    primary distribution.
    """
    if light_kind is None:
        if isinstance(calibration, CoherentCalibration):
            light_kind = COHERENT
        elif isinstance(calibration, ThermalCalibration):
            light_kind = THERMAL
        else:
            raise DomainError("light_kind is required for externally supplied constants")
    gamma = calibration.gamma.value
    eps = calibration.epsilon.value
    x = np.asarray(samples, dtype=np.float64) - zero_offset
    measured = rebin_to_counts(x, gamma, 0.0)
    x_out = float(x.mean())
    k_mean = x_out / gamma

    if light_kind == COHERENT:
        bare = pmf_coherent(max(k_mean, 0.0))
        primaries = pmf_coherent(max(k_mean / (1.0 + eps), 0.0))
    elif light_kind == THERMAL:
        x_dc_est = getattr(calibration, "x_dc", None)
        x_dc = x_dc_est.value if x_dc_est is not None else 0.0
        scale = gamma * (1.0 + eps)
        m_dc = x_dc / scale
        m_el = max((x_out - x_dc) / scale, 0.0)
        primaries = convolve_dark(PhotonDistribution(multithermal_probabilities(m_el, modes)), m_dc)
        bare = primaries
    else:
        raise DomainError(f"unknown light kind {light_kind!r}")
    with_xt = crosstalk_first_order(primaries, eps)
    return Reconstruction(
        measured=measured,
        bare=bare,
        with_crosstalk=with_xt,
        fidelity_bare=fidelity(measured, bare),
        fidelity_crosstalk=fidelity(measured, with_xt),
        mean_counts=k_mean,
    )


__all__ = [
    "COHERENT",
    "THERMAL",
    "EtaScanSeries",
    "Estimate",
    "CoherentCalibration",
    "ThermalCalibration",
    "KnownConstants",
    "Reconstruction",
    "build_series",
    "smoothed_errors",
    "forward_fs",
    "solve_gain_crosstalk",
    "physical_roots",
    "select_root",
    "calibrate_coherent",
    "calibrate_thermal",
    "thermal_fano_model",
    "thermal_symmetry_model",
    "reconstruct_and_score",
]
