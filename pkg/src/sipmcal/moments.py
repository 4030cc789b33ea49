"""Sample moments of recorded outputs and the Fano / symmetry observables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, EstimationError


@dataclass(frozen=True)
class MomentSummary:
    """Central moments of one data set, in channel units.

    ``covariance`` is the 3x3 sampling covariance of (mean, var, third) when
    known; the standard errors are its diagonal.
    """

    n_samples: int
    mean: float
    var: float
    third: float
    se_mean: float
    se_var: float
    se_third: float
    covariance: tuple[tuple[float, ...], ...] | None = None

    def cov_matrix(self) -> np.ndarray:
        if self.covariance is not None:
            return np.array(self.covariance, dtype=np.float64)
        return np.diag([self.se_mean**2, self.se_var**2, self.se_third**2])


@dataclass(frozen=True)
class Observable:
    value: float
    error: float


def _kstats(x: np.ndarray) -> tuple[float, float, float]:
    """Mean, unbiased variance and unbiased third cumulant (k-statistics)."""
    n = x.shape[-1]
    mean = x.mean(axis=-1)
    d = x - mean[..., None] if x.ndim > 1 else x - mean
    m2 = (d * d).mean(axis=-1)
    m3 = (d * d * d).mean(axis=-1)
    var = m2 * n / (n - 1)
    # two points are always symmetric: m3 == 0 and k3 is undefined
    third = m3 * n * n / ((n - 1) * (n - 2)) if n > 2 else m3
    return mean, var, third


def summarize_shots(
    samples: Sequence[float],
    bootstrap_reps: int = 0,
    rng: np.random.Generator | None = None,
) -> MomentSummary:
    """Mean, variance and third central moment with standard errors.

    With ``bootstrap_reps == 0`` the standard errors come from the usual
    large-sample formulas; otherwise they are bootstrap standard deviations
    computed with ``rng``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise DomainError(f"need at least 2 samples, got {n}")
    if bootstrap_reps < 0:
        raise DomainError("bootstrap_reps must be >= 0")
    mean, var, third = (float(v) for v in _kstats(x))

    if bootstrap_reps == 0:
        # first-order influence functions of the three estimators
        d = x - mean
        m2 = float(np.mean(d**2))
        m3 = float(np.mean(d**3))
        infl = np.vstack([d, d**2 - m2, d**3 - m3 - 3.0 * m2 * d])
        cov = infl @ infl.T / (n * n)
    else:
        if rng is None:
            raise DomainError("bootstrap needs an explicit random generator")
        boot = np.empty((bootstrap_reps, 3))
        # chunked so memory stays bounded for long runs
        step = max(1, 4_000_000 // n)
        for start in range(0, bootstrap_reps, step):
            stop = min(start + step, bootstrap_reps)
            idx = rng.integers(0, n, size=(stop - start, n))
            bm, bv, bt = _kstats(x[idx])
            boot[start:stop] = np.column_stack([bm, bv, bt])
        cov = np.cov(boot, rowvar=False, ddof=1) if bootstrap_reps > 1 else np.zeros((3, 3))
    cov = 0.5 * (cov + cov.T)
    se_mean, se_var, se_third = (math.sqrt(max(float(v), 0.0)) for v in np.diag(cov))
    covariance = tuple(tuple(float(v) for v in row) for row in cov)
    return MomentSummary(n, mean, var, third, se_mean, se_var, se_third, covariance)


def ratio_gradients(summary: MomentSummary) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of F = var/mean and S = third/mean w.r.t. (mean, var, third)."""
    m = summary.mean
    if m == 0:
        raise DomainError("mean is zero; ratio observables are undefined")
    gF = np.array([-summary.var / m**2, 1.0 / m, 0.0])
    gS = np.array([-summary.third / m**2, 0.0, 1.0 / m])
    return gF, gS


def fs_covariance(summary: MomentSummary) -> np.ndarray:
    """2x2 covariance of (F, S) from the moment covariance."""
    gF, gS = ratio_gradients(summary)
    J = np.vstack([gF, gS])
    C = summary.cov_matrix()
    out = J @ C @ J.T
    return 0.5 * (out + out.T)


def fano(summary: MomentSummary) -> Observable:
    """Variance over mean (channels), first-order propagated error."""
    cov = fs_covariance(summary)
    return Observable(summary.var / summary.mean, math.sqrt(max(cov[0, 0], 0.0)))


def symmetry(summary: MomentSummary) -> Observable:
    """Third central moment over mean (channels squared)."""
    cov = fs_covariance(summary)
    return Observable(summary.third / summary.mean, math.sqrt(max(cov[1, 1], 0.0)))


def estimate_zero_offset(dark_samples: Sequence[float], dominance: float = 1.25) -> float:
    """Mean of the pedestal peak of a no-light acquisition."""
    return estimate_pedestal(dark_samples, dominance)[0]


def estimate_pedestal(dark_samples: Sequence[float], dominance: float = 1.25) -> tuple[float, float]:
    """Centre and Gaussian width of the pedestal peak of a no-light acquisition.

    The pedestal is the histogram mode; its centre and width are refined by
    iterating a mean/width estimate over a +-2 sigma window. The mode must be
    ``dominance`` times higher than any peak outside +-3 sigma, otherwise the
    pedestal is ambiguous and :class:`EstimationError` is raised.
    """
    x = np.asarray(dark_samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise DomainError(f"need at least 100 dark samples, got {x.size}")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return lo, 0.0

    nbins = int(np.clip(np.sqrt(x.size), 20, 1000))
    counts, edges = np.histogram(x, bins=nbins)
    width = edges[1] - edges[0]
    top = int(np.argmax(counts))
    centre = 0.5 * (edges[top] + edges[top + 1])

    half = counts[top] / 2.0
    left = top
    while left > 0 and counts[left - 1] > half:
        left -= 1
    right = top
    while right < nbins - 1 and counts[right + 1] > half:
        right += 1
    sigma = max((right - left + 1) * width / 2.3548, width / 2.0)

    # std of a normal truncated at +-2 sigma is 0.8796 sigma
    for _ in range(20):
        window = x[np.abs(x - centre) <= 2.0 * sigma]
        if window.size < 2:
            break
        new_centre = float(window.mean())
        new_sigma = max(float(window.std()) / 0.8796, 1e-12)
        converged = abs(new_centre - centre) <= 1e-9 * max(1.0, abs(centre))
        centre, sigma = new_centre, new_sigma
        if converged:
            break

    centres = 0.5 * (edges[:-1] + edges[1:])
    outside = np.abs(centres - centre) > 3.0 * sigma + width
    inside_peak = counts[~outside].max() if np.any(~outside) else counts[top]
    if np.any(outside) and counts[outside].max() * dominance >= inside_peak:
        raise EstimationError("no dominant pedestal peak in the dark acquisition")
    return centre, sigma


__all__ = [
    "MomentSummary",
    "Observable",
    "summarize_shots",
    "fano",
    "fs_covariance",
    "symmetry",
    "estimate_zero_offset",
    "estimate_pedestal",
]
