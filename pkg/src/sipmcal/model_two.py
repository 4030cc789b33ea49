"""Single-histogram calibration from the resolved peaks of a spectrum.

Each resolved peak is modelled by a Gauss-Hermite line shape

    f(x) = N exp(-w^2 / 2) [1 + h3 H3(w) + h4 H4(w)],   w = (x - xbar) / sigma

with N in counts per channel. Peak spacings give the gain, and peak areas
are fitted with the full detection chain (depth-3 cross-talk cascade) to
recover the light and detector parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .distributions import crosstalk_cascade, convolve_dark, multithermal_probabilities, pmf_coherent
from .errors import DetectionError, DomainError, FitError, PreconditionError
from .fitting import FitResult, nonlinear_least_squares, propagate_errors
from .model_one import COHERENT, THERMAL, Estimate

log = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_SQRT6 = math.sqrt(6.0)
_SQRT24 = math.sqrt(24.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
PARAMS_PER_PEAK = 5


# --------------------------------------------------------------------------
# Histogram and line shape
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Histogram:
    """Binned spectrum; edges in channels, integer counts per bin."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=np.float64)
        counts = np.array(self.counts)
        if edges.ndim != 1 or counts.ndim != 1:
            raise DomainError("bin_edges and counts must be one-dimensional")
        if counts.size != edges.size - 1:
            raise DomainError(f"{edges.size} edges need {edges.size - 1} counts, got {counts.size}")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise DomainError("bin edges must be finite and strictly increasing")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise DomainError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_samples(cls, samples: Sequence[float], bin_width: float = 1.0, origin: float | None = None) -> "Histogram":
        """Histogram of per-shot values with fixed-width bins."""
        x = np.asarray(samples, dtype=np.float64).ravel()
        if x.size == 0:
            raise DomainError("no samples to histogram")
        if not bin_width > 0:
            raise DomainError("bin_width must be > 0")
        start = math.floor(x.min() / bin_width) * bin_width if origin is None else origin
        n = max(1, int(math.ceil((x.max() - start) / bin_width + 1e-12)))
        if x.max() >= start + n * bin_width:
            n += 1
        edges = start + bin_width * np.arange(n + 1)
        counts, _ = np.histogram(x, bins=edges)
        return cls(edges, counts)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class PeakModel:
    N: float
    x_bar: float
    sigma: float
    h3: float = 0.0
    h4: float = 0.0

    def __post_init__(self):
        if not self.N > 0:
            raise DomainError(f"N must be > 0, got {self.N}")
        if not self.sigma > 0:
            raise DomainError(f"sigma must be > 0, got {self.sigma}")
        if not (-1.0 <= self.h3 <= 1.0 and -1.0 <= self.h4 <= 1.0):
            raise DomainError("h3 and h4 must lie in [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.N, self.x_bar, self.sigma, self.h3, self.h4])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return gauss_hermite(np.asarray(x, dtype=np.float64), *self.as_array())


def hermite3(w: np.ndarray) -> np.ndarray:
    return (2.0 * _SQRT2 * w**3 - 3.0 * _SQRT2 * w) / _SQRT6


def hermite4(w: np.ndarray) -> np.ndarray:
    w2 = w * w
    return (4.0 * w2 * w2 - 12.0 * w2 + 3.0) / _SQRT24


def gauss_hermite(x: np.ndarray, N: float, x_bar: float, sigma: float, h3: float, h4: float) -> np.ndarray:
    """Line shape density in counts per channel."""
    w = (x - x_bar) / sigma
    return N * np.exp(-0.5 * w * w) * (1.0 + h3 * hermite3(w) + h4 * hermite4(w))


def _gauss_hermite_grad(x: np.ndarray, N: float, x_bar: float, sigma: float, h3: float, h4: float) -> np.ndarray:
    """Derivatives of the density w.r.t. (N, x_bar, sigma, h3, h4), shape x.shape + (5,)."""
    w = (x - x_bar) / sigma
    e = np.exp(-0.5 * w * w)
    H3, H4 = hermite3(w), hermite4(w)
    P = 1.0 + h3 * H3 + h4 * H4
    dH3 = (6.0 * _SQRT2 * w * w - 3.0 * _SQRT2) / _SQRT6
    dH4 = (16.0 * w**3 - 24.0 * w) / _SQRT24
    dfdw = N * e * (-w * P + h3 * dH3 + h4 * dH4)
    return np.stack([e * P, -dfdw / sigma, -dfdw * w / sigma, N * e * H3, N * e * H4], axis=-1)


# --------------------------------------------------------------------------
# Peak detection
# --------------------------------------------------------------------------
def _find_maxima(counts: np.ndarray, centers: np.ndarray, min_prominence: float) -> np.ndarray:
    top = counts.max()
    idx, props = find_peaks(counts, prominence=min_prominence * top)
    if idx.size == 0:
        return idx
    idx = idx[props["prominences"] > 3.0 * np.sqrt(counts[idx])]
    if idx.size > 2:
        # fluctuations on a sparse peak give several maxima; keep the tallest
        # within half the typical spacing
        min_sep = 0.5 * float(np.median(np.diff(centers[idx])))
        kept: list[int] = []
        for i in idx[np.argsort(-counts[idx], kind="stable")]:
            if all(abs(centers[i] - centers[j]) >= min_sep for j in kept):
                kept.append(int(i))
        idx = np.sort(np.array(kept))
    return idx


def detect_peaks(hist: Histogram, min_prominence: float = 0.02) -> list[PeakModel]:
    """Seed peaks at the local maxima of the histogram.

    A maximum is kept when its prominence exceeds ``min_prominence`` times
    the highest bin and three Poisson standard deviations of its own height
    (so counting fluctuations on a broad peak do not seed extra peaks), and
    maxima closer than half the median spacing to a taller one are dropped.
    The search is then repeated on counts smoothed over half the typical
    peak width. Only interior maxima qualify. Seed widths come from the
    half maximum of each peak, capped at median spacing / 5: peaks of one
    spectrum differ in width, and a broad seed on the narrow pedestal can
    slide onto its neighbour.
    """
    counts = hist.counts.astype(np.float64)
    if counts.size < 2:
        raise DomainError("peak detection needs at least 2 bins")
    if not 0 < min_prominence < 1:
        raise DomainError("min_prominence must lie in (0, 1)")
    if counts.max() <= 0:
        raise DetectionError("empty histogram")
    centers = hist.centers
    idx = _find_maxima(counts, centers, min_prominence)
    if idx.size > 1:
        # matched to the peaks: half their typical width
        width_bins = 0.5 * float(np.median([_half_width_sigma(counts, hist.widths, i) / hist.widths[i] for i in idx]))
        if width_bins >= 1.0:
            counts = gaussian_filter1d(counts, width_bins, mode="constant")
            idx = _find_maxima(counts, centers, min_prominence)
    if idx.size == 0:
        raise DetectionError("no peaks found in the histogram")
    centers = centers[idx]
    widths = hist.widths[idx]
    if idx.size > 1:
        cap = float(np.median(np.diff(centers))) / 5.0
        sigmas = np.array([min(_half_width_sigma(counts, hist.widths, i), cap) for i in idx])
    else:
        sigmas = widths.copy()
    return [
        PeakModel(N=float(counts[i] / wd), x_bar=float(c), sigma=float(s))
        for i, c, wd, s in zip(idx, centers, widths, sigmas)
    ]


def _half_width_sigma(counts: np.ndarray, widths: np.ndarray, i: int) -> float:
    """Gaussian sigma from the full width at half maximum around bin ``i``."""
    half = counts[i] / 2.0
    left = i
    while left > 0 and counts[left - 1] > half:
        left -= 1
    right = i
    while right < counts.size - 1 and counts[right + 1] > half:
        right += 1
    fwhm = float(widths[left:right + 1].sum())
    return max(fwhm / 2.3548, 0.5 * float(widths[i]))


# --------------------------------------------------------------------------
# Multi-peak fit
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class MultiPeakFit:
    peaks: tuple[PeakModel, ...]
    fit: FitResult
    n_resolved: int
    fit_range: tuple[float, float]
    warnings: tuple[str, ...] = field(default=())

    def peak_covariance(self, k: int) -> np.ndarray:
        sl = slice(PARAMS_PER_PEAK * k, PARAMS_PER_PEAK * (k + 1))
        return self.fit.covariance[sl, sl]

    def peak_errors(self, k: int) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.peak_covariance(k)), 0.0, None))


def _bin_integrated(edges_lo: np.ndarray, edges_hi: np.ndarray, nodes: int):
    """Gauss-Legendre nodes and weights mapped onto every bin."""
    t, wt = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (edges_hi - edges_lo)
    mid = 0.5 * (edges_hi + edges_lo)
    return mid[:, None] + half[:, None] * t[None, :], half[:, None] * wt[None, :]


def multipeak_counts(hist: Histogram, params: np.ndarray, nodes: int = 4) -> np.ndarray:
    """Expected counts per bin for a flat parameter vector of peaks."""
    xs, ws = _bin_integrated(hist.bin_edges[:-1], hist.bin_edges[1:], nodes)
    p = np.asarray(params, dtype=np.float64).reshape(-1, PARAMS_PER_PEAK)
    dens = sum(gauss_hermite(xs, *row) for row in p)
    return (dens * ws).sum(axis=1)


def fit_multipeak(
    hist: Histogram,
    seeds: Sequence[PeakModel],
    fit_range: tuple[float, float] | None = None,
    nodes: int = 4,
    errors: str = "model",
    max_reweight: int = 20,
) -> MultiPeakFit:
    """Least-squares fit of a sum of Gauss-Hermite peaks to the histogram.

    The model is integrated over each bin. A pure-Gaussian pass precedes
    the full Gauss-Hermite fit. Without ``fit_range`` the fit spans half a
    peak spacing beyond the outermost seeds, and each position is kept
    within half a spacing of its seed.

    ``errors="data"`` weights bins with sqrt(max(count, 1)). Sparse bins
    then pull every peak low (low counts get high weight), which biases the
    areas of broad peaks. ``errors="model"`` repeats the fit with weights
    sqrt(max(expected, 1)) frozen from the previous pass until the
    parameters settle; the fixed point solves the binned Poisson likelihood
    equations.
    """
    if errors not in ("model", "data"):
        raise DomainError(f"errors must be 'model' or 'data', got {errors!r}")
    seeds = sorted(seeds, key=lambda s: s.x_bar)
    if not seeds:
        raise DomainError("at least one seed peak is required")
    xs = [s.x_bar for s in seeds]
    half = 0.5 * float(np.median(np.diff(xs))) if len(xs) > 1 else 5.0 * seeds[0].sigma
    if fit_range is None:
        fit_range = (xs[0] - half, xs[-1] + half)
    lo, hi = fit_range
    centers = hist.centers
    sel = (centers >= lo) & (centers <= hi)
    if not np.any(sel):
        raise DomainError("fit range contains no bins")
    lo_e = hist.bin_edges[:-1][sel]
    hi_e = hist.bin_edges[1:][sel]
    y = hist.counts[sel].astype(np.float64)
    npar = PARAMS_PER_PEAK * len(seeds)
    if np.count_nonzero(y) <= npar:
        raise DomainError(f"{np.count_nonzero(y)} non-empty bins cannot constrain {npar} parameters")
    sigma_y = np.sqrt(np.maximum(y, 1.0))
    qx, qw = _bin_integrated(lo_e, hi_e, nodes)

    def model(_x: np.ndarray, p: np.ndarray) -> np.ndarray:
        rows = p.reshape(-1, PARAMS_PER_PEAK)
        return (sum(gauss_hermite(qx, *row) for row in rows) * qw).sum(axis=1)

    def jac(_x: np.ndarray, p: np.ndarray) -> np.ndarray:
        rows = p.reshape(-1, PARAMS_PER_PEAK)
        blocks = [(_gauss_hermite_grad(qx, *row) * qw[..., None]).sum(axis=1) for row in rows]
        return np.concatenate(blocks, axis=1)

    init = np.concatenate([s.as_array() for s in seeds])
    # far below a bin width the width is not resolvable from bin contents
    min_sigma = 0.25 * float(np.min(hi_e - lo_e))
    bounds = []
    for s in seeds:
        bounds += [(0.0, math.inf), (s.x_bar - half, s.x_bar + half), (min_sigma, 2.0 * half), (-1.0, 1.0), (-1.0, 1.0)]
    for i, (blo, bhi) in enumerate(bounds):
        # start strictly inside, where the bound transform has a slope
        margin = 1e-3 * (bhi - blo) if math.isfinite(bhi - blo) else 0.0
        init[i] = min(max(init[i], blo + margin), bhi - margin)
    xi = np.arange(y.size)
    # shapes start from pure Gaussians: freeing h3, h4 against badly seeded
    # widths lets them absorb the mismatch and land in a spurious minimum
    gauss_only = np.tile([False, False, False, True, True], len(seeds))
    try:
        stage = nonlinear_least_squares(model, xi, y, sigma_y, init, fixed=gauss_only, bounds=bounds, jac=jac)
        init = stage.params
    except FitError as exc:
        log.warning("Gaussian pre-fit failed (%s); fitting full shapes from the seeds", exc)
    res = nonlinear_least_squares(model, xi, y, sigma_y, init, bounds=bounds, jac=jac)
    reweight_ok = True
    if errors == "model":
        reweight_ok = False
        for _ in range(max_reweight):
            sigma_m = np.sqrt(np.maximum(model(xi, res.params), 1.0))
            new = nonlinear_least_squares(model, xi, y, sigma_m, res.params, bounds=bounds, jac=jac)
            shift = np.abs(new.params - res.params) / np.maximum(new.errors, 1e-300)
            res = new
            if np.all(shift < 1e-3):
                reweight_ok = True
                break

    rows = res.params.reshape(-1, PARAMS_PER_PEAK)
    peaks = tuple(PeakModel(*(float(v) for v in row)) for row in rows)
    warnings = []
    if not res.converged:
        warnings.append("multi-peak fit did not converge")
    if not reweight_ok:
        warnings.append("model-variance weights did not settle")
    for a, b in zip(peaks[:-1], peaks[1:]):
        if abs(b.x_bar - a.x_bar) < 0.5 * min(a.sigma, b.sigma):
            warnings.append(f"peaks at {a.x_bar:.4g} and {b.x_bar:.4g} collapsed onto each other")
    for w in warnings:
        log.warning(w)
    order = np.argsort([p.x_bar for p in peaks])
    if np.any(np.diff(order) < 0):
        # keep the invariant of increasing positions, reorder parameters and covariance with it
        perm = np.concatenate([np.arange(PARAMS_PER_PEAK) + PARAMS_PER_PEAK * k for k in order])
        peaks = tuple(peaks[k] for k in order)
        res = FitResult(res.params[perm], res.covariance[np.ix_(perm, perm)], res.chi2, res.dof,
                        res.converged, res.n_iterations, res.chi2_history)
    return MultiPeakFit(peaks, res, len(peaks), (float(lo), float(hi)), tuple(warnings))


# --------------------------------------------------------------------------
# Areas and gain
# --------------------------------------------------------------------------
_AREA_T, _AREA_W = np.polynomial.legendre.leggauss(200)


def peak_area(N: float, x_bar: float, sigma: float, h3: float, h4: float) -> float:
    """Integral of the line shape over +-8 sigma (counts)."""
    w = 8.0 * _AREA_T
    return float(8.0 * sigma * (_AREA_W @ gauss_hermite(x_bar + sigma * w, N, x_bar, sigma, h3, h4)))


def peak_area_closed_form(N: float, sigma: float, h4: float) -> float:
    """Exact integral under the Hermite normalisation used here."""
    return N * sigma * _SQRT2PI * (1.0 + h4 * math.sqrt(3.0 / 8.0))


def peak_area_simplified(N: float, sigma: float, h4: float) -> float:
    """The widely quoted area formula N sigma (sqrt(2 pi) + h4).

    It does not match the integral of the normalised polynomials used for
    fitting; kept for comparison with published values.
    """
    return N * sigma * (_SQRT2PI + h4)


def peak_areas(fit: MultiPeakFit) -> list[Estimate]:
    """Area of every fitted peak with propagated errors."""
    if not fit.fit.converged:
        raise FitError("peak areas need a converged multi-peak fit")
    out = []
    for k, peak in enumerate(fit.peaks):
        p = peak.as_array()
        area = peak_area(*p)
        grad = np.empty(PARAMS_PER_PEAK)
        for i in range(PARAMS_PER_PEAK):
            h = 1e-6 * max(abs(p[i]), 1e-3)
            up, dn = p.copy(), p.copy()
            up[i] += h
            dn[i] -= h
            grad[i] = (peak_area(*up) - peak_area(*dn)) / (2.0 * h)
        var = float(propagate_errors(grad[None, :], fit.peak_covariance(k))[0, 0])
        out.append(Estimate(area, math.sqrt(max(var, 0.0))))
    return out


@dataclass(frozen=True)
class GainFromPeaks:
    gamma: Estimate
    deltas: tuple[Estimate, ...]


def gain_from_peaks(fit: MultiPeakFit) -> GainFromPeaks:
    """Inverse-variance weighted mean of consecutive peak spacings.

    Neighbouring spacings share a peak, so the error of the mean is
    propagated with their full covariance.
    """
    n = fit.n_resolved
    if n < 2:
        raise DomainError("gain needs at least 2 peaks")
    pos_idx = [PARAMS_PER_PEAK * k + 1 for k in range(n)]
    C = fit.fit.covariance[np.ix_(pos_idx, pos_idx)]
    x = np.array([p.x_bar for p in fit.peaks])
    D = np.zeros((n - 1, n))
    D[np.arange(n - 1), np.arange(n - 1)] = -1.0
    D[np.arange(n - 1), np.arange(1, n)] = 1.0
    deltas = D @ x
    dcov = propagate_errors(D, C)
    dvar = np.diag(dcov)
    if np.any(~(dvar > 0)):
        raise FitError("peak positions have no positive variance")
    w = (1.0 / dvar) / np.sum(1.0 / dvar)
    gamma = float(w @ deltas)
    err = math.sqrt(max(float(w @ dcov @ w), 0.0))
    return GainFromPeaks(
        Estimate(gamma, err),
        tuple(Estimate(float(d), math.sqrt(float(v))) for d, v in zip(deltas, dvar)),
    )


# --------------------------------------------------------------------------
# Avalanche statistics
# --------------------------------------------------------------------------
_STAT_NAMES = ("m_el", "m_dc", "mu", "epsilon", "normalization")
_FIXABLE = ("m_dc", "mu", "epsilon")


@dataclass(frozen=True)
class StatisticsFit:
    """Recovered light and detector parameters from peak areas.

    For coherent light the dark mean is not separable from the light mean
    unless it is fixed; by default ``m_el`` then holds the combined mean and
    ``m_dc`` is reported as 0 with ``combined_mean`` set.
    """

    m_el: Estimate
    m_dc: Estimate
    epsilon: Estimate
    mu: Estimate
    normalization: Estimate
    chi2: float
    dof: int
    converged: bool
    light_kind: str
    combined_mean: bool
    fit: FitResult = field(repr=False)

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def statistics_model(
    indices: Sequence[int], params: Sequence[float], light_kind: str, depth: int = 3
) -> np.ndarray:
    """Expected areas at the given avalanche counts.

    ``params`` are (m_el, m_dc, mu, epsilon, normalization). The pmf is cut
    at the largest index; this is exact because every primary avalanche
    yields at least one output avalanche.
    """
    m_el, m_dc, mu, eps, norm = (float(v) for v in params)
    idx = np.asarray(indices, dtype=np.int64)
    cutoff = int(idx.max())
    if light_kind == COHERENT:
        light = pmf_coherent(m_el, cutoff)
    elif light_kind == THERMAL:
        light = multithermal_probabilities(m_el, mu, cutoff)
    else:
        raise DomainError(f"light_kind must be '{COHERENT}' or '{THERMAL}'")
    dist = convolve_dark(light, m_dc)
    dist = crosstalk_cascade(dist, eps, depth)
    p = dist.probabilities
    out = np.zeros(idx.size)
    inside = idx < p.size
    out[inside] = p[idx[inside]]
    return norm * out


def fit_avalanche_statistics(
    areas: Sequence[Estimate | tuple[float, float]],
    light_kind: str,
    fixed: Mapping[str, float] | None = None,
    indices: Sequence[int] | None = None,
    depth: int = 3,
) -> StatisticsFit:
    """Fit peak areas with the detection-chain pmf.

    ``fixed`` may pin ``epsilon``, ``m_dc`` and ``mu`` (thermal only) to
    externally measured values, lowering the number of peaks required.
    ``indices`` are the avalanche counts of the peaks (default 0, 1, ...).
    """
    if light_kind not in (COHERENT, THERMAL):
        raise DomainError(f"light_kind must be '{COHERENT}' or '{THERMAL}'")
    vals = np.array([a.value if isinstance(a, Estimate) else a[0] for a in areas], dtype=np.float64)
    errs = np.array([a.error if isinstance(a, Estimate) else a[1] for a in areas], dtype=np.float64)
    idx = np.arange(vals.size) if indices is None else np.asarray(indices, dtype=np.int64)
    if idx.shape != vals.shape:
        raise DomainError("indices must match the number of areas")
    if np.any(idx < 0) or np.unique(idx).size != idx.size:
        raise DomainError("indices must be distinct non-negative integers")
    fixed = dict(fixed or {})
    unknown = set(fixed) - set(_FIXABLE)
    if unknown:
        raise DomainError(f"cannot fix {sorted(unknown)}; choose from {_FIXABLE}")

    combined = light_kind == COHERENT and "m_dc" not in fixed
    mask = [False, False, False, False, False]
    if light_kind == COHERENT:
        fixed.setdefault("m_dc", 0.0)
        fixed["mu"] = 1.0
    for name in fixed:
        mask[_STAT_NAMES.index(name)] = True
    n_free = mask.count(False)
    if vals.size <= n_free:
        raise PreconditionError(
            f"{light_kind} statistics fit with {n_free} free parameters requires at least "
            f"{n_free + 1} resolved peaks, got {vals.size}"
        )
    if np.any(~(errs > 0)):
        raise DomainError("all area errors must be > 0")

    eps0 = float(fixed.get("epsilon", 0.05))
    total = float(vals.sum())
    if not total > 0:
        raise DomainError("peak areas sum to zero")
    m0 = max(float(idx @ vals) / total / (1.0 + eps0), 1e-3)
    init = [
        m0,
        float(fixed.get("m_dc", 0.1)),
        float(fixed.get("mu", 1.0)),
        eps0,
        total,
    ]
    if not 0.0 <= init[3] < 1.0:
        raise DomainError("fixed epsilon must lie in [0, 1)")
    bounds = [(0.0, math.inf), (0.0, math.inf), (0.0, math.inf), (0.0, 1.0), (0.0, math.inf)]
    if not mask[1] and init[1] <= 0:
        init[1] = 0.1

    def model(x: np.ndarray, p: np.ndarray) -> np.ndarray:
        return statistics_model(x, p, light_kind, depth)

    res = nonlinear_least_squares(model, idx, vals, errs, init, fixed=mask, bounds=bounds)
    if not res.converged:
        log.warning("avalanche statistics fit did not converge")
    p, e = res.params, res.errors
    est = [Estimate(float(v), float(s)) for v, s in zip(p, e)]
    return StatisticsFit(
        m_el=est[0],
        m_dc=est[1],
        mu=est[2],
        epsilon=est[3],
        normalization=est[4],
        chi2=res.chi2,
        dof=res.dof,
        converged=res.converged,
        light_kind=light_kind,
        combined_mean=combined,
        fit=res,
    )


def calibrate_histogram(
    hist: Histogram,
    light_kind: str,
    fixed: Mapping[str, float] | None = None,
    min_prominence: float = 0.02,
    depth: int = 3,
    zero_offset: float | None = None,
) -> tuple[MultiPeakFit, GainFromPeaks, list[Estimate], StatisticsFit]:
    """Peak detection, multi-peak fit, gain and statistics fit in one call.

    Peaks are assigned avalanche counts round((x_bar - x0) / gamma) with
    ``x0 = zero_offset``, or the first peak's position when no offset is
    given (the first resolved peak is then taken as the pedestal).
    """
    seeds = detect_peaks(hist, min_prominence)
    mp = fit_multipeak(hist, seeds)
    if mp.n_resolved < 2:
        raise PreconditionError("a single resolved peak fixes neither gain nor statistics")
    gain = gain_from_peaks(mp)
    areas = peak_areas(mp)
    x0 = mp.peaks[0].x_bar if zero_offset is None else zero_offset
    indices = np.rint((np.array([p.x_bar for p in mp.peaks]) - x0) / gain.gamma.value).astype(np.int64)
    if np.any(indices < 0) or np.unique(indices).size != indices.size:
        raise PreconditionError(f"peaks do not map onto distinct avalanche counts: {indices.tolist()}")
    stats = fit_avalanche_statistics(areas, light_kind, fixed=fixed, indices=indices, depth=depth)
    return mp, gain, areas, stats


__all__ = [
    "Histogram",
    "PeakModel",
    "MultiPeakFit",
    "GainFromPeaks",
    "StatisticsFit",
    "hermite3",
    "hermite4",
    "gauss_hermite",
    "detect_peaks",
    "multipeak_counts",
    "fit_multipeak",
    "peak_area",
    "peak_area_closed_form",
    "peak_area_simplified",
    "peak_areas",
    "gain_from_peaks",
    "statistics_model",
    "fit_avalanche_statistics",
    "calibrate_histogram",
]
