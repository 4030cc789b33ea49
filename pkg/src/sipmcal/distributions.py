"""Exact finite-support photon and avalanche statistics.

Every stage of the detection chain is a map between probability mass
functions over non-negative integers:

    light pmf -> binomial loss (eta) -> + Poisson dark counts
              -> cross-talk cascade (epsilon, depth) -> gain/offset

All transforms are exact on the retained support; truncation happens only
when an analytic source pmf is generated, and then with a tail mass far below
the stated 1e-10 budget so that third-order moments survive to ~1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import special, stats

from . import kernels
from .errors import DomainError

TAIL_MASS = 1e-16
MAX_CUTOFF = 1_000_000


@dataclass(frozen=True)
class PhotonDistribution:
    """Probability mass function over counts ``0..cutoff``."""

    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=np.float64, copy=True).ravel()
        if p.size == 0:
            raise DomainError("a distribution needs at least one entry")
        if not np.all(np.isfinite(p)):
            raise DomainError("probabilities must be finite")
        # round-off from exact transforms can leave -1e-300-ish entries
        if p.min() < -1e-14:
            raise DomainError(f"negative probability {p.min():g}")
        np.clip(p, 0.0, None, out=p)
        if p.sum() > 1.0 + 1e-12:
            raise DomainError(f"probabilities sum to {p.sum():.15g} > 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def cutoff(self) -> int:
        return self.probabilities.size - 1

    @property
    def total(self) -> float:
        return float(self.probabilities.sum())

    def __len__(self) -> int:
        return self.probabilities.size

    def __getitem__(self, k: int) -> float:
        if 0 <= k < self.probabilities.size:
            return float(self.probabilities[k])
        return 0.0

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return self.total >= 1.0 - tol

    def mean(self) -> float:
        k = np.arange(self.probabilities.size)
        return float(k @ self.probabilities / self.total)

    def central_moment(self, order: int) -> float:
        k = np.arange(self.probabilities.size, dtype=np.float64)
        d = k - self.mean()
        return float(d**order @ self.probabilities / self.total)

    def variance(self) -> float:
        return self.central_moment(2)

    def third_central(self) -> float:
        return self.central_moment(3)

    def moments(self) -> tuple[float, float, float]:
        """Mean, variance and third central moment."""
        return self.mean(), self.variance(), self.third_central()

    def trimmed(self, tol: float = 0.0) -> "PhotonDistribution":
        """Drop trailing entries not larger than ``tol``."""
        nz = np.nonzero(self.probabilities > tol)[0]
        end = nz[-1] + 1 if nz.size else 1
        return PhotonDistribution(self.probabilities[:end])


# --------------------------------------------------------------------------
# Light models
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Coherent:
    mean: float

    def __post_init__(self):
        if not self.mean >= 0:
            raise DomainError(f"mean photon number must be >= 0, got {self.mean}")

    def pmf(self, cutoff: int | None = None) -> PhotonDistribution:
        return pmf_coherent(self.mean, cutoff)


@dataclass(frozen=True)
class MultiThermal:
    mean: float
    modes: float = 1.0

    def __post_init__(self):
        if not self.mean >= 0:
            raise DomainError(f"mean photon number must be >= 0, got {self.mean}")
        if not self.modes >= 1:
            raise DomainError(f"number of modes must be >= 1, got {self.modes}")

    def pmf(self, cutoff: int | None = None) -> PhotonDistribution:
        return pmf_multithermal(self.mean, self.modes, cutoff)


@dataclass(frozen=True)
class Degenerate:
    """Fixed photon number; a test source, not a physical state."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise DomainError(f"photon number must be a non-negative integer, got {self.n}")

    @property
    def mean(self) -> float:
        return float(self.n)

    def pmf(self, cutoff: int | None = None) -> PhotonDistribution:
        p = np.zeros(int(self.n) + 1)
        p[-1] = 1.0
        return PhotonDistribution(p)


LightModel = Union[Coherent, MultiThermal, Degenerate]


@dataclass(frozen=True)
class DetectorParams:
    """Detection chain parameters.

    ``gamma`` and the widths are in ADC channels; ``dark_mean`` is the mean
    number of dark avalanches per gate.
    """

    eta: float = 0.15
    dark_mean: float = 0.108
    epsilon: float = 0.25
    cascade_depth: int = 1
    gamma: float = 75.0
    zero_offset: float = 0.0
    pedestal_width: float = 0.0
    cell_width: float = 0.0

    def __post_init__(self):
        _check_probability(self.eta, "eta")
        if not self.dark_mean >= 0:
            raise DomainError(f"dark_mean must be >= 0, got {self.dark_mean}")
        _check_crosstalk(self.epsilon)
        if self.cascade_depth not in (1, 2, 3):
            raise DomainError(f"cascade_depth must be 1, 2 or 3, got {self.cascade_depth}")
        if not self.gamma > 0:
            raise DomainError(f"gamma must be > 0, got {self.gamma}")
        if not (self.pedestal_width >= 0 and self.cell_width >= 0):
            raise DomainError("smearing widths must be >= 0")


def _check_probability(x: float, name: str) -> None:
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {x}")


def _check_crosstalk(eps: float) -> None:
    if not 0.0 <= eps < 1.0:
        raise DomainError(f"epsilon must lie in [0, 1), got {eps}")


def _as_pmf(dist: PhotonDistribution | Sequence[float]) -> PhotonDistribution:
    if isinstance(dist, PhotonDistribution):
        return dist
    return PhotonDistribution(np.asarray(dist, dtype=np.float64))


# --------------------------------------------------------------------------
# Source distributions
# --------------------------------------------------------------------------
def _poisson_cutoff(mean: float) -> int:
    if mean == 0:
        return 0
    n = int(stats.poisson.isf(TAIL_MASS, mean))
    while stats.poisson.sf(n, mean) >= TAIL_MASS and n < MAX_CUTOFF:
        n += 1 + n // 100
    return min(n, MAX_CUTOFF)


def pmf_coherent(mean: float, cutoff: int | None = None) -> PhotonDistribution:
    """Poisson photon-number distribution of a coherent state."""
    if not mean >= 0:
        raise DomainError(f"mean must be >= 0, got {mean}")
    if cutoff is None:
        cutoff = _poisson_cutoff(mean)
    elif cutoff < 0:
        raise DomainError(f"cutoff must be >= 0, got {cutoff}")
    n = np.arange(cutoff + 1)
    if mean == 0:
        p = np.zeros(cutoff + 1)
        p[0] = 1.0
    else:
        p = stats.poisson.pmf(n, mean)
    return PhotonDistribution(p)


def _multithermal_log_pmf(n: np.ndarray, mean: float, modes: float) -> np.ndarray:
    return (
        special.gammaln(n + modes)
        - special.gammaln(n + 1)
        - special.gammaln(modes)
        - modes * np.log1p(mean / modes)
        - n * np.log1p(modes / mean)
    )


def _multithermal_cutoff(mean: float, modes: float) -> int:
    if mean == 0:
        return 0
    p = modes / (modes + mean)
    n = int(stats.nbinom.isf(TAIL_MASS, modes, p))
    while stats.nbinom.sf(n, modes, p) >= TAIL_MASS and n < MAX_CUTOFF:
        n += 1 + n // 100
    return min(n, MAX_CUTOFF)


def multithermal_probabilities(mean: float, modes: float, cutoff: int | None = None) -> np.ndarray:
    """Raw multi-mode thermal pmf values; accepts any ``modes > 0``.

    Fits need the pmf as a smooth function of ``modes`` on both sides of 1,
    so the range check of :class:`MultiThermal` is not applied here.
    """
    if not modes > 0:
        raise DomainError(f"modes must be > 0, got {modes}")
    if cutoff is None:
        cutoff = _multithermal_cutoff(mean, modes)
    n = np.arange(cutoff + 1, dtype=np.float64)
    if mean == 0:
        p = np.zeros(cutoff + 1)
        p[0] = 1.0
        return p
    return np.exp(_multithermal_log_pmf(n, mean, modes))


def pmf_multithermal(mean: float, modes: float, cutoff: int | None = None) -> PhotonDistribution:
    """Photon-number distribution of ``modes`` independent thermal modes.

    Real-valued ``modes`` are allowed; factorials go through log-gamma.
    """
    if not mean >= 0:
        raise DomainError(f"mean must be >= 0, got {mean}")
    if not modes >= 1:
        raise DomainError(f"modes must be >= 1, got {modes}")
    if cutoff is not None and cutoff < 0:
        raise DomainError(f"cutoff must be >= 0, got {cutoff}")
    return PhotonDistribution(multithermal_probabilities(mean, modes, cutoff))


# --------------------------------------------------------------------------
# Detection chain
# --------------------------------------------------------------------------
def bernoulli_loss(dist: PhotonDistribution, eta: float) -> PhotonDistribution:
    """Binomial thinning: each photon is detected with probability ``eta``."""
    _check_probability(eta, "eta")
    dist = _as_pmf(dist)
    if eta == 1.0:
        return dist
    return PhotonDistribution(kernels.compose(dist.probabilities, np.array([1.0 - eta, eta])))


def convolve_dark(dist: PhotonDistribution, dark_mean: float) -> PhotonDistribution:
    """Add an independent Poisson number of dark avalanches."""
    if not dark_mean >= 0:
        raise DomainError(f"dark_mean must be >= 0, got {dark_mean}")
    dist = _as_pmf(dist)
    if dark_mean == 0:
        return dist
    dark = pmf_coherent(dark_mean).probabilities
    return PhotonDistribution(np.convolve(dist.probabilities, dark))


def crosstalk_first_order(dist: PhotonDistribution, epsilon: float) -> PhotonDistribution:
    """Each primary avalanche fires one neighbour with probability ``epsilon``.

    Evaluated term by term from the binomial kernel C(k, l); kept separate
    from :func:`crosstalk_cascade` so the two can check each other.
    """
    _check_crosstalk(epsilon)
    dist = _as_pmf(dist)
    if epsilon == 0:
        return dist
    p = dist.probabilities
    out = np.zeros(2 * p.size - 1)
    log_e, log_1me = math.log(epsilon), math.log1p(-epsilon)
    for l, pl in enumerate(p):
        if pl == 0.0:
            continue
        j = np.arange(l + 1)
        # log space: scipy's binom.pmf overflows for subnormal epsilon
        log_c = special.gammaln(l + 1) - special.gammaln(j + 1) - special.gammaln(l - j + 1)
        out[l : 2 * l + 1] += pl * np.exp(log_c + j * log_e + (l - j) * log_1me)
    return PhotonDistribution(out)


def cascade_offspring(epsilon: float, depth: int) -> np.ndarray:
    """Pmf of the avalanche count started by one primary avalanche.

    Each avalanche fires at most one child, for up to ``depth`` generations,
    so a primary produces a chain of 1..depth+1 avalanches.
    """
    h = np.zeros(depth + 2)
    for g in range(depth):
        h[g + 1] = epsilon**g * (1.0 - epsilon)
    h[depth + 1] = epsilon**depth
    return h


def crosstalk_cascade(dist: PhotonDistribution, epsilon: float, depth: int) -> PhotonDistribution:
    """Nested Bernoulli cross-talk generations up to ``depth``."""
    _check_crosstalk(epsilon)
    if depth not in (1, 2, 3):
        raise DomainError(f"depth must be 1, 2 or 3, got {depth}")
    dist = _as_pmf(dist)
    if epsilon == 0:
        return dist
    return PhotonDistribution(kernels.compose(dist.probabilities, cascade_offspring(epsilon, depth)))


def chain_response(light: LightModel, det: DetectorParams) -> PhotonDistribution:
    """Avalanche-count distribution seen by the detector for ``light``."""
    p = light.pmf()
    p = bernoulli_loss(p, det.eta)
    p = convolve_dark(p, det.dark_mean)
    return crosstalk_cascade(p, det.epsilon, det.cascade_depth)


def output_moments(
    dist: PhotonDistribution, gamma: float, zero_offset: float = 0.0
) -> tuple[float, float, float]:
    """Mean, variance and third central moment in channel units."""
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    m, v, t = _as_pmf(dist).moments()
    return gamma * m + zero_offset, gamma**2 * v, gamma**3 * t


def fidelity(p: PhotonDistribution | Sequence[float], q: PhotonDistribution | Sequence[float]) -> float:
    """Overlap sum of square roots of two pmfs."""
    a = _as_pmf(p).probabilities
    b = _as_pmf(q).probabilities
    n = min(a.size, b.size)
    f = float(np.sqrt(a[:n] * b[:n]).sum())
    return min(f, 1.0)


def rebin_to_counts(samples: Sequence[float], gamma: float, zero_offset: float = 0.0) -> PhotonDistribution:
    """Empirical avalanche-count pmf from channel values.

    Rounds to the nearest integer with halves going up; negative counts are
    folded into bin 0.
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma}")
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("no samples to rebin")
    k = np.floor((x - zero_offset) / gamma + 0.5).astype(np.int64)
    np.clip(k, 0, None, out=k)
    counts = np.bincount(k)
    return PhotonDistribution(counts / x.size)


__all__ = [
    "PhotonDistribution",
    "Coherent",
    "MultiThermal",
    "Degenerate",
    "LightModel",
    "DetectorParams",
    "pmf_coherent",
    "pmf_multithermal",
    "multithermal_probabilities",
    "bernoulli_loss",
    "convolve_dark",
    "crosstalk_first_order",
    "crosstalk_cascade",
    "cascade_offspring",
    "chain_response",
    "output_moments",
    "fidelity",
    "rebin_to_counts",
]
