"""Monte Carlo ground truth: per-shot outputs and dark-count threshold scans."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import Coherent, Degenerate, DetectorParams, LightModel, MultiThermal
from .errors import DomainError


@dataclass(frozen=True)
class SimConfig:
    light: LightModel
    det: DetectorParams
    n_shots: int = 20_000
    seed: int = 0
    parallel_chunks: int = 1

    def __post_init__(self):
        if self.n_shots < 1:
            raise DomainError(f"n_shots must be >= 1, got {self.n_shots}")
        if self.parallel_chunks < 1:
            raise DomainError(f"parallel_chunks must be >= 1, got {self.parallel_chunks}")


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), chunk]))


def _draw_photons(light: LightModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(light, Coherent):
        return rng.poisson(light.mean, n)
    if isinstance(light, MultiThermal):
        if light.mean == 0:
            return np.zeros(n, dtype=np.int64)
        return rng.negative_binomial(light.modes, light.modes / (light.modes + light.mean), n)
    if isinstance(light, Degenerate):
        return np.full(n, int(light.n), dtype=np.int64)
    raise DomainError(f"unknown light model {light!r}")


def cascade_counts(primaries: np.ndarray, epsilon: float, depth: int, rng: np.random.Generator) -> np.ndarray:
    """Total avalanches after cross-talk, one Bernoulli child per avalanche per generation."""
    total = primaries.astype(np.int64, copy=True)
    generation = primaries
    for _ in range(depth):
        if epsilon == 0:
            break
        generation = rng.binomial(generation, epsilon)
        total += generation
    return total


def _simulate_chunk(light: LightModel, det: DetectorParams, n: int, rng: np.random.Generator) -> np.ndarray:
    photons = _draw_photons(light, n, rng)
    detected = rng.binomial(photons, det.eta)
    primaries = detected + rng.poisson(det.dark_mean, n)
    k = cascade_counts(primaries, det.epsilon, det.cascade_depth, rng)
    x = det.zero_offset + det.gamma * k
    if det.pedestal_width > 0 or det.cell_width > 0:
        width = np.sqrt(det.pedestal_width**2 + k * det.cell_width**2)
        x = x + width * rng.standard_normal(n)
    return x.astype(np.float64)


def simulate_avalanches(config: SimConfig) -> np.ndarray:
    """Avalanche counts only (no gain, offset or smearing)."""
    det = config.det
    noiseless = DetectorParams(
        eta=det.eta, dark_mean=det.dark_mean, epsilon=det.epsilon,
        cascade_depth=det.cascade_depth, gamma=1.0,
    )
    x = simulate_shots(SimConfig(config.light, noiseless, config.n_shots, config.seed, config.parallel_chunks))
    return np.rint(x).astype(np.int64)


def simulate_shots(config: SimConfig) -> np.ndarray:
    """Per-shot output values in channels.

    Shots are split into ``parallel_chunks`` contiguous chunks; chunk ``c``
    draws from a generator seeded with ``(seed, c)`` so the output depends
    only on the configuration.
    """
    chunks = config.parallel_chunks
    sizes = [config.n_shots // chunks + (1 if c < config.n_shots % chunks else 0) for c in range(chunks)]

    def run(c: int) -> np.ndarray:
        return _simulate_chunk(config.light, config.det, sizes[c], _chunk_rng(config.seed, c))

    if chunks == 1:
        return run(0)
    with ThreadPoolExecutor(max_workers=min(chunks, 8)) as pool:
        parts = list(pool.map(run, range(chunks)))
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# Threshold scan
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class StaircaseConfig:
    """Dark-count threshold scan.

    Thresholds and noise share the units of ``single_cell_amplitude``.
    ``observation_time`` fixes the number of simulated dark events
    (``round(dark_rate * observation_time)``).
    """

    dark_rate: float = 540e3
    epsilon: float = 0.25
    cascade_depth: int = 1
    single_cell_amplitude: float = 1.0
    amplitude_noise: float = 0.0
    thresholds: Sequence[float] = field(default_factory=lambda: tuple(np.round(np.arange(0.1, 4.05, 0.1), 10)))
    observation_time: float = 1e6 / 540e3
    seed: int = 0

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=np.float64)
        if th.size == 0 or np.any(np.diff(th) <= 0):
            raise DomainError("thresholds must be non-empty and strictly increasing")
        if not self.observation_time > 0:
            raise DomainError("observation_time must be > 0")
        if not self.dark_rate >= 0:
            raise DomainError("dark_rate must be >= 0")
        if not 0 <= self.epsilon < 1:
            raise DomainError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.cascade_depth not in (1, 2, 3):
            raise DomainError("cascade_depth must be 1, 2 or 3")
        if not self.single_cell_amplitude > 0 or self.amplitude_noise < 0:
            raise DomainError("single_cell_amplitude must be > 0 and amplitude_noise >= 0")

    @property
    def n_events(self) -> int:
        return max(1, int(round(self.dark_rate * self.observation_time)))


def simulate_staircase(config: StaircaseConfig) -> list[tuple[float, float]]:
    """Dark rate (Hz) above each threshold."""
    rng = _chunk_rng(config.seed, 0)
    n = config.n_events
    cells = cascade_counts(np.ones(n, dtype=np.int64), config.epsilon, config.cascade_depth, rng)
    amp = cells * config.single_cell_amplitude
    if config.amplitude_noise > 0:
        amp = amp + config.amplitude_noise * rng.standard_normal(n)
    amp.sort()
    th = np.asarray(config.thresholds, dtype=np.float64)
    above = n - np.searchsorted(amp, th, side="right")
    rates = config.dark_rate * above / n
    return [(float(t), float(r)) for t, r in zip(th, rates)]


def xtalk_from_staircase(
    staircase: Sequence[tuple[float, float]],
    t1: float | None = None,
    t2: float | None = None,
    cell_amplitude: float = 1.0,
) -> float:
    """Cross-talk probability as the rate ratio above ``t2`` and ``t1``.

    Defaults place ``t1`` at half and ``t2`` at one and a half single-cell
    amplitudes; rates are linearly interpolated between scan points.
    """
    t1 = 0.5 * cell_amplitude if t1 is None else t1
    t2 = 1.5 * cell_amplitude if t2 is None else t2
    th = np.array([s[0] for s in staircase], dtype=np.float64)
    rate = np.array([s[1] for s in staircase], dtype=np.float64)
    if not t1 < t2:
        raise DomainError("t1 must be below t2")
    if t1 < th[0] or t2 > th[-1]:
        raise DomainError(f"thresholds {t1}, {t2} outside scanned range [{th[0]}, {th[-1]}]")
    nu1 = float(np.interp(t1, th, rate))
    nu2 = float(np.interp(t2, th, rate))
    if nu1 == 0:
        raise DomainError("zero rate at the lower threshold")
    return nu2 / nu1


__all__ = [
    "SimConfig",
    "StaircaseConfig",
    "simulate_shots",
    "simulate_avalanches",
    "cascade_counts",
    "simulate_staircase",
    "xtalk_from_staircase",
]
