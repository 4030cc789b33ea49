from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from sipmcal.distributions import (
    Coherent,
    Degenerate,
    DetectorParams,
    MultiThermal,
    chain_response,
    output_moments,
)
from sipmcal.errors import DomainError
from sipmcal.moments import summarize_shots
from sipmcal.simulator import (
    SimConfig,
    StaircaseConfig,
    simulate_avalanches,
    simulate_shots,
    simulate_staircase,
    xtalk_from_staircase,
)

OFF = dict(dark_mean=0.0, epsilon=0.0)


def chi2_per_dof(counts, expected, min_expected=5.0):
    """Pearson chi2 with adjacent low-expectation bins merged."""
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(counts, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if exp:
        obs[-1] += o_acc
        exp[-1] += e_acc
    obs, exp = np.array(obs), np.array(exp)
    return float(np.sum((obs - exp) ** 2 / exp)) / max(len(exp) - 1, 1)


def test_degenerate_noiseless():
    x = simulate_shots(SimConfig(Degenerate(3), DetectorParams(eta=1.0, gamma=10.0, **OFF), 100, seed=1))
    np.testing.assert_array_equal(x, 30.0)


def test_thinned_poisson_mean():
    n = 100_000
    x = simulate_shots(SimConfig(Coherent(2.0), DetectorParams(eta=0.5, gamma=1.0, **OFF), n, seed=2))
    assert abs(x.mean() - 1.0) < 5 * np.sqrt(1.0 / n)


def test_full_chain_moments():
    det = DetectorParams(eta=0.15, dark_mean=0.3, epsilon=0.1, cascade_depth=3, gamma=75.0)
    x = simulate_shots(SimConfig(Coherent(20.0), det, 100_000, seed=3))
    s = summarize_shots(x)
    m, v, t = output_moments(chain_response(Coherent(20.0), det), 75.0)
    assert abs(s.mean - m) < 5 * s.se_mean
    assert abs(s.var - v) < 5 * s.se_var
    assert abs(s.third - t) < 5 * s.se_third


def test_determinism():
    cfg = SimConfig(MultiThermal(5.0, 1.5), DetectorParams(eta=0.4, pedestal_width=2.0, cell_width=1.0), 5000,
                    seed=99, parallel_chunks=4)
    np.testing.assert_array_equal(simulate_shots(cfg), simulate_shots(cfg))


def test_chunking_changes_sequence_not_distribution():
    det = DetectorParams(eta=0.3, dark_mean=0.2, epsilon=0.1, pedestal_width=3.0, cell_width=2.0)
    rejections = 0
    for trial in range(100):
        a = simulate_shots(SimConfig(Coherent(8.0), det, 2000, seed=trial, parallel_chunks=1))
        b = simulate_shots(SimConfig(Coherent(8.0), det, 2000, seed=trial, parallel_chunks=3))
        assert not np.array_equal(a, b)
        rejections += stats.ks_2samp(a, b).pvalue < 0.01
    assert rejections < 5


@pytest.mark.parametrize("seed", range(5))
def test_rebinned_pmf_matches_chain(seed):
    rng = np.random.default_rng(seed)
    light = Coherent(rng.uniform(2, 20)) if seed % 2 else MultiThermal(rng.uniform(1, 6), rng.uniform(1, 3))
    det = DetectorParams(eta=rng.uniform(0.1, 0.9), dark_mean=rng.uniform(0, 0.5),
                         epsilon=rng.uniform(0, 0.3), cascade_depth=int(rng.integers(1, 4)))
    n = 100_000
    k = simulate_avalanches(SimConfig(light, det, n, seed=seed))
    p = chain_response(light, det).probabilities
    counts = np.bincount(k, minlength=p.size)
    assert counts.size == p.size or counts[p.size:].sum() == 0
    assert chi2_per_dof(counts[: p.size], n * p) < 2.0


def test_config_validation():
    with pytest.raises(DomainError):
        SimConfig(Coherent(1.0), DetectorParams(), n_shots=0)
    with pytest.raises(DomainError):
        StaircaseConfig(thresholds=(1.0, 0.5))


class TestStaircase:
    def test_single_step(self):
        sc = simulate_staircase(StaircaseConfig(dark_rate=1000.0, epsilon=0.0, thresholds=(0.5, 0.99, 1.0, 1.5),
                                                observation_time=10.0))
        assert [r for _, r in sc] == [1000.0, 1000.0, 0.0, 0.0]

    def test_table_values(self):
        cfg = StaircaseConfig(dark_rate=540e3, epsilon=0.25)
        sc = simulate_staircase(cfg)
        n = cfg.n_events
        assert n == 10**6
        rate = dict(sc)
        assert rate[0.5] == 540e3
        nu2 = rate[1.5]
        sd = 540e3 * np.sqrt(0.25 * 0.75 / n)
        assert abs(nu2 - 0.25 * 540e3) < 3 * sd

    def test_monotone(self):
        sc = simulate_staircase(StaircaseConfig(epsilon=0.2, amplitude_noise=0.1, cascade_depth=3))
        rates = np.array([r for _, r in sc])
        assert np.all(np.diff(rates) <= 0)

    def test_ratio(self):
        assert xtalk_from_staircase([(0.5, 100.0), (1.5, 25.0)]) == 0.25

    def test_no_crosstalk(self):
        assert xtalk_from_staircase(simulate_staircase(StaircaseConfig(epsilon=0.0))) == 0.0

    def test_first_order(self):
        cfg = StaircaseConfig(epsilon=0.1, cascade_depth=1, amplitude_noise=0.05, seed=4)
        x = xtalk_from_staircase(simulate_staircase(cfg))
        assert abs(x - 0.1) < 3 * np.sqrt(0.1 * 0.9 / cfg.n_events)

    def test_zero_lower_rate(self):
        with pytest.raises(DomainError):
            xtalk_from_staircase([(0.5, 0.0), (1.5, 0.0)])

    def test_outside_range(self):
        with pytest.raises(DomainError):
            xtalk_from_staircase([(0.6, 10.0), (1.5, 1.0)])
