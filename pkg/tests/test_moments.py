from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from sipmcal.errors import DomainError, EstimationError
from sipmcal.moments import (
    MomentSummary,
    estimate_zero_offset,
    fano,
    fs_covariance,
    summarize_shots,
    symmetry,
)

samples = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=60).filter(lambda v: abs(np.mean(v)) > 1e-3)


def summary(mean, var, third, n=1000):
    return MomentSummary(n, mean, var, third, 1.0, 1.0, 1.0)


class TestSummarize:
    def test_constant(self):
        s = summarize_shots([1, 1, 1, 1])
        assert s.var == 0 and s.third == 0 and s.mean == 1

    def test_two_points(self):
        s = summarize_shots([0, 2])
        assert s.mean == 1 and s.var == 2

    def test_k_statistics(self):
        x = np.array([0.3, 1.1, 4.0, 2.2, 9.5, 0.1])
        s = summarize_shots(x)
        assert s.var == pytest.approx(stats.kstat(x, 2), rel=1e-12)
        assert s.third == pytest.approx(stats.kstat(x, 3), rel=1e-12)

    def test_too_few(self):
        with pytest.raises(DomainError):
            summarize_shots([1.0])

    def test_bootstrap_needs_generator(self):
        with pytest.raises(DomainError):
            summarize_shots([1.0, 2.0, 3.0], bootstrap_reps=10)

    def test_poisson_scaled(self, rng):
        s = summarize_shots(10.0 * rng.poisson(4.0, 100_000))
        assert abs(s.mean - 40.0) < 5 * s.se_mean
        assert abs(s.var - 400.0) < 5 * s.se_var

    def test_bootstrap_agrees_with_analytic(self, rng):
        x = rng.gamma(3.0, 2.0, 5000)
        a = summarize_shots(x)
        b = summarize_shots(x, bootstrap_reps=400, rng=rng)
        np.testing.assert_allclose([b.se_mean, b.se_var, b.se_third], [a.se_mean, a.se_var, a.se_third], rtol=0.2)

    def test_covariance_matches_monte_carlo(self, rng):
        reps = np.array([
            [(s := summarize_shots(rng.poisson(5.0, 2000) * 3.0)).mean, s.var, s.third] for _ in range(600)
        ])
        predicted = summarize_shots(rng.poisson(5.0, 2000) * 3.0).cov_matrix()
        observed = np.cov(reps, rowvar=False)
        np.testing.assert_allclose(np.sqrt(np.diag(predicted)), np.sqrt(np.diag(observed)), rtol=0.15)
        corr_p = predicted[0, 1] / np.sqrt(predicted[0, 0] * predicted[1, 1])
        corr_o = observed[0, 1] / np.sqrt(observed[0, 0] * observed[1, 1])
        assert corr_p == pytest.approx(corr_o, abs=0.12)

    @given(samples)
    def test_errors_finite_nonnegative(self, x):
        s = summarize_shots(x)
        for e in (s.se_mean, s.se_var, s.se_third):
            assert np.isfinite(e) and e >= 0
        assert s.var >= 0


class TestRatios:
    def test_fano_ratio(self):
        assert fano(summary(40.0, 400.0, 0.0)).value == 10.0

    def test_symmetry_zero(self):
        assert symmetry(summary(40.0, 400.0, 0.0)).value == 0.0

    def test_full_scale_coherent(self):
        g, e = 75.4, 0.039
        # output moments of the coherent chain per unit mean
        m = 100.0
        s = summary(m * g, m * g**2 * (1 + 3 * e) / (1 + e), m * g**3 * (1 + 7 * e) / (1 + e))
        assert fano(s).value == pytest.approx(81.1, abs=0.1)
        assert symmetry(s).value == pytest.approx(6965.0, abs=10.0)

    def test_poisson_limits(self, rng):
        s = summarize_shots(rng.poisson(6.0, 200_000))
        f, sy = fano(s), symmetry(s)
        assert abs(f.value - 1.0) < 4 * f.error
        assert abs(sy.value - 1.0) < 4 * sy.error

    def test_zero_mean(self):
        with pytest.raises(DomainError):
            fano(summary(0.0, 1.0, 0.0))
        with pytest.raises(DomainError):
            symmetry(summary(0.0, 1.0, 0.0))

    @given(samples, st.floats(0.1, 50.0))
    def test_scale_covariance(self, x, c):
        a = summarize_shots(x)
        b = summarize_shots(np.asarray(x) * c)
        assert fano(b).value == pytest.approx(c * fano(a).value, rel=1e-9, abs=1e-9)
        assert symmetry(b).value == pytest.approx(c**2 * symmetry(a).value, rel=1e-9, abs=1e-6)

    def test_fs_covariance_matches_spread(self, rng):
        vals = []
        for _ in range(400):
            s = summarize_shots(75.0 * rng.poisson(3.0, 3000))
            vals.append((fano(s).value, symmetry(s).value))
        vals = np.array(vals)
        pred = fs_covariance(summarize_shots(75.0 * rng.poisson(3.0, 3000)))
        obs = np.cov(vals, rowvar=False)
        np.testing.assert_allclose(np.sqrt(np.diag(pred)), np.sqrt(np.diag(obs)), rtol=0.15)

    def test_diagonal_fallback(self):
        s = MomentSummary(10, 2.0, 1.0, 0.5, 0.1, 0.2, 0.3)
        np.testing.assert_allclose(s.cov_matrix(), np.diag([0.01, 0.04, 0.09]))


class TestZeroOffset:
    def test_constant(self):
        assert estimate_zero_offset(np.full(200, 12.0)) == 12.0

    def test_contaminated_pedestal(self, rng):
        x = np.concatenate([rng.normal(5.0, 1.0, 9500), rng.normal(80.0, 3.0, 500)])
        assert estimate_zero_offset(x) == pytest.approx(5.0, abs=0.1)

    def test_bimodal(self, rng):
        x = np.concatenate([rng.normal(0.0, 1.0, 5000), rng.normal(50.0, 1.0, 5000)])
        with pytest.raises(EstimationError):
            estimate_zero_offset(x)

    def test_too_few(self):
        with pytest.raises(DomainError):
            estimate_zero_offset(np.zeros(50))
