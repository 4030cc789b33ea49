"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``. Every test uses a
fixed seed chosen before its outcome was known; tolerances are the stated ones.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from sipmcal.distributions import (
    Coherent,
    DetectorParams,
    MultiThermal,
    PhotonDistribution,
    chain_response,
    crosstalk_cascade,
    crosstalk_first_order,
)
from sipmcal.model_one import (
    COHERENT,
    THERMAL,
    build_series,
    calibrate_coherent,
    calibrate_thermal,
    physical_roots,
    reconstruct_and_score,
    select_root,
    solve_gain_crosstalk,
)
from sipmcal.model_two import Histogram, PeakModel, calibrate_histogram, fit_multipeak, multipeak_counts
from sipmcal.moments import estimate_pedestal
from sipmcal.simulator import (
    SimConfig,
    StaircaseConfig,
    simulate_avalanches,
    simulate_shots,
    simulate_staircase,
    xtalk_from_staircase,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")

    return emit


def coherent_scan(seed, etas, epsilon, dark_mean=0.2, shots=20_000, mean=10.0):
    """Attenuation scan plus a dark run, pedestal measured and removed as in the lab."""
    det = DetectorParams(dark_mean=dark_mean, epsilon=epsilon, gamma=75.0, pedestal_width=3.0, cell_width=3.0)
    data = [simulate_shots(SimConfig(Coherent(mean), replace(det, eta=e), shots, seed=seed * 1000 + i))
            for i, e in enumerate(etas)]
    dark = simulate_shots(SimConfig(Coherent(0.0), replace(det, eta=0.0, dark_mean=0.0), shots, seed=seed * 1000 + 999))
    x0, sped = estimate_pedestal(dark)
    return data, x0, sped


# --------------------------------------------------------------------------
# 1, 2: algebraic checkpoints
# --------------------------------------------------------------------------
def test_criterion_01_coherent_checkpoint(report):
    g, e = select_root(physical_roots(solve_gain_crosstalk(81.1, 6971.0)))
    ok = abs(g - 75.4) <= 0.5 and abs(e - 0.039) <= 0.002
    report(1, ok, f"gamma = {g:.3f} ch (75.4 +- 0.5), eps = {e:.4f} (0.039 +- 0.002)")
    assert ok


def test_criterion_02_thermal_checkpoint(report):
    g, e = select_root(physical_roots(solve_gain_crosstalk(87.805, 8531.48)))
    ok = abs(g - 74.3) <= 0.5 and abs(e - 0.100) <= 0.005
    report(2, ok, f"gamma = {g:.3f} ch (74.3 +- 0.5), eps = {e:.4f} (0.100 +- 0.005)")
    assert ok


# --------------------------------------------------------------------------
# 3: moment propagation
# --------------------------------------------------------------------------
def closed_form_moments(light, eta, dark, eps):
    m = eta * light.mean
    if isinstance(light, Coherent):
        v, t = m, m
    else:
        mu = light.modes
        v = m * (m / mu + 1)
        t = m * (m / mu + 1) * (2 * m / mu + 1)
    m, v, t = m + dark, v + dark, t + dark
    v_out = (1 + eps) ** 2 * v + eps * (1 - eps) * m
    t_out = (1 + eps) ** 3 * t + 3 * eps * (1 - eps**2) * v + eps * (1 - 3 * eps + 2 * eps**2) * m
    return (1 + eps) * m, v_out, t_out


def test_criterion_03_moment_propagation(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        mean = rng.uniform(0.1, 40.0)
        light = Coherent(mean) if rng.random() < 0.5 else MultiThermal(mean, rng.uniform(1.0, 5.0))
        eta, dark, eps = rng.uniform(0.0, 1.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 0.6)
        det = DetectorParams(eta=eta, dark_mean=dark, epsilon=eps, cascade_depth=1)
        got = chain_response(light, det).moments()
        ref = closed_form_moments(light, eta, dark, eps)
        worst = max(worst, max(abs(a - b) / abs(b) for a, b in zip(got, ref)))
    ok = worst < 1e-8
    report(3, ok, f"100 configurations, worst relative moment deviation {worst:.2e} (< 1e-8)")
    assert ok


# --------------------------------------------------------------------------
# 4, 5: Model I round trips
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_04_coherent_round_trip(report):
    etas = np.linspace(0.01, 0.08, 15)
    hits = 0
    for rep in range(50):
        data, x0, sped = coherent_scan(rep, etas, 0.04)
        cal = calibrate_coherent(build_series(data, COHERENT, x0, sped**2), peak_spacing=75.0, spacing_error=1.0,
                                 rng=np.random.default_rng(rep))
        hits += abs(cal.gamma.value / 75.0 - 1) < 0.02 and abs(cal.epsilon.value - 0.04) < 0.01
    ok = hits >= 45
    report(4, ok, f"gamma within 2% and eps within 0.01 in {hits}/50 repetitions (>= 45)")
    assert ok


@pytest.mark.slow
def test_criterion_05_thermal_round_trip(report):
    etas = np.geomspace(0.01, 0.1, 10)
    det = DetectorParams(dark_mean=0.1, epsilon=0.05, gamma=75.0, pedestal_width=3.0, cell_width=3.0)
    x_dc_true = 75.0 * 1.05 * 0.1
    gam, xdc = [], []
    for rep in range(50):
        data = [simulate_shots(SimConfig(MultiThermal(10.0, 1.0), replace(det, eta=e), 50_000, seed=rep * 1000 + i))
                for i, e in enumerate(etas)]
        dark = simulate_shots(SimConfig(Coherent(0.0), replace(det, eta=0.0, dark_mean=0.0), 50_000, seed=rep * 1000 + 999))
        x0, sped = estimate_pedestal(dark)
        try:
            cal = calibrate_thermal(build_series(data, THERMAL, x0, sped**2), peak_spacing=75.0, spacing_error=1.0,
                                    rng=np.random.default_rng(rep))
            gam.append(abs(cal.gamma.value / 75.0 - 1))
            xdc.append(cal.x_dc.value)
        except Exception:  # a failed calibration counts against the median
            gam.append(math.inf)
            xdc.append(math.nan)
    med_g = float(np.median(gam))
    med_x = float(np.nanmedian(xdc)) if np.isfinite(xdc).any() else math.nan
    ratio = med_x / x_dc_true
    ok = med_g < 0.05 and med_x > 0 and 0.5 <= ratio <= 2.0
    report(5, ok, f"median |gamma/75 - 1| = {med_g:.4f} (< 0.05); median x_dc = {med_x:.2f} ch, "
                  f"{ratio:.2f} x truth (0.5..2)")
    assert ok


# --------------------------------------------------------------------------
# 6: Model II against Model I
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_06_model_two_agreement(report):
    etas = np.linspace(0.05, 0.35, 15)
    data, x0, sped = coherent_scan(6, etas, 0.04)
    m1 = calibrate_coherent(build_series(data, COHERENT, x0, sped**2), peak_spacing=75.0, spacing_error=1.0,
                            rng=np.random.default_rng(6))
    mp, gain, areas, st = calibrate_histogram(Histogram.from_samples(data[-1], 1.0), COHERENT, zero_offset=x0)
    diff = st.epsilon.value - m1.epsilon.value
    comb = math.hypot(st.epsilon.error, m1.epsilon.error)
    ok = mp.n_resolved >= 5 and abs(st.epsilon.value - 0.04) <= 0.02 and abs(diff) <= 3 * comb
    report(6, ok, f"{mp.n_resolved} peaks; Model II eps = {st.epsilon.value:.4f} +- {st.epsilon.error:.4f} "
                  f"(truth 0.04 +- 0.02); Model I eps = {m1.epsilon.value:.4f} +- {m1.epsilon.error:.4f}; "
                  f"difference {abs(diff) / comb:.2f} combined sigma (<= 3)")
    assert ok


# --------------------------------------------------------------------------
# 7: fidelity improvement
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_07_fidelity_improvement(report):
    etas = np.linspace(0.01, 0.08, 15)
    det = DetectorParams(eta=0.35, dark_mean=0.2, epsilon=0.1, gamma=75.0, pedestal_width=3.0, cell_width=3.0)
    better, f_xt = 0, []
    for rep in range(50):
        data, x0, sped = coherent_scan(700 + rep, etas, 0.1)
        cal = calibrate_coherent(build_series(data, COHERENT, x0, sped**2), peak_spacing=75.0, spacing_error=1.0,
                                 rng=np.random.default_rng(rep))
        x = simulate_shots(SimConfig(Coherent(10.0), det, 50_000, seed=70_000 + rep))
        rec = reconstruct_and_score(x, cal, zero_offset=x0)
        better += rec.fidelity_crosstalk > rec.fidelity_bare
        f_xt.append(rec.fidelity_crosstalk)
    ok = better >= 48 and min(f_xt) > 0.99
    report(7, ok, f"f(with) > f(without) in {better}/50 (>= 48); min f(with) = {min(f_xt):.5f} (> 0.99)")
    assert ok


# --------------------------------------------------------------------------
# 8: staircase
# --------------------------------------------------------------------------
def test_criterion_08_staircase(report):
    cfg = StaircaseConfig(dark_rate=540e3, epsilon=0.25, seed=8)
    xt = xtalk_from_staircase(simulate_staircase(cfg))
    ok = cfg.n_events == 10**6 and abs(xt - 0.25) <= 0.01
    report(8, ok, f"X_talk = {xt:.4f} at {cfg.n_events} events (0.25 +- 0.01)")
    assert ok


# --------------------------------------------------------------------------
# 9: oracle equivalence
# --------------------------------------------------------------------------
def merged_chi2_per_dof(counts, expected, min_expected=5.0):
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(counts, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    obs[-1] += o_acc
    exp[-1] += e_acc
    obs, exp = np.array(obs), np.array(exp)
    return float(np.sum((obs - exp) ** 2 / exp)) / max(len(exp) - 1, 1)


def test_criterion_09_oracle_equivalence(report):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        p = rng.random(int(rng.integers(1, 40)))
        p = PhotonDistribution(p / p.sum())
        eps = rng.uniform(0.0, 0.95)
        a = crosstalk_cascade(p, eps, 1).probabilities
        b = crosstalk_first_order(p, eps).probabilities
        n = max(a.size, b.size)
        worst = max(worst, float(np.max(np.abs(np.pad(a, (0, n - a.size)) - np.pad(b, (0, n - b.size))))))
    chis = []
    for c in range(20):
        mean = rng.uniform(1.0, 20.0)
        light = Coherent(mean) if c % 2 else MultiThermal(mean, rng.uniform(1.0, 4.0))
        det = DetectorParams(eta=rng.uniform(0.05, 1.0), dark_mean=rng.uniform(0.0, 1.0),
                             epsilon=rng.uniform(0.0, 0.4), cascade_depth=int(rng.integers(1, 4)))
        k = simulate_avalanches(SimConfig(light, det, 100_000, seed=900 + c))
        pmf = chain_response(light, det).probabilities
        counts = np.bincount(k, minlength=pmf.size).astype(float)
        expected = np.zeros(counts.size)
        expected[: pmf.size] = pmf * k.size
        chis.append(merged_chi2_per_dof(counts, expected))
    ok = worst <= 1e-12 and max(chis) < 2.0
    report(9, ok, f"depth-1 max deviation {worst:.1e} (<= 1e-12); Monte Carlo chi2/dof max {max(chis):.2f} "
                  f"over 20 configs (< 2)")
    assert ok


# --------------------------------------------------------------------------
# 10: pull test
# --------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_10_pulls(report):
    truth = np.array([8000.0, 100.0, 10.0, 0.05, 0.02])
    edges = np.arange(50.0, 150.001, 2.5)
    mu = multipeak_counts(Histogram(edges, np.zeros(edges.size - 1, dtype=int)), truth, 8)
    seed = PeakModel(truth[0] * 1.05, truth[1], truth[2] * 0.95)
    rng = np.random.default_rng(20240611)
    pulls = []
    for _ in range(200):
        fit = fit_multipeak(Histogram(edges, rng.poisson(mu)), [seed], fit_range=(50.0, 150.0), nodes=8)
        pulls.append((fit.fit.params - truth) / fit.fit.errors)
    pulls = np.array(pulls)
    means, variances = pulls.mean(axis=0), pulls.var(axis=0, ddof=1)
    ok = bool(np.all(np.abs(means) < 0.2) and np.all((variances >= 0.7) & (variances <= 1.3)))
    names = ("N", "x_bar", "sigma", "h3", "h4")
    detail = ", ".join(f"{n}: {m:+.3f}/{v:.3f}" for n, m, v in zip(names, means, variances))
    report(10, ok, f"pull mean/variance over 200 fits: {detail}")
    assert ok
