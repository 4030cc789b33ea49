"""Command-line entry point.

Every subcommand runs either from ``--manifest`` (real or previously
simulated files) or from direct flags, in which case the data are simulated
in memory from the flag values first. Exit codes: 0 success, 1 input/output
problem, 2 calibration failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .distributions import Coherent, DetectorParams, MultiThermal
from .errors import (
    CalibrationError,
    DetectionError,
    DomainError,
    EstimationError,
    FitError,
    ParseError,
)
from .io import (
    CalibrationReport,
    DatasetEntry,
    LightHypothesis,
    Quantity,
    RunManifest,
    load_histogram,
    load_manifest,
    load_shots,
    save_histogram,
    save_manifest,
    save_report,
    save_shots,
    sha256_file,
    write_table,
)
from .model_one import (
    COHERENT,
    THERMAL,
    CoherentCalibration,
    Estimate,
    KnownConstants,
    build_series,
    calibrate_coherent,
    calibrate_thermal,
    reconstruct_and_score,
    thermal_fano_model,
    thermal_symmetry_model,
)
from .model_two import Histogram, calibrate_histogram, multipeak_counts, statistics_model
from .moments import estimate_pedestal
from .simulator import SimConfig, StaircaseConfig, simulate_shots, simulate_staircase, xtalk_from_staircase

log = logging.getLogger("sipmcal")

EXIT_OK, EXIT_IO, EXIT_CALIBRATION = 0, 1, 2
DEFAULT_ETAS = {COHERENT: np.linspace(0.01, 0.08, 15), THERMAL: np.geomspace(0.01, 0.1, 10)}
DEFAULT_MEAN = 10.0


class _Collector(logging.Handler):
    """Keeps warnings emitted during a run for the report."""

    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------
def _q(value: float, error: float | None, unit: str) -> Quantity:
    return Quantity(float(value), None if error is None else float(error), unit)


def _est(e: Estimate, unit: str) -> Quantity:
    return _q(e.value, e.error, unit)


def _fit_summary(fit) -> dict[str, Any]:
    return {"chi2": fit.chi2, "dof": fit.dof, "reduced_chi2": fit.reduced_chi2, "converged": fit.converged}


def _light_model(kind: str, mean: float, mu: float | None):
    if kind == COHERENT:
        return Coherent(mean)
    return MultiThermal(mean, 1.0 if mu is None else mu)


def _detector(p: dict[str, Any], eta: float) -> DetectorParams:
    return DetectorParams(
        eta=eta,
        dark_mean=float(p.get("dark_mean", 0.2)),
        epsilon=float(p.get("epsilon", 0.04)),
        cascade_depth=int(p.get("cascade_depth", 1)),
        gamma=float(p.get("gamma", 75.0)),
        zero_offset=float(p.get("zero_offset", 0.0)),
        pedestal_width=float(p.get("pedestal_width", 3.0)),
        cell_width=float(p.get("cell_width", 3.0)),
    )


def _etas(p: dict[str, Any], kind: str) -> list[float]:
    etas = p.get("etas")
    return [float(e) for e in (DEFAULT_ETAS[kind] if not etas else etas)]


def _simulate_scan(p: dict[str, Any], kind: str, mu: float | None, seed: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Shot sets for every efficiency plus a no-light acquisition."""
    mean = float(p.get("mean", DEFAULT_MEAN))
    shots = int(p.get("shots", 20_000))
    light = _light_model(kind, mean, mu)
    data = [
        simulate_shots(SimConfig(light, _detector(p, eta), shots, seed=seed * 1000 + i))
        for i, eta in enumerate(_etas(p, kind))
    ]
    dark = simulate_shots(SimConfig(Coherent(0.0), _detector(p, 0.0), shots, seed=seed * 1000 + 999))
    return data, dark


def _pmf_rows(rec) -> list[tuple[int, float, float, float]]:
    n = max(len(rec.measured), 1)
    def get(d, k):
        return float(d[k]) if k < len(d) else 0.0
    return [(k, get(rec.measured, k), get(rec.bare, k), get(rec.with_crosstalk, k)) for k in range(n)]


def _dist_entry(label: str, rec) -> dict[str, Any]:
    n = len(rec.measured)
    return {
        "label": label,
        "mean_counts": rec.mean_counts,
        "fidelity_bare": rec.fidelity_bare,
        "fidelity_crosstalk": rec.fidelity_crosstalk,
        "measured": rec.measured.probabilities[:n].tolist(),
        "bare": rec.bare.probabilities[:n].tolist(),
        "with_crosstalk": rec.with_crosstalk.probabilities[:n].tolist(),
    }


# --------------------------------------------------------------------------
# Pipelines
# --------------------------------------------------------------------------
def run_simulate(m: RunManifest, out: Path) -> CalibrationReport:
    p = dict(m.params)
    kind = m.light.kind
    data, dark = _simulate_scan(p, kind, m.light.mu, m.seed)
    etas = _etas(p, kind)
    entries = []
    for i, (eta, x) in enumerate(zip(etas, data)):
        name = f"shots_{i:02d}.txt"
        save_shots(out / name, x, header=f"simulated {kind} light, eta={eta!r}, seed={m.seed}")
        entries.append(DatasetEntry(name, "shots", f"eta={eta:.6g}"))
    save_shots(out / "dark.txt", dark, header=f"simulated no-light acquisition, seed={m.seed}")
    entries.append(DatasetEntry("dark.txt", "dark", "dark"))
    analysis = RunManifest("model1", m.light, tuple(entries), out=".", seed=m.seed,
                           params={"peak_spacing": float(p.get("gamma", 75.0))})
    save_manifest(out / "manifest.json", analysis)

    det = _detector(p, etas[0])
    params = {
        "gamma": _q(det.gamma, None, "ch"),
        "epsilon": _q(det.epsilon, None, "1"),
        "dark_mean": _q(det.dark_mean, None, "avalanches"),
        "mean": _q(float(p.get("mean", DEFAULT_MEAN)), None, "photons"),
        "zero_offset": _q(det.zero_offset, None, "ch"),
        "pedestal_width": _q(det.pedestal_width, None, "ch"),
        "cell_width": _q(det.cell_width, None, "ch"),
        "shots_per_setting": _q(int(p.get("shots", 20_000)), None, "shots"),
    }
    rows = [(eta, float(np.mean(x)), float(np.var(x, ddof=1))) for eta, x in zip(etas, data)]
    write_table(out / "scan_summary.csv", ["eta", "mean_ch", "var_ch2"], rows)
    outputs = tuple(e.path for e in entries) + ("manifest.json", "scan_summary.csv")
    return CalibrationReport("simulate", __version__, m.seed, {"kind": kind, "mu": m.light.mu}, params,
                             outputs=outputs)


def _load_scan(m: RunManifest) -> tuple[list[np.ndarray], list[str], np.ndarray | None, list[dict[str, str]]]:
    data, labels, dark, inputs = [], [], None, []
    for d in m.datasets:
        path = m.resolve(d)
        inputs.append({"path": d.path, "role": d.role, "sha256": sha256_file(path)})
        if d.role == "shots":
            data.append(load_shots(path))
            labels.append(d.label or Path(d.path).stem)
        elif d.role == "dark":
            dark = load_shots(path)
    return data, labels, dark, inputs


def run_model1(m: RunManifest, out: Path, data=None, labels=None, dark=None, inputs=()) -> CalibrationReport:
    p = dict(m.params)
    kind = m.light.kind
    if data is None:
        data, labels, dark, inputs = _load_scan(m)
    zero, ped_sigma = estimate_pedestal(dark) if dark is not None else (float(p.get("zero_offset", 0.0)), 0.0)
    rng = np.random.default_rng(m.seed)
    series = build_series(data, kind, zero_offset=zero, pedestal_variance=ped_sigma**2,
                          bootstrap_reps=int(p.get("bootstrap", 0)), rng=rng)
    spacing = p.get("peak_spacing")
    spacing = None if spacing is None else float(spacing)
    params: dict[str, Quantity] = {
        "zero_offset": _q(zero, None, "ch"),
        "pedestal_sigma": _q(ped_sigma, None, "ch"),
    }
    if kind == COHERENT:
        cal = calibrate_coherent(series, peak_spacing=spacing, rng=rng)
        params.update(F=_est(cal.F, "ch"), S=_est(cal.S, "ch^2"))
        F_model = np.full(len(data), cal.F.value)
        S_model = np.full(len(data), cal.S.value)
    else:
        cal = calibrate_thermal(series, mu_fixed=m.light.mu, peak_spacing=spacing, rng=rng)
        params.update(x_dc=_est(cal.x_dc, "ch"), B=_est(cal.B, "ch"), A=_est(cal.A, "1"),
                      C=_est(cal.C, "ch^2"), mu=_est(cal.mu, "modes"), m_dc=_est(cal.m_dc, "avalanches"))
        F_model = thermal_fano_model(series.x_out, cal.F_fit.params)
        S_model = thermal_symmetry_model(series.x_out, cal.S_fit.params)
    params.update(gamma=_est(cal.gamma, "ch"), epsilon=_est(cal.epsilon, "1"))
    if cal.rejected_root is not None:
        params["rejected_gamma"] = _q(cal.rejected_root[0], None, "ch")
        params["rejected_epsilon"] = _q(cal.rejected_root[1], None, "1")

    Fv, Sv = series.fano_values(), series.symmetry_values()
    write_table(out / "fs_vs_xout.csv",
                ["x_out_ch", "F_ch", "F_err_ch", "F_model_ch", "S_ch2", "S_err_ch2", "S_model_ch2"],
                [(x, f.value, f.error, fm, s.value, s.error, sm)
                 for x, f, s, fm, sm in zip(series.x_out, Fv, Sv, F_model, S_model)])
    outputs = ["fs_vs_xout.csv"]
    dists = []
    modes = 1.0 if m.light.mu is None else m.light.mu
    if kind == THERMAL and m.light.mu is None:
        modes = cal.mu.value
    for i, (label, x) in enumerate(zip(labels, data)):
        rec = reconstruct_and_score(x, cal, kind, zero_offset=zero, modes=modes)
        dists.append(_dist_entry(label, rec))
        name = f"pmf_{i:02d}.csv"
        write_table(out / name, ["n", "measured", "bare", "with_crosstalk"], _pmf_rows(rec))
        outputs.append(name)
    fits = {"fano": _fit_summary(cal.F_fit), "symmetry": _fit_summary(cal.S_fit)}
    return CalibrationReport("model1", __version__, m.seed, {"kind": kind, "mu": m.light.mu}, params,
                             fits=fits, distributions=tuple(dists), inputs=tuple(inputs), outputs=tuple(outputs))


def run_model2(m: RunManifest, out: Path, hist: Histogram | None = None, inputs=()) -> CalibrationReport:
    p = dict(m.params)
    kind = m.light.kind
    if hist is None:
        d = m.datasets[0] if len(m.datasets) == 1 else next(x for x in m.datasets if x.role in ("histogram", "shots"))
        path = m.resolve(d)
        inputs = [{"path": d.path, "role": d.role, "sha256": sha256_file(path)}]
        if d.role == "histogram":
            hist = load_histogram(path)
        else:
            hist = Histogram.from_samples(load_shots(path), float(p.get("bin_width", 1.0)))
    fixed = dict(p.get("fixed", {}))
    if kind == THERMAL and m.light.mu is not None and "mu" not in fixed and p.get("fix_mu", False):
        fixed["mu"] = m.light.mu
    zero = p.get("zero_offset")
    mp, gain, areas, st = calibrate_histogram(
        hist, kind, fixed=fixed or None, depth=int(p.get("depth", 3)),
        zero_offset=None if zero is None else float(zero),
    )
    params = {
        "gamma": _est(gain.gamma, "ch"),
        "m_el": _est(st.m_el, "avalanches"),
        "m_dc": _est(st.m_dc, "avalanches"),
        "epsilon": _est(st.epsilon, "1"),
        "mu": _est(st.mu, "modes"),
        "normalization": _est(st.normalization, "counts"),
        "n_resolved": _q(mp.n_resolved, None, "peaks"),
    }
    fits = {"multipeak": _fit_summary(mp.fit), "statistics": _fit_summary(st.fit)}
    fits["statistics"]["combined_mean"] = st.combined_mean
    x0 = mp.peaks[0].x_bar if zero is None else float(zero)
    idx = np.rint((np.array([pk.x_bar for pk in mp.peaks]) - x0) / gain.gamma.value).astype(int)
    model_areas = statistics_model(idx, st.fit.params, kind, int(p.get("depth", 3)))
    write_table(out / "peaks.csv",
                ["n", "x_bar_ch", "sigma_ch", "h3", "h4", "area_counts", "area_err_counts", "model_counts"],
                [(int(k), pk.x_bar, pk.sigma, pk.h3, pk.h4, a.value, a.error, ma)
                 for k, pk, a, ma in zip(idx, mp.peaks, areas, model_areas)])
    expected = multipeak_counts(hist, mp.fit.params)
    write_table(out / "spectrum.csv", ["bin_center_ch", "count", "model_count"],
                [(c, int(n), e) for c, n, e in zip(hist.centers, hist.counts, expected)])
    return CalibrationReport("model2", __version__, m.seed, {"kind": kind, "mu": m.light.mu}, params, fits=fits,
                             inputs=tuple(inputs), outputs=("peaks.csv", "spectrum.csv"), warnings=mp.warnings)


def run_fidelity(m: RunManifest, out: Path, data=None, labels=None, inputs=()) -> CalibrationReport:
    p = dict(m.params)
    kind = m.light.kind
    if data is None:
        data, labels, _, inputs = _load_scan(m)
    const = KnownConstants(
        gamma=Estimate(float(p["gamma"]), 0.0),
        epsilon=Estimate(float(p["epsilon"]), 0.0),
        x_dc=Estimate(float(p.get("x_dc", 0.0)), 0.0),
    )
    zero = float(p.get("zero_offset", 0.0))
    modes = 1.0 if m.light.mu is None else m.light.mu
    dists, outputs = [], []
    for i, (label, x) in enumerate(zip(labels, data)):
        rec = reconstruct_and_score(x, const, kind, zero_offset=zero, modes=modes)
        dists.append(_dist_entry(label, rec))
        name = f"pmf_{i:02d}.csv"
        write_table(out / name, ["n", "measured", "bare", "with_crosstalk"], _pmf_rows(rec))
        outputs.append(name)
    params = {
        "gamma": _q(const.gamma.value, None, "ch"),
        "epsilon": _q(const.epsilon.value, None, "1"),
        "x_dc": _q(const.x_dc.value, None, "ch"),
        "zero_offset": _q(zero, None, "ch"),
    }
    return CalibrationReport("fidelity", __version__, m.seed, {"kind": kind, "mu": m.light.mu}, params,
                             distributions=tuple(dists), inputs=tuple(inputs), outputs=tuple(outputs))


def run_staircase(m: RunManifest, out: Path) -> CalibrationReport:
    p = dict(m.params)
    kw: dict[str, Any] = {
        "dark_rate": float(p.get("dark_rate", 540e3)),
        "epsilon": float(p.get("epsilon", 0.25)),
        "cascade_depth": int(p.get("cascade_depth", 1)),
        "single_cell_amplitude": float(p.get("single_cell_amplitude", 1.0)),
        "amplitude_noise": float(p.get("amplitude_noise", 0.0)),
        "seed": m.seed,
    }
    if "thresholds" in p:
        kw["thresholds"] = tuple(float(t) for t in p["thresholds"])
    if "observation_time" in p:
        kw["observation_time"] = float(p["observation_time"])
    cfg = StaircaseConfig(**kw)
    curve = simulate_staircase(cfg)
    xt = xtalk_from_staircase(curve, cell_amplitude=cfg.single_cell_amplitude)
    # binomial error: events above the upper threshold are a subset of those above the lower
    th, rate = zip(*curve)
    n_lower = cfg.n_events * float(np.interp(0.5 * cfg.single_cell_amplitude, th, rate)) / cfg.dark_rate
    xt_err = math.sqrt(max(xt * (1.0 - xt), 0.0) / n_lower) if n_lower > 0 else None
    write_table(out / "staircase.csv", ["threshold_cell", "rate_hz"], curve)
    params = {
        "dark_rate": _q(cfg.dark_rate, None, "Hz"),
        "epsilon": _q(cfg.epsilon, None, "1"),
        "n_events": _q(cfg.n_events, None, "events"),
        "x_talk": _q(xt, xt_err, "1"),
    }
    return CalibrationReport("staircase", __version__, m.seed, {"kind": "none", "mu": None}, params,
                             outputs=("staircase.csv",))


# --------------------------------------------------------------------------
# Argument handling
# --------------------------------------------------------------------------
def _flag_params(args: argparse.Namespace) -> dict[str, Any]:
    p: dict[str, Any] = {}
    for name in ("shots", "gamma", "epsilon", "dark_mean", "mean", "pedestal_width", "cell_width",
                 "zero_offset", "dark_rate", "bin_width", "bootstrap", "peak_spacing", "cascade_depth"):
        v = getattr(args, name, None)
        if v is not None:
            p[name] = v
    if args.eta:
        p["etas"] = list(args.eta)
    return p


def _flags_manifest(cmd: str, args: argparse.Namespace) -> RunManifest:
    light = LightHypothesis(args.light, args.mu)
    # analysis modes get their in-memory datasets attached later
    mode = cmd if cmd in ("simulate", "staircase") else "simulate"
    return RunManifest(mode, light, (), out=str(args.out or "out"),
                       seed=args.seed, params=_flag_params(args))


def _run_from_flags(cmd: str, args: argparse.Namespace, out: Path) -> CalibrationReport:
    m = _flags_manifest(cmd, args)
    p = dict(m.params)
    kind = m.light.kind
    if cmd == "simulate":
        return run_simulate(m, out)
    if cmd == "staircase":
        return run_staircase(m, out)
    if cmd == "model1":
        p.setdefault("peak_spacing", float(p.get("gamma", 75.0)))
        data, dark = _simulate_scan(p, kind, m.light.mu, m.seed)
        labels = [f"eta={e:.6g}" for e in _etas(p, kind)]
        return run_model1(_with_params(m, "model1", p), out, data=data, labels=labels, dark=dark)
    # single simulated acquisition for histogram and fidelity runs
    eta = float(p["etas"][0]) if p.get("etas") else 0.35
    mean = float(p.get("mean", DEFAULT_MEAN))
    det = _detector(p, eta)
    x = simulate_shots(SimConfig(_light_model(kind, mean, m.light.mu), det, int(p.get("shots", 20_000)), m.seed))
    if cmd == "model2":
        hist = Histogram.from_samples(x, float(p.get("bin_width", 1.0)))
        save_histogram(out / "histogram.csv", hist)
        p.setdefault("zero_offset", det.zero_offset)
        rep = run_model2(_with_params(m, "model2", p), out, hist=hist)
        return _add_outputs(rep, ("histogram.csv",))
    # fidelity: score against the simulation truth
    p.update(gamma=det.gamma, epsilon=det.epsilon, zero_offset=det.zero_offset,
             x_dc=det.gamma * (1.0 + det.epsilon) * det.dark_mean)
    return run_fidelity(_with_params(m, "fidelity", p), out, data=[x], labels=[f"eta={eta:.6g}"])


def _with_params(m: RunManifest, mode: str, p: dict[str, Any]) -> RunManifest:
    datasets = m.datasets
    if mode in ("model1", "model2", "fidelity") and not datasets:
        # in-memory data; placeholders keep the manifest checks meaningful
        n = 2 if mode == "model1" else 1
        datasets = tuple(DatasetEntry(f"<simulated {i}>", "shots") for i in range(n))
    return RunManifest(mode, m.light, datasets, m.out, m.seed, p, m.base_dir)


def _add_outputs(rep: CalibrationReport, extra: Sequence[str]) -> CalibrationReport:
    d = rep.to_dict()
    d["outputs"] = list(extra) + list(rep.outputs)
    return CalibrationReport.from_dict(d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sipmcal", description="SiPM gain, cross-talk and statistics calibration")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate an attenuation scan and write shot files plus a model1 manifest",
        "staircase": "simulate a dark-count threshold scan and estimate cross-talk",
        "model1": "moment-based calibration over an attenuation scan",
        "model2": "peak-resolved calibration of a single histogram",
        "fidelity": "score reconstructed distributions with and without cross-talk",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--manifest", type=Path, help="JSON run manifest (overrides the flags below)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--shots", type=int, help="shots per setting")
        sp.add_argument("--light", choices=(COHERENT, THERMAL), default=COHERENT)
        sp.add_argument("--mu", type=float, default=1.0, help="number of thermal modes")
        sp.add_argument("--gamma", type=float, help="gain (ch per avalanche)")
        sp.add_argument("--epsilon", type=float, help="cross-talk probability")
        sp.add_argument("--dark-mean", type=float, help="mean dark avalanches per gate")
        sp.add_argument("--eta", type=float, action="append", help="detection efficiency (repeat for a scan)")
        sp.add_argument("--mean", type=float, help="mean photon number before attenuation")
        sp.add_argument("--pedestal-width", type=float)
        sp.add_argument("--cell-width", type=float)
        sp.add_argument("--zero-offset", type=float)
        sp.add_argument("--cascade-depth", type=int)
        sp.add_argument("--bin-width", type=float, help="histogram bin width for model2 (ch)")
        sp.add_argument("--bootstrap", type=int, help="bootstrap replicas for moment errors (0: analytic)")
        sp.add_argument("--peak-spacing", type=float, help="measured peak spacing used to pick the gain root")
        sp.add_argument("--dark-rate", type=float, help="dark count rate for staircase (Hz)")
        sp.add_argument("--out", type=Path, help="output directory (default: the manifest's, else ./out)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    collector = _Collector()
    log.addHandler(collector)
    try:
        try:
            if args.manifest is not None:
                m = load_manifest(args.manifest)
                if m.mode != args.command:
                    raise ParseError(f"manifest mode {m.mode!r} does not match subcommand {args.command!r}")
                m.check_paths()
                out = args.out if args.out is not None else Path(m.base_dir) / m.out
                out.mkdir(parents=True, exist_ok=True)
                runner = {"simulate": run_simulate, "staircase": run_staircase, "model1": run_model1,
                          "model2": run_model2, "fidelity": run_fidelity}[m.mode]
                report = runner(m, out)
            else:
                out = args.out if args.out is not None else Path("out")
                out.mkdir(parents=True, exist_ok=True)
                report = _run_from_flags(args.command, args, out)
        except (CalibrationError, FitError, EstimationError, DetectionError) as exc:
            print(f"sipmcal: calibration failed: {exc}", file=sys.stderr)
            return EXIT_CALIBRATION
        except (OSError, ParseError, DomainError) as exc:
            print(f"sipmcal: {exc}", file=sys.stderr)
            return EXIT_IO
        if collector.messages:
            d = report.to_dict()
            d["warnings"] = list(report.warnings) + [w for w in collector.messages if w not in report.warnings]
            report = CalibrationReport.from_dict(d)
        save_report(out / "report.json", report)
        print(out / "report.json")
        return EXIT_OK
    finally:
        log.removeHandler(collector)


if __name__ == "__main__":
    sys.exit(main())
