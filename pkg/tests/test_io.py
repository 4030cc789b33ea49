from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sipmcal.errors import FormatError, ParseError
from sipmcal.io import (
    CalibrationReport,
    Quantity,
    load_histogram,
    load_manifest,
    load_report,
    load_shots,
    manifest_from_dict,
    save_histogram,
    save_report,
    save_shots,
)
from sipmcal.model_two import Histogram

FIXTURES = Path(__file__).parent / "fixtures"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestShots:
    def test_simple(self, tmp_path):
        np.testing.assert_array_equal(load_shots(write(tmp_path, "s.txt", "1.0\n2.5\n")), [1.0, 2.5])

    def test_comments(self, tmp_path):
        x = load_shots(write(tmp_path, "s.txt", "# header\n1.0  # inline\n\n2.0\n"))
        np.testing.assert_array_equal(x, [1.0, 2.0])

    def test_bad_line_number(self, tmp_path):
        with pytest.raises(ParseError, match=r"s\.txt:3"):
            load_shots(write(tmp_path, "s.txt", "1.0\n2.0\nabc\n"))

    def test_non_finite(self, tmp_path):
        with pytest.raises(ParseError):
            load_shots(write(tmp_path, "s.txt", "nan\n"))

    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=50))
    def test_round_trip(self, tmp_path_factory, values):
        p = tmp_path_factory.mktemp("shots") / "s.txt"
        save_shots(p, values, header="round trip")
        np.testing.assert_array_equal(load_shots(p), values)


class TestHistogramFiles:
    def test_two_bins(self, tmp_path):
        h = load_histogram(write(tmp_path, "h.csv", "a,b\n0,75,10\n75,150,20\n"))
        np.testing.assert_array_equal(h.bin_edges, [0, 75, 150])
        np.testing.assert_array_equal(h.counts, [10, 20])

    def test_reversed_bin(self, tmp_path):
        with pytest.raises(FormatError):
            load_histogram(write(tmp_path, "h.csv", "a,b,c\n75,0,10\n"))

    def test_gap(self, tmp_path):
        with pytest.raises(FormatError):
            load_histogram(write(tmp_path, "h.csv", "a,b,c\n0,75,10\n80,150,20\n"))

    def test_malformed_row(self, tmp_path):
        with pytest.raises(ParseError, match=":3"):
            load_histogram(write(tmp_path, "h.csv", "a,b,c\n0,75,10\n75,x,20\n"))

    def test_fractional_count(self, tmp_path):
        with pytest.raises(ParseError):
            load_histogram(write(tmp_path, "h.csv", "a,b,c\n0,75,1.5\n"))

    def test_round_trip(self, tmp_path):
        h = Histogram(np.array([-0.5, 0.5, 1.75, 3.0]), np.array([3, 0, 12]))
        save_histogram(tmp_path / "h.csv", h)
        g = load_histogram(tmp_path / "h.csv")
        np.testing.assert_array_equal(g.bin_edges, h.bin_edges)
        np.testing.assert_array_equal(g.counts, h.counts)


class TestManifest:
    def test_mode_checks(self):
        with pytest.raises(FormatError):
            manifest_from_dict({"mode": "model1", "datasets": [{"path": "a", "role": "shots"}]})
        with pytest.raises(FormatError):
            manifest_from_dict({"mode": "fidelity", "datasets": [{"path": "a", "role": "shots"}]})
        with pytest.raises(FormatError):
            manifest_from_dict({"mode": "calibrate"})
        with pytest.raises(FormatError):
            manifest_from_dict({"mode": "model2", "datasets": [{"path": "a", "role": "spectrum"}]})

    def test_missing_path(self, tmp_path):
        m = manifest_from_dict({"mode": "model2", "datasets": [{"path": "nope.csv", "role": "histogram"}]}, tmp_path)
        with pytest.raises(FileNotFoundError):
            m.check_paths()

    def test_invalid_json(self, tmp_path):
        with pytest.raises(ParseError):
            load_manifest(write(tmp_path, "m.json", "{\n  'mode': 1\n}"))

    def test_round_trip(self, tmp_path):
        m = load_manifest(FIXTURES / "model2_thermal.json")
        assert m.mode == "model2" and m.light.kind == "thermal"
        again = manifest_from_dict(m.to_dict(), m.base_dir)
        assert again == m


def sample_report():
    return CalibrationReport(
        mode="model1",
        version="0.1.0",
        seed=3,
        light={"kind": "coherent", "mu": 1.0},
        parameters={"gamma": Quantity(np.float64(75.2), 0.4, "ch"), "chi2": Quantity(1.0, None, "1"),
                    "bad": Quantity(float("nan"), None, "1")},
        fits={"F": {"chi2": np.float64(12.5), "dof": np.int64(14)}},
        distributions=({"label": "a", "pmf": np.array([0.5, 0.5]), "fidelity": 0.99},),
        inputs=({"path": "x.txt", "role": "shots", "sha256": "0" * 64},),
        outputs=("report.json",),
        warnings=("something",),
    )


class TestReport:
    def test_round_trip_equal(self, tmp_path):
        r = sample_report()
        save_report(tmp_path / "r.json", r)
        back = load_report(tmp_path / "r.json")
        assert back.parameters["gamma"] == r.parameters["gamma"]
        assert back.to_dict() == json.loads(r.to_json())
        assert load_report(tmp_path / "r.json") == back

    def test_non_finite_becomes_null(self):
        d = json.loads(sample_report().to_json())
        assert d["parameters"]["bad"]["value"] is None

    def test_units_present(self):
        d = json.loads(sample_report().to_json())
        assert all("unit" in q for q in d["parameters"].values())

    def test_deterministic_text(self):
        assert sample_report().to_json() == sample_report().to_json()

    def test_malformed(self):
        with pytest.raises(FormatError):
            CalibrationReport.from_dict({"mode": "model1"})
        with pytest.raises(ParseError):
            CalibrationReport.from_json("{")


class TestFixtures:
    """Bundled files must keep parsing across releases."""

    def test_shots(self):
        np.testing.assert_array_equal(load_shots(FIXTURES / "shots.txt"), [0.0, 74.5, 151.25, 226.0])

    def test_histogram(self):
        h = load_histogram(FIXTURES / "three_peaks.csv")
        assert h.counts.size == 93 and h.total == 10200

    def test_report(self):
        r = load_report(FIXTURES / "staircase_report.json")
        assert r.mode == "staircase"
        assert r.parameters["x_talk"].value == pytest.approx(0.25, abs=0.01)
        assert r.to_json() == (FIXTURES / "staircase_report.json").read_text(encoding="utf-8")
