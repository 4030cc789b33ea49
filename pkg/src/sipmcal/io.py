"""File formats: shot lists, histograms, run manifests and calibration reports.

Reports are JSON with sorted keys and fixed indentation, so identical inputs
give identical bytes. Every physical quantity is stored as
``{"value": ..., "error": ..., "unit": ...}``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, FormatError, ParseError
from .model_two import Histogram

SCHEMA_VERSION = 1
MODES = ("simulate", "staircase", "model1", "model2", "fidelity")
ROLES = ("shots", "histogram", "dark")
LIGHT_KINDS = ("coherent", "thermal")


# --------------------------------------------------------------------------
# Data files
# --------------------------------------------------------------------------
def load_shots(path: str | Path) -> np.ndarray:
    """One value per line; blank lines and ``#`` comments are skipped."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}:{lineno}: non-finite value {text!r}")
            values.append(v)
    return np.array(values, dtype=np.float64)


def save_shots(path: str | Path, samples: Sequence[float], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for v in np.asarray(samples, dtype=np.float64).tolist():
            fh.write(f"{v!r}\n")


def load_histogram(path: str | Path) -> Histogram:
    """CSV with a header row and ``bin_low,bin_high,count`` rows.

    Bins must be contiguous and increasing.
    """
    lows, highs, counts = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        try:
            next(rows)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        for row in rows:
            lineno = rows.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                lo, hi = float(row[0]), float(row[1])
                c = float(row[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed row {row!r}") from None
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ParseError(f"{path}:{lineno}: non-finite bin edge")
            if c < 0 or c != round(c):
                raise ParseError(f"{path}:{lineno}: count must be a non-negative integer, got {row[2]!r}")
            if hi <= lo:
                raise FormatError(f"{path}:{lineno}: bin_high {hi} is not above bin_low {lo}")
            if highs and not math.isclose(lo, highs[-1], rel_tol=1e-12, abs_tol=1e-12):
                raise FormatError(f"{path}:{lineno}: bin starts at {lo}, previous bin ended at {highs[-1]}")
            lows.append(lo)
            highs.append(hi)
            counts.append(int(c))
    if not counts:
        raise ParseError(f"{path}: no histogram rows")
    return Histogram(np.array(lows + [highs[-1]]), np.array(counts, dtype=np.int64))


def save_histogram(path: str | Path, hist: Histogram) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Plot-ready CSV with a header row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DatasetEntry:
    path: str
    role: str
    label: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise FormatError(f"dataset role must be one of {ROLES}, got {self.role!r}")


@dataclass(frozen=True)
class LightHypothesis:
    kind: str
    mu: float | None = 1.0

    def __post_init__(self):
        if self.kind not in LIGHT_KINDS:
            raise FormatError(f"light kind must be one of {LIGHT_KINDS}, got {self.kind!r}")
        if self.mu is not None and not self.mu > 0:
            raise FormatError(f"mu must be > 0, got {self.mu}")


@dataclass(frozen=True)
class RunManifest:
    """What to run, on which files, and where to write.

    ``datasets`` paths are relative to the manifest file unless absolute.
    ``params`` carries mode-specific settings (simulation truth, known
    calibration constants for ``fidelity``, histogram bin width, ...).
    """

    mode: str
    light: LightHypothesis
    datasets: tuple[DatasetEntry, ...] = ()
    out: str = "out"
    seed: int = 0
    params: Mapping[str, Any] = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise FormatError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "datasets", tuple(self.datasets))
        roles = [d.role for d in self.datasets]
        if self.mode == "model1" and roles.count("shots") < 2:
            raise FormatError("model1 needs at least 2 'shots' datasets")
        if self.mode == "model2" and roles.count("histogram") + roles.count("shots") != 1:
            raise FormatError("model2 needs exactly one 'histogram' or 'shots' dataset")
        if self.mode == "fidelity":
            if roles.count("shots") < 1:
                raise FormatError("fidelity needs at least one 'shots' dataset")
            if "gamma" not in self.params or "epsilon" not in self.params:
                raise FormatError("fidelity needs params 'gamma' and 'epsilon'")

    def resolve(self, entry: DatasetEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def check_paths(self) -> None:
        for d in self.datasets:
            if not self.resolve(d).is_file():
                raise FileNotFoundError(f"dataset not found: {self.resolve(d)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "light": {"kind": self.light.kind, "mu": self.light.mu},
            "datasets": [asdict(d) for d in self.datasets],
            "out": self.out,
            "seed": self.seed,
            "params": _plain(dict(self.params)),
        }


def manifest_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> RunManifest:
    try:
        light = data.get("light", {"kind": "coherent"})
        if isinstance(light, str):
            light = {"kind": light}
        return RunManifest(
            mode=data["mode"],
            light=LightHypothesis(light["kind"], light.get("mu", 1.0)),
            datasets=tuple(DatasetEntry(d["path"], d["role"], d.get("label", "")) for d in data.get("datasets", [])),
            out=data.get("out", "out"),
            seed=int(data.get("seed", 0)),
            params=dict(data.get("params", {})),
            base_dir=str(base_dir),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest is missing or has a malformed field: {exc}") from None


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    return manifest_from_dict(data, path.parent)


def save_manifest(path: str | Path, manifest: RunManifest) -> None:
    Path(path).write_text(dumps(manifest.to_dict()), encoding="utf-8")


# --------------------------------------------------------------------------
# Report
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Quantity:
    value: float
    error: float | None
    unit: str

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "error": self.error, "unit": self.unit}


@dataclass(frozen=True)
class CalibrationReport:
    """Results of one run.

    ``parameters`` maps names to quantities with units; ``fits`` holds
    goodness-of-fit summaries; ``distributions`` per-dataset reconstructed
    pmfs and fidelities; ``inputs`` file digests.
    """

    mode: str
    version: str
    seed: int
    light: Mapping[str, Any]
    parameters: Mapping[str, Quantity]
    fits: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    distributions: tuple[Mapping[str, Any], ...] = ()
    inputs: tuple[Mapping[str, str], ...] = ()
    outputs: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        # hold JSON-ready values so a parsed report compares equal
        object.__setattr__(self, "light", _plain(dict(self.light)))
        object.__setattr__(self, "parameters", {
            str(k): Quantity(_plain(q.value), _plain(q.error), q.unit) for k, q in self.parameters.items()
        })
        object.__setattr__(self, "fits", _plain({k: dict(v) for k, v in self.fits.items()}))
        object.__setattr__(self, "distributions", tuple(_plain([dict(d) for d in self.distributions])))
        object.__setattr__(self, "inputs", tuple(dict(i) for i in self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": self.schema,
            "tool": "sipmcal",
            "version": self.version,
            "mode": self.mode,
            "seed": self.seed,
            "light": _plain(dict(self.light)),
            "parameters": {k: v.to_dict() for k, v in self.parameters.items()},
            "fits": _plain({k: dict(v) for k, v in self.fits.items()}),
            "distributions": _plain([dict(d) for d in self.distributions]),
            "inputs": [dict(i) for i in self.inputs],
            "outputs": list(self.outputs),
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CalibrationReport":
        try:
            return cls(
                mode=data["mode"],
                version=data["version"],
                seed=int(data["seed"]),
                light=dict(data["light"]),
                parameters={k: Quantity(v["value"], v["error"], v["unit"]) for k, v in data["parameters"].items()},
                fits={k: dict(v) for k, v in data.get("fits", {}).items()},
                distributions=tuple(dict(d) for d in data.get("distributions", [])),
                inputs=tuple(dict(i) for i in data.get("inputs", [])),
                outputs=tuple(data.get("outputs", [])),
                warnings=tuple(data.get("warnings", [])),
                schema=int(data.get("schema", SCHEMA_VERSION)),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"report is missing or has a malformed field: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "CalibrationReport":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"report line {exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)


def load_report(path: str | Path) -> CalibrationReport:
    return CalibrationReport.from_json(Path(path).read_text(encoding="utf-8"))


def save_report(path: str | Path, report: CalibrationReport) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")


def dumps(obj: Any) -> str:
    """Deterministic JSON text; non-finite floats become null."""
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples to JSON-ready values."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    raise DomainError(f"cannot serialise {type(obj).__name__}")


__all__ = [
    "SCHEMA_VERSION",
    "load_shots",
    "save_shots",
    "load_histogram",
    "save_histogram",
    "write_table",
    "sha256_file",
    "DatasetEntry",
    "LightHypothesis",
    "RunManifest",
    "manifest_from_dict",
    "load_manifest",
    "save_manifest",
    "Quantity",
    "CalibrationReport",
    "load_report",
    "save_report",
    "dumps",
]
