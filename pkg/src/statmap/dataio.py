"""File formats: JSON-Lines datasets, versioned JSON documents for fitted
maps and chart models, and CSV report tables.

All writers are deterministic (sorted keys, compact separators, repr-exact
floats), so identical inputs produce byte-identical files. Loaders raise
ParseError with file/line/field context on malformed input, and refuse
unknown schema versions explicitly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .chart import ChartModel
from .errors import ParseError
from .gpmap import (
    FitDiagnostics,
    FittedMap,
    Hyperparams,
    TrainingSet,
    build_map,
    kernel_matrix,
)
from .propagation import Location

__all__ = [
    "UserRecord",
    "Dataset",
    "save_dataset",
    "load_dataset",
    "save_map",
    "load_map",
    "save_chart",
    "load_chart",
    "write_csv",
    "kernel_checksum",
]

DATASET_VERSION = 1
MAP_VERSION = 1
CHART_VERSION = 1


@dataclass(frozen=True)
class UserRecord:
    """One user's measurements; location and CSI are optional."""

    user_id: int
    location: Location | None
    power_samples: np.ndarray
    csi: np.ndarray | None = None


@dataclass(frozen=True)
class Dataset:
    records: list

    def __len__(self) -> int:
        return len(self.records)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_dataset(dataset: Dataset, path) -> None:
    """One JSON object per user: {user_id, x, y, z, power_samples, csi?}."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump({"kind": "statmap-dataset",
                        "version": DATASET_VERSION}) + "\n")
        for rec in dataset.records:
            row = {"user_id": rec.user_id,
                   "power_samples": [float(p) for p in rec.power_samples]}
            if rec.location is not None:
                row["x"] = rec.location.x
                row["y"] = rec.location.y
                row["z"] = rec.location.z
            if rec.csi is not None:
                row["csi"] = {"re": rec.csi.real.tolist(),
                              "im": rec.csi.imag.tolist()}
            fh.write(_dump(row) + "\n")


def load_dataset(path) -> Dataset:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", path=path)
    header = _parse_json_line(lines[0], path, 1)
    _check_header(header, "statmap-dataset", DATASET_VERSION, path)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        row = _parse_json_line(line, path, lineno)
        try:
            loc = None
            if "x" in row:
                loc = Location(float(row["x"]), float(row["y"]),
                               float(row["z"]))
            csi = None
            if "csi" in row:
                csi = (np.asarray(row["csi"]["re"], dtype=float)
                       + 1j * np.asarray(row["csi"]["im"], dtype=float))
            records.append(UserRecord(
                user_id=int(row["user_id"]),
                location=loc,
                power_samples=np.asarray(row["power_samples"], dtype=float),
                csi=csi))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad dataset record: {exc}", path=path,
                             line=lineno) from exc
    return Dataset(records=records)


def kernel_checksum(train: TrainingSet, hyper: Hyperparams) -> str:
    """SHA-256 of the dense training kernel matrix bytes."""
    k = np.ascontiguousarray(kernel_matrix(train.coords, hyper))
    return hashlib.sha256(k.tobytes()).hexdigest()


def save_map(fmap: FittedMap, path) -> None:
    doc = {
        "kind": "statmap-gp-map",
        "version": MAP_VERSION,
        "hyper": dataclasses.asdict(fmap.hyper),
        "coords": fmap.train.coords.tolist(),
        "targets": fmap.train.targets.tolist(),
        "diagnostics": dataclasses.asdict(fmap.diagnostics),
        "kernel_checksum": kernel_checksum(fmap.train, fmap.hyper),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump(doc) + "\n")


def load_map(path) -> FittedMap:
    """Rebuilds the Cholesky factor and verifies the stored kernel checksum."""
    doc = _load_json_doc(path, "statmap-gp-map", MAP_VERSION)
    try:
        hyper = Hyperparams(**doc["hyper"])
        train = TrainingSet.new(doc["coords"], doc["targets"])
        diag = FitDiagnostics(**doc["diagnostics"])
        stored = doc["kernel_checksum"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad map document: {exc}", path=path) from exc
    actual = kernel_checksum(train, hyper)
    if actual != stored:
        raise ParseError("kernel matrix checksum mismatch "
                         f"(stored {stored[:12]}.., recomputed {actual[:12]}..)",
                         path=path, field="kernel_checksum")
    fmap = build_map(train, hyper)
    return dataclasses.replace(fmap, diagnostics=diag)


def save_chart(model: ChartModel, path) -> None:
    doc = {
        "kind": "statmap-chart",
        "version": CHART_VERSION,
        "layer_dims": model.layer_dims,
        "weights": [w.tolist() for w in model.weights],  # row-major per layer
        "biases": [b.tolist() for b in model.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump(doc) + "\n")


def load_chart(path) -> ChartModel:
    doc = _load_json_doc(path, "statmap-chart", CHART_VERSION)
    try:
        dims = doc["layer_dims"]
        weights = tuple(np.asarray(w, dtype=float) for w in doc["weights"])
        biases = tuple(np.asarray(b, dtype=float) for b in doc["biases"])
        model = ChartModel(weights=weights, biases=biases)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad chart document: {exc}", path=path) from exc
    if model.layer_dims != list(dims):
        raise ParseError("layer_dims do not match stored weights", path=path,
                         field="layer_dims")
    return model


def write_csv(path, header: list, rows) -> None:
    """Plain CSV with repr-exact floats (lossless, deterministic)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse_json_line(line: str, path, lineno: int):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path,
                         line=lineno) from exc


def _check_header(header, kind: str, version: int, path):
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise ParseError(f"not a {kind} file", path=path, field="kind")
    if header.get("version") != version:
        raise ParseError(
            f"unsupported {kind} version {header.get('version')!r}, "
            f"expected {version}", path=path, field="version")


def _load_json_doc(path, kind: str, version: int):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path,
                         line=exc.lineno) from exc
    _check_header(doc, kind, version, path)
    return doc
