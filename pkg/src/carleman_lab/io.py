"""Output writers: JSON reports, CSV tables and raw float64 arrays with sidecars."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return value


def write_json(path: Path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: Path) -> tuple[list, list]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_array(directory: Path, name: str, array: np.ndarray, **meta) -> Path:
    """``name.f64`` (little-endian float64, row-major) plus ``name.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    path = directory / f"{name}.f64"
    path.write_bytes(arr.tobytes(order="C"))
    sidecar = {"shape": list(arr.shape), "dtype": "float64", "byteorder": "little", "order": "row-major"}
    sidecar.update(meta)
    write_json(directory / f"{name}.json", sidecar)
    return path


def read_array(path: Path) -> np.ndarray:
    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    return data.reshape(meta["shape"])
