"""CSV (long format) and JSON manifest output."""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

CSV_FIELDS = ("experiment", "mode", "epsilon", "level", "rep", "metric", "value")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(rows, path) -> Path:
    """Write long-format rows; floats use ``repr`` so values round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in CSV_FIELDS])
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_manifest(path, config: dict, slopes: dict, extra: dict | None = None) -> Path:
    """Full configuration, seeds and fitted slopes; keys sorted for stable output."""
    import numba
    import scipy

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": _jsonable(config),
        "slopes": _jsonable(slopes),
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "numba": numba.__version__},
    }
    if extra:
        doc.update(_jsonable(extra))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_config(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data
