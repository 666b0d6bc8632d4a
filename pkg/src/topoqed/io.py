"""CSV and JSON writers shared by the experiment runner."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
import threading
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


class CsvWriter:
    """Row-at-a-time CSV writer; each row is flushed so partial sweeps survive a crash."""

    def __init__(self, path: str | Path, columns: list[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(self.columns)
        self._lock = threading.Lock()

    def write(self, row: dict):
        with self._lock:
            self._w.writerow([_fmt(row.get(c, "")) for c in self.columns])
            self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    if columns is None:
        columns = list(rows[0]) if rows else []
    with CsvWriter(path, columns) as w:
        for r in rows:
            w.write(r)
    return Path(path)


def read_csv(path: str | Path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Header and numeric columns (non-numeric cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], {}
    header = rows[0]
    data = {}
    for j, name in enumerate(header):
        vals = []
        for r in rows[1:]:
            cell = r[j] if j < len(r) else ""
            if cell == "true":
                vals.append(1.0)
            elif cell == "false":
                vals.append(0.0)
            else:
                try:
                    vals.append(float(cell))
                except ValueError:
                    vals.append(math.nan)
        data[name] = np.array(vals)
    return header, data


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path: str | Path, obj) -> Path:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return Path(path)


def spec_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=_json_default).encode()).hexdigest()[:16]


def environment() -> dict:
    import matplotlib
    import scipy

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
        "platform": platform.platform(),
    }
