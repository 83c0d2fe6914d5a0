"""CSV and JSON serialization for run logs, twist logs and reports.

Floats are written with 17 significant digits so a write/read round trip is
bit-exact.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import MalformedLog
from .sim import LOG_HEADER, TWIST_HEADER

FLOAT_FMT = "%.17g"


def write_csv(path, header: list[str], data: np.ndarray) -> Path:
    path = Path(path)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.size and data.shape[1] != len(header):
        raise ValueError(f"{len(header)} columns in header but data has {data.shape[1]}")
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    return path


def read_csv(path, header: list[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Parse a numeric CSV; when ``header`` is given it must match exactly."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise MalformedLog(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise MalformedLog(f"{path} is empty", 1) from None
        found = [h.strip() for h in found]
        if header is not None and found != list(header):
            raise MalformedLog(f"unexpected header {','.join(found)!r}", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(found):
                raise MalformedLog(f"expected {len(found)} fields, got {len(row)}", lineno)
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise MalformedLog("non-numeric field", lineno) from None
            if not all(np.isfinite(values)):
                raise MalformedLog("non-finite value", lineno)
            rows.append(values)
    data = np.array(rows, dtype=float).reshape(len(rows), len(found))
    return found, data


def write_run_log(path, data: np.ndarray) -> Path:
    return write_csv(path, LOG_HEADER, data)


def read_run_log(path) -> np.ndarray:
    return read_csv(path, LOG_HEADER)[1]


def write_twist_log(path, data: np.ndarray) -> Path:
    return write_csv(path, TWIST_HEADER, data)


def read_twist_log(path) -> np.ndarray:
    """Twist log rows ``[t, v1, w1, v2, w2]``; rejects empty logs and non-increasing time."""
    _, data = read_csv(path, TWIST_HEADER)
    if data.shape[0] == 0:
        raise MalformedLog(f"{path} has no records", 2)
    bad = np.nonzero(np.diff(data[:, 0]) <= 0.0)[0]
    if bad.size:
        raise MalformedLog("time stamps must be strictly increasing", int(bad[0]) + 3)
    return data


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_report_text(path, fields: dict) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k}: {v}\n" for k, v in fields.items()))
    return path
