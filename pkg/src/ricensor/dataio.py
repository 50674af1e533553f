"""Reading observed-data CSV files and writing JSON results."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .randomize import DataError, ObservedData

REQUIRED_COLUMNS = ("id", "y", "d", "z")


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}: column {column!r} is not finite: {text!r}")
    return v


def _parse_flag(text: str, column: str, line: int) -> int:
    if text.strip() not in ("0", "1"):
        raise DataError(f"line {line}: column {column!r} must be 0 or 1, got {text!r}")
    return int(text)


def read_data_csv(path: str | Path) -> ObservedData:
    """Read ``id,y,d,z[,b]``; rows are ordered by ``id`` which must be ``0..n-1``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"line 1: missing columns {', '.join(missing)}")
        col = {name: header.index(name) for name in header}
        has_b = "b" in col
        ids, Y, D, Z, B = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            try:
                ids.append(int(row[col["id"]]))
            except ValueError:
                raise DataError(f"line {line}: id is not an integer: {row[col['id']]!r}") from None
            y = _parse_float(row[col["y"]], "y", line)
            if y <= 0:
                raise DataError(f"line {line}: y must be positive, got {y!r}")
            Y.append(y)
            D.append(_parse_flag(row[col["d"]], "d", line))
            Z.append(_parse_flag(row[col["z"]], "z", line))
            if has_b:
                B.append(_parse_float(row[col["b"]], "b", line))
    ids_arr = np.asarray(ids, dtype=np.int64)
    n = ids_arr.size
    if n == 0:
        raise DataError(f"{path}: no data rows")
    order = np.argsort(ids_arr, kind="stable")
    if not np.array_equal(ids_arr[order], np.arange(n)):
        raise DataError("ids must be exactly 0..n-1 (each once)")
    return ObservedData(
        np.asarray(Y)[order],
        np.asarray(D)[order],
        np.asarray(Z)[order],
        np.asarray(B)[order] if has_b else None,
    )


def write_data_csv(data: ObservedData, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["id", "y", "d", "z"] + (["b"] if data.B is not None else [])
        w.writerow(cols)
        for i in range(data.n):
            row = [i, format(float(data.Y[i]), ".17g"), int(data.D[i]), int(data.Z[i])]
            if data.B is not None:
                row.append(format(float(data.B[i]), ".17g"))
            w.writerow(row)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path: str | Path) -> None:
    """Deterministic JSON; floats use Python's shortest round-trip repr."""
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")
