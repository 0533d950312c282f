"""CSV and JSON input/output with line-numbered validation errors."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InputError

SPELL_REQUIRED = ("subject_id", "birth_year", "exit_age", "event", "treated")
DISTANCE_COLUMNS = ("muni_a", "muni_b", "travel_km", "travel_min")
PANEL_REQUIRED = ("outcome", "canton", "year", "cluster_id")
ID_COLUMNS = ("subject_id", "municipality_id", "cluster_id", "muni_a", "muni_b",
              "canton", "year", "matched_muni")


def _rows(path):
    """Yield ``(line_number, row)`` from a CSV file, skipping ``#`` comment lines."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        lines = ((i, line) for i, line in enumerate(fh, start=1) if not line.startswith("#"))
        numbered = list(lines)
    reader = csv.reader([line for _, line in numbered])
    for (lineno, _), row in zip(numbered, reader):
        if not row or all(not c.strip() for c in row):
            continue
        yield lineno, [c.strip() for c in row]


def _ids(values):
    """Integer ids when every value is an integer literal, else strings."""
    try:
        return [int(v) for v in values]
    except ValueError:
        return list(values)


def _parse(path, value, kind, lineno, col):
    try:
        if kind == "int":
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind == "float":
            return float(value)
        if kind == "bool01":
            if value not in ("0", "1"):
                raise ValueError
            return value == "1"
    except ValueError:
        raise InputError(f"{path}:{lineno}: bad {col} value {value!r}") from None
    return value


def read_table(path, required, kinds, optional_kinds=None, default_kind="float"):
    """Read a CSV into a frame with per-cell parsing and line-numbered errors."""
    it = _rows(path)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise InputError(f"{path}: empty file") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path}:{lineno}: missing columns {missing}")
    if len(set(header)) != len(header):
        raise InputError(f"{path}:{lineno}: duplicate column names")
    kinds = {**(optional_kinds or {}), **kinds}
    cols = {c: [] for c in header}
    for lineno, row in it:
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for c, v in zip(header, row):
            cols[c].append(_parse(path, v, kinds.get(c, default_kind), lineno, c))
    for c in header:
        if kinds.get(c, default_kind) == "id":
            cols[c] = _ids(cols[c])
    return pd.DataFrame(cols, columns=header)


def read_spells_csv(path) -> pd.DataFrame:
    kinds = {"subject_id": "id", "birth_year": "int", "entry_age": "float",
             "exit_age": "float", "event": "bool01", "treated": "bool01",
             "municipality_id": "id", "weight": "float", "cluster_id": "id",
             "sample_year": "int"}
    frame = read_table(path, SPELL_REQUIRED, kinds)
    if "entry_age" not in frame.columns:
        frame["entry_age"] = 18.0
    bad = ~(frame["entry_age"].to_numpy(float) < frame["exit_age"].to_numpy(float))
    if bad.any():
        i = int(bad.argmax())
        raise InputError(f"{path}: subject {frame['subject_id'].iloc[i]!r} has entry_age >= exit_age")
    if "weight" in frame.columns and (frame["weight"].to_numpy(float) < 0).any():
        i = int((frame["weight"].to_numpy(float) < 0).argmax())
        raise InputError(f"{path}: subject {frame['subject_id'].iloc[i]!r} has a negative weight")
    return frame


def read_distances_csv(path) -> pd.DataFrame:
    kinds = {"muni_a": "id", "muni_b": "id", "travel_km": "float", "travel_min": "float"}
    frame = read_table(path, DISTANCE_COLUMNS, kinds)
    for c in ("travel_km", "travel_min"):
        if (frame[c].to_numpy(float) < 0).any():
            raise InputError(f"{path}: negative {c}")
    return frame


def read_panel_csv(path) -> pd.DataFrame:
    kinds = {"outcome": "float", "treat": "float", "pilot": "float", "post": "float",
             "canton": "id", "year": "id", "weight": "float", "cluster_id": "id"}
    return read_table(path, PANEL_REQUIRED, kinds)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def write_text(path, text: str):
    _atomic_write(path, text)


def write_csv(path, frame: pd.DataFrame, comment: str | None = None):
    body = frame.to_csv(index=False, lineterminator="\n")
    if comment:
        body = f"# {comment}\n" + body
    _atomic_write(path, body)


def spells_for_csv(frame: pd.DataFrame) -> pd.DataFrame:
    """Spell frame with booleans encoded 0/1 and the standard column order first."""
    from .data import SPELL_COLUMNS
    out = frame.copy()
    for c in ("event", "treated"):
        out[c] = out[c].astype(bool).astype(int)
    first = [c for c in SPELL_COLUMNS if c in out.columns]
    return out[first + [c for c in out.columns if c not in first]]
