"""Trace CSV and JSON sidecar reading and atomic writing."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from ..core import TraceRecord
from ..errors import SchemaMismatch

SIDECAR_SCHEMA = "mile-run/1"


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


def trace_to_csv(trace: list[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TraceRecord.FIELDS)
    for r in trace:
        w.writerow([r.t, int(r.communicated), _fmt(r.f_avg), _fmt(r.grad_norm_avg), _fmt(r.consensus_err),
                    _fmt(r.avg_grad_of_states)])
    return buf.getvalue()


def write_trace_csv(path: str | Path, trace: list[TraceRecord]) -> None:
    atomic_write_text(path, trace_to_csv(trace))


def read_trace_csv(path: str | Path) -> list[TraceRecord]:
    """Parse a trace CSV.

    Raises:
        SchemaMismatch: header differs from the trace schema or a row is malformed.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TraceRecord.FIELDS:
        raise SchemaMismatch(f"{path}: header {rows[0] if rows else None} != {list(TraceRecord.FIELDS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(TraceRecord.FIELDS):
            raise SchemaMismatch(f"{path}:{lineno}: expected {len(TraceRecord.FIELDS)} columns, got {len(row)}")
        try:
            out.append(TraceRecord(int(row[0]), bool(int(row[1])), *(float(v) for v in row[2:])))
        except ValueError as exc:
            raise SchemaMismatch(f"{path}:{lineno}: {exc}") from exc
    return out


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def to_json(obj) -> str:
    return json.dumps(_clean(json.loads(json.dumps(obj, default=_default))), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, to_json(obj))


def read_json(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def sidecar_path(trace_path: str | Path) -> Path:
    return Path(trace_path).with_suffix(".json")


def read_sidecar(trace_path: str | Path) -> dict:
    p = sidecar_path(trace_path)
    if not p.exists():
        raise SchemaMismatch(f"missing sidecar {p}")
    data = read_json(p)
    if data.get("schema") != SIDECAR_SCHEMA:
        raise SchemaMismatch(f"{p}: schema {data.get('schema')!r} != {SIDECAR_SCHEMA!r}")
    return data
