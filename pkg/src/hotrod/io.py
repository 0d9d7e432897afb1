"""Artifact reading and writing: CSV/JSON with provenance headers, atomic renames."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .timeline import DayKind, SleepRecord, Stream

PARTIAL_SUFFIX = ".partial"
META_PREFIX = "# "


class InputError(ValueError):
    """Bad or missing input data (exit code 2)."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _Float(float(obj))
    if isinstance(obj, DayKind):
        return obj.value
    return obj


class _Float(float):
    """Marks floats for 17-significant-digit rendering."""


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, _Float) or isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float {obj} cannot be serialized")
        return format(float(obj), ".17g")
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k, ensure_ascii=False)}: {_encode(obj[k], indent, level + 1)}"
                 for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return json.dumps(obj, ensure_ascii=False)


def dumps_json(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    return _encode(_jsonable(obj), indent, 0) + "\n"


@contextmanager
def atomic_path(path: Path):
    """Yield a ``.partial`` sibling; rename it onto ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + PARTIAL_SUFFIX)
    yield tmp
    os.replace(tmp, path)


def write_text(path, text: str) -> Path:
    path = Path(path)
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    return path


def meta_line(config_hash: str) -> str:
    return f"{META_PREFIX}hotrod-version={__version__} config-hash={config_hash}\n"


def write_json(path, obj, config_hash: str | None = None) -> Path:
    if config_hash is not None:
        obj = dict(obj)
        obj["meta"] = {"hotrod_version": __version__, "config_hash": config_hash}
    return write_text(path, dumps_json(obj))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence],
              config_hash: str | None = None) -> Path:
    buf = _io.StringIO()
    if config_hash is not None:
        buf.write(meta_line(config_hash))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return write_text(path, buf.getvalue())


def read_meta(path) -> dict[str, str]:
    """Key-value pairs of a CSV metadata line or a JSON ``meta`` block ({} if absent)."""
    path = Path(path)
    if path.suffix == ".json":
        return {k.replace("_", "-"): v for k, v in json.loads(path.read_text()).get("meta", {}).items()}
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    if not first.startswith(META_PREFIX):
        return {}
    return dict(kv.split("=", 1) for kv in first[len(META_PREFIX):].split())


def read_csv(path, required: Sequence[str] = ()) -> list[dict[str, str]]:
    """Rows as dicts; ``required`` columns must be present in the header."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"missing input file: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith(META_PREFIX)]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise InputError(f"{path}: empty file (header required)")
    missing = [c for c in required if c not in reader.fieldnames]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    return list(reader)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---- timeline inputs -------------------------------------------------------

HEARTRATE_COLS = ("participant_id", "timestamp", "bpm")
STEPS_COLS = ("participant_id", "timestamp", "steps")
SLEEP_COLS = ("participant_id", "onset", "end", "efficiency")
DAYS_COLS = ("participant_id", "date", "day_kind")
LABEL_COLS = ("participant_id", "job_type", "shift", "gender", "neu", "con", "ext", "agr",
              "opn", "pos_affect", "neg_affect")


def _num(path, row, col, kind=float):
    try:
        v = kind(row[col])
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad {col} value {row.get(col)!r}") from exc
    if kind is float and not math.isfinite(v):
        raise InputError(f"{path}: non-finite {col}")
    return v


def read_streams(path, value_col: str) -> dict[str, Stream]:
    """Per-participant stream of one channel."""
    cols = ("participant_id", "timestamp", value_col)
    by_pid: dict[str, tuple[list, list]] = {}
    for row in read_csv(path, cols):
        ts, vs = by_pid.setdefault(row["participant_id"], ([], []))
        ts.append(_num(path, row, "timestamp", int))
        vs.append(_num(path, row, value_col))
    return {pid: Stream(np.asarray(ts, dtype=np.int64), np.asarray(vs, dtype=float))
            for pid, (ts, vs) in by_pid.items()}


def read_sleeps(path) -> dict[str, list[SleepRecord]]:
    out: dict[str, list[SleepRecord]] = {}
    for row in read_csv(path, SLEEP_COLS):
        try:
            rec = SleepRecord(_num(path, row, "onset", int), _num(path, row, "end", int),
                              _num(path, row, "efficiency"))
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc
        out.setdefault(row["participant_id"], []).append(rec)
    return {pid: sorted(recs, key=lambda r: (r.onset, r.end)) for pid, recs in out.items()}


def read_day_kinds(path) -> dict[str, dict[str, DayKind]]:
    out: dict[str, dict[str, DayKind]] = {}
    for row in read_csv(path, DAYS_COLS):
        try:
            kind = DayKind(row["day_kind"].strip().lower())
        except ValueError as exc:
            raise InputError(f"{path}: unknown day_kind {row['day_kind']!r}") from exc
        out.setdefault(row["participant_id"], {})[row["date"]] = kind
    return out


def read_labels(path) -> list[dict]:
    rows = read_csv(path, LABEL_COLS)
    out = []
    for row in rows:
        rec = {k: row[k] for k in ("participant_id", "job_type", "shift", "gender")}
        rec["scores"] = {k: _num(path, row, k) for k in LABEL_COLS[4:] if row[k] != ""}
        out.append(rec)
    return out

