"""Deterministic CSV / JSON writers.

Floats are written with ``repr`` (shortest round-trip form), so identical
numbers always give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path as FsPath

import numpy as np


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def _plain(obj):
    """JSON-ready copy: numpy scalars/arrays become Python, sets become sorted lists."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_plain(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> FsPath:
    path = FsPath(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def write_csv(path, header, rows, meta: dict | None = None) -> FsPath:
    """CSV with an optional first line ``# {json}`` carrying metadata."""
    path = FsPath(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if meta is not None:
            fh.write("# " + json.dumps(_plain(meta), sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def read_csv(path):
    """Returns (meta or None, header, rows as lists of strings)."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        meta = None
        if first.startswith("# "):
            meta = json.loads(first[2:])
        else:
            fh.seek(0)
        rd = csv.reader(fh)
        header = next(rd)
        return meta, header, [r for r in rd]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> FsPath:
    path = FsPath(path)
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# typed writers

def write_cell_points(path, rows):
    """rows of (n, i, KickPoint) in cell order."""
    return write_csv(path, ["n", "i", "eta", "xi", "kappa"],
                     ([n, i, p.eta, p.xi, p.kappa] for n, i, p in rows))


def write_path(path, trace_path, meta=None):
    return write_csv(path, ["t", "x"], zip(trace_path.times.tolist(), trace_path.positions.tolist()), meta)


def write_profile(path, profile, extra: dict | None = None):
    meta = {"time": profile.time, "kind": profile.kind, "h": profile.grid.h,
            "x_min": profile.grid.x_min, "count": profile.grid.count,
            "trusted": list(profile.trusted), "flags": profile.flags}
    if extra:
        meta.update(extra)
    mask = profile.trusted_mask()
    return write_csv(path, ["x", "value", "trusted"], zip(profile.grid.x, profile.values, mask), meta)


def write_trace(stem, trace):
    """``stem.csv`` with the path, ``stem.json`` sidecar with refinement diagnostics."""
    stem = FsPath(stem)
    a = write_path(stem.with_suffix(".csv"), trace.path)
    b = write_json(stem.with_suffix(".json"), {
        "source": trace.source, "refined": trace.refined, "el_res": trace.el_res,
        "action": trace.action, "iterations": trace.iterations, "flags": trace.flags,
        "start_time": trace.path.start_time, "end_time": trace.path.end_time})
    return a, b
