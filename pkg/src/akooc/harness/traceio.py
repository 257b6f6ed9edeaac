"""Trace CSV, run manifests, timing sidecars and plain-text matrix bundles."""
from __future__ import annotations

import csv
import io
import platform
from pathlib import Path

import numpy as np

from .. import __version__
from .simulate import Trace

INT_COLUMNS = {"iterations"}
STR_COLUMNS = {"status"}


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    # repr of a Python float is the shortest string that round-trips
    return repr(float(v))


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace.columns)
    for row in trace.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest")


def timings_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".timings.txt")


def export_trace(trace: Trace, path, manifest: bool = True) -> Path:
    """Write the trace CSV and, by default, its key-value manifest sidecar."""
    path = Path(path)
    path.write_text(trace_to_csv(trace), encoding="utf-8")
    if manifest:
        info = dict(trace.meta)
        info.update({
            "n_der": trace.n_der,
            "rows": len(trace.rows),
            "collapsed": str(trace.collapsed).lower(),
            "collapse_time_s": _fmt(trace.collapse_time),
            "akooc_version": __version__,
            "numpy_version": np.__version__,
            "python_version": platform.python_version(),
        })
        lines = [f"{k} = {v}" for k, v in info.items()]
        manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def export_timings(trace: Trace, path) -> Path:
    """Controller wall-clock per step as CSV text, kept out of the trace so traces stay reproducible."""
    path = Path(path)
    body = "step,wall_ms\n" + "".join(f"{i},{_fmt(t)}\n" for i, t in enumerate(trace.timings_ms))
    path.write_text(body, encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _parse(col, s):
    if col in STR_COLUMNS:
        return s
    if col in INT_COLUMNS:
        return int(s)
    return float(s)


def import_trace(path) -> Trace:
    """Read a trace CSV written by :func:`export_trace` (manifest optional)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} has no header row")
    cols = rows[0]
    n_der = sum(1 for c in cols if c.startswith("dV_der") and c.endswith("_pu"))
    trace = Trace(cols, [[_parse(c, v) for c, v in zip(cols, r)] for r in rows[1:]], n_der=n_der)
    mpath = manifest_path(path)
    if mpath.exists():
        meta = read_manifest(mpath)
        trace.collapsed = meta.pop("collapsed", "false") == "true"
        trace.collapse_time = float(meta.pop("collapse_time_s", "nan"))
        trace.meta = meta
    return trace


def write_matrix_bundle(path, matrices: dict) -> Path:
    """Named matrices as text: a ``name rows cols`` header then row-major values."""
    lines = ["# akooc matrix bundle"]
    for name, M in matrices.items():
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if " " in name:
            raise ValueError("matrix names may not contain spaces")
        lines.append(f"{name} {M.shape[0]} {M.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in M)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_matrix_bundle(path) -> dict:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    out, i = {}, 0
    while i < len(lines):
        head = lines[i].split()
        if len(head) != 3:
            raise ValueError(f"bad matrix header: {lines[i]!r}")
        name, r, c = head[0], int(head[1]), int(head[2])
        body = lines[i + 1:i + 1 + r]
        if len(body) != r:
            raise ValueError(f"matrix {name} is truncated")
        M = np.array([[float(v) for v in row.split()] for row in body]).reshape(r, c)
        out[name] = M
        i += 1 + r
    return out
