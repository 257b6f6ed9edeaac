"""Minimal SVG line plots of trace channels."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..errors import UnknownChannel
from .simulate import Trace

WIDTH, HEIGHT = 720, 360
MARGIN = dict(left=70, right=160, top=30, bottom=50)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf"]

PANELS = {
    "rs": ("RS index (p.u.)", ["rs_pu"]),
    "voltage": ("Voltage deviation (p.u.)", ["dV_der{i}_pu"]),
    "frequency": ("Frequency deviation (p.u.)", ["dw_der{i}_pu"]),
    "angle": ("Angle deviation (rad)", ["dtheta_der{i}_rad"]),
    "control": ("Control input (p.u.)", ["uP_der{i}_pu", "uQ_der{i}_pu"]),
    "prediction": ("One-step prediction error", ["pred_err_ensemble", "pred_err_linear",
                                                 "pred_err_full"]),
    "regression": ("Regression error", ["regression_err"]),
}


def _expand(trace: Trace, channel: str):
    """Resolve a panel alias or a raw column name to ``(title, [column names])``."""
    if channel in PANELS:
        title, pats = PANELS[channel]
        cols = []
        for p in pats:
            if "{i}" in p:
                cols += [p.format(i=i) for i in range(1, trace.n_der + 1)]
            else:
                cols.append(p)
        cols = [c for c in cols if trace.has(c)]
        if not cols:
            raise UnknownChannel(f"channel {channel!r} has no columns in this trace")
        return title, cols
    if trace.has(channel) and channel not in ("status", "time_s"):
        return channel, [channel]
    raise UnknownChannel(f"unknown channel {channel!r}")


def _nice_ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return [0.0]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + 0.5 * step, step)]


def svg_panel(series, title: str, xlabel: str = "time (s)") -> str:
    """SVG text for one panel; ``series`` is a list of ``(label, t, y)``."""
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    ts = [np.asarray(t, float) for _, t, _ in series]
    ys = [np.asarray(y, float) for _, _, y in series]
    finite_t = np.concatenate([t for t in ts if t.size] or [np.zeros(1)])
    finite_y = np.concatenate([y[np.isfinite(y)] for y in ys] or [np.zeros(1)])
    if finite_y.size == 0:
        finite_y = np.zeros(1)
    x0, x1 = float(finite_t.min()), float(finite_t.max())
    y0, y1 = float(finite_y.min()), float(finite_y.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        pad = abs(y0) * 0.1 or 1.0
        y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="18" text-anchor="middle" '
           f'font-size="13">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for v in _nice_ticks(x0, x1):
        if x0 <= v <= x1:
            out.append(f'<line x1="{sx(v):.1f}" y1="{MARGIN["top"] + ph}" x2="{sx(v):.1f}" '
                       f'y2="{MARGIN["top"] + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{sx(v):.1f}" y="{MARGIN["top"] + ph + 16}" '
                       f'text-anchor="middle">{v:g}</text>')
    for v in _nice_ticks(y0, y1):
        if y0 <= v <= y1:
            out.append(f'<line x1="{MARGIN["left"] - 4}" y1="{sy(v):.1f}" x2="{MARGIN["left"]}" '
                       f'y2="{sy(v):.1f}" stroke="black"/>')
            out.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(v) + 4:.1f}" '
                       f'text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 10}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    for j, (label, t, y) in enumerate(series):
        color = PALETTE[j % len(PALETTE)]
        t, y = np.asarray(t, float), np.asarray(y, float)
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                   f'data-label="{escape(label)}" points="{pts}"/>')
        ly = MARGIN["top"] + 12 + 16 * j
        lx = MARGIN["left"] + pw + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{lx + 24}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_plot(traces, channels, path):
    """Write one SVG panel per channel and return the written paths.

    ``traces`` is a single :class:`Trace` or a list of ``(label, Trace)``
    pairs to overlay. With one channel the panel goes to ``path`` itself;
    otherwise each panel is written next to it as ``<stem>_<channel>.svg``.
    """
    if isinstance(traces, Trace):
        traces = [(traces.meta.get("controller", "trace"), traces)]
    if isinstance(channels, str):
        channels = [c for c in channels.split(",") if c]
    if not channels:
        raise UnknownChannel("no channels requested")
    path = Path(path)
    resolved = []
    for ch in channels:
        title, cols = None, None
        for _, tr in traces:
            title, cols = _expand(tr, ch)
        resolved.append((ch, title, cols))
    written = []
    for ch, title, cols in resolved:
        series = []
        for label, tr in traces:
            t = tr.column("time_s") if tr.rows else np.zeros(0)
            for c in cols:
                name = label if len(cols) == 1 else (f"{label}: {c}" if len(traces) > 1 else c)
                series.append((name, t, tr.column(c) if tr.rows else np.zeros(0)))
        target = path if len(channels) == 1 else path.with_name(f"{path.stem}_{ch}.svg")
        target.write_text(svg_panel(series, title), encoding="utf-8")
        written.append(target)
    return written
