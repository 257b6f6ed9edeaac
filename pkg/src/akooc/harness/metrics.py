"""Scalar performance indices computed from DER deviations."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch


def compute_rs(dV, d_omega, n_der: int | None = None) -> float:
    """Normalized RMS of voltage and frequency deviations, ``√((‖ΔV‖² + ‖Δω‖²)/(2n))``."""
    dV = np.asarray(dV, dtype=float).ravel()
    d_omega = np.asarray(d_omega, dtype=float).ravel()
    n = dV.size if n_der is None else n_der
    if dV.size != n or d_omega.size != n:
        raise DimensionMismatch(f"expected {n} voltage and frequency deviations")
    return float(np.sqrt((dV @ dV + d_omega @ d_omega) / (2 * n)))


def max_abs_over(times, values, t0: float, t1: float) -> float:
    """Largest finite ``|value|`` with ``t0 ≤ t ≤ t1``; NaN when none qualify."""
    times = np.asarray(times, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    sel = (times >= t0) & (times <= t1) & np.isfinite(values)
    return float(values[sel].max()) if sel.any() else float("nan")


def settle_time(times, inside, t_from: float) -> float:
    """First time after ``t_from`` from which ``inside`` stays true to the end; inf if never."""
    times = np.asarray(times, dtype=float)
    inside = np.asarray(inside, dtype=bool)
    sel = times >= t_from
    t, ok = times[sel], inside[sel]
    if t.size == 0 or not ok[-1]:
        return float("inf")
    bad = np.flatnonzero(~ok)
    return float(t[0] if bad.size == 0 else t[bad[-1] + 1])
