"""Rebuild identification windows from the measured columns of a trace."""
from __future__ import annotations

import numpy as np

from ..koopman import KoopmanDataset, assemble_window
from .simulate import Trace


def measured_history(trace: Trace):
    """``(xs, us)`` as ``2n × steps`` arrays of measured states and issued controls."""
    xs = np.vstack([trace.per_der("dtheta_meas_der{i}_rad").T,
                    trace.per_der("dV_meas_der{i}_pu").T])
    us = np.vstack([trace.per_der("uP_der{i}_pu").T, trace.per_der("uQ_der{i}_pu").T])
    return xs, us


def trace_T_s(trace: Trace) -> float:
    if "T_s" in trace.meta:
        return float(trace.meta["T_s"])
    t = trace.column("time_s")
    if t.size < 2:
        raise ValueError("cannot infer T_s from a trace with fewer than two rows")
    return float(np.median(np.diff(t)))


def rolling_windows(trace: Trace, N: int, T_s: float | None = None, t_start: float = -np.inf,
                    t_stop: float = np.inf) -> list[KoopmanDataset]:
    """Every window whose newest sample lies in ``[t_start, t_stop]``.

    Window ``k`` sees the states up to step ``k`` and the controls issued
    before it, exactly as the online controller would.
    """
    T_s = trace_T_s(trace) if T_s is None else T_s
    xs, us = measured_history(trace)
    t = trace.column("time_s")
    out = []
    for k in range(N, xs.shape[1]):
        if t_start <= t[k] <= t_stop:
            out.append(assemble_window(xs[:, k - N:k + 1], us[:, k - N:k], N, T_s))
    return out
