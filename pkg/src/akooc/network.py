"""Static electrical model: bus admittance, injections, Jacobian and power flow.

All quantities are per unit. Angles are in radians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    IslandedBusDetected,
    NonConvergence,
    SingularJacobian,
    ZeroImpedanceLine,
)

DER = "DER"
LOAD = "LOAD"
SLACK = "GEN-slack"
ROLES = (DER, LOAD, SLACK)

PF_TOL = 1e-8
PF_MAX_ITER = 50


class Line(NamedTuple):
    from_bus: int
    to_bus: int
    r: float
    x: float
    in_service: bool = True
    name: str = ""


@dataclass
class NetworkModel:
    n_bus: int
    lines: list
    bus_roles: list
    G: np.ndarray
    B: np.ndarray
    shunts: np.ndarray = field(default=None)

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B

    def source_mask(self) -> np.ndarray:
        return np.array([r in (DER, SLACK) for r in self.bus_roles], dtype=bool)


@dataclass
class BusSolution:
    V: np.ndarray
    theta: np.ndarray
    P_inj: np.ndarray
    Q_inj: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0


@dataclass
class Boundary:
    """Per-bus constraints for :func:`solve_power_flow`.

    Buses flagged in ``source`` hold ``V`` and ``theta`` fixed; every other
    bus has its net injections ``P``/``Q`` prescribed (loads are negative).
    """

    source: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    P: np.ndarray
    Q: np.ndarray


def _as_line(line) -> Line:
    if isinstance(line, Line):
        return line
    return Line(*line)


def build_admittance(lines: Sequence, n_bus: int, bus_roles=None, shunts=None) -> NetworkModel:
    """Stamp series branches (and optional complex bus shunts) into G and B."""
    lines = [_as_line(ln) for ln in lines]
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    connected = np.zeros(n_bus, dtype=bool)
    for ln in lines:
        i, j = int(ln.from_bus), int(ln.to_bus)
        if not (0 <= i < n_bus and 0 <= j < n_bus) or i == j:
            raise IndexError(f"line {ln.name or (i, j)} has invalid bus indices")
        if not ln.in_service:
            continue
        z = complex(ln.r, ln.x)
        if z == 0:
            raise ZeroImpedanceLine(f"line {ln.name or (i, j)} has zero series impedance")
        y = 1.0 / z
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
        connected[i] = connected[j] = True

    if shunts is not None:
        shunts = np.asarray(shunts, dtype=complex)
        if shunts.shape != (n_bus,):
            raise DimensionMismatch("shunts must have one entry per bus")
        Y[np.diag_indices(n_bus)] += shunts
    else:
        shunts = np.zeros(n_bus, dtype=complex)

    if bus_roles is None:
        roles = [LOAD] * n_bus
    else:
        roles = list(bus_roles)
        if len(roles) != n_bus:
            raise DimensionMismatch("bus_roles must have one entry per bus")
        bad = [r for r in roles if r not in ROLES]
        if bad:
            raise ValueError(f"unknown bus role(s): {bad}")
        isolated = [b for b in range(n_bus) if not connected[b] and roles[b] in (DER, LOAD)]
        if isolated:
            raise IslandedBusDetected(f"bus(es) {isolated} have no in-service connection")

    return NetworkModel(n_bus, lines, roles, Y.real.copy(), Y.imag.copy(), shunts)


def _check_dims(V, theta, model):
    V = np.asarray(V, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = model.G.shape[0]
    if V.shape != (n,) or theta.shape != (n,):
        raise DimensionMismatch(f"expected vectors of length {n}, got {V.shape} and {theta.shape}")
    return V, theta


def injections(V, theta, model):
    """Net active and reactive injection at every bus."""
    V, theta = _check_dims(V, theta, model)
    Vc = V * np.exp(1j * theta)
    S = Vc * np.conj((model.G + 1j * model.B) @ Vc)
    return S.real, S.imag


def power_flow_jacobian(V, theta, model) -> np.ndarray:
    """Full ``[[dP/dθ, dP/dV], [dQ/dθ, dQ/dV]]`` block Jacobian."""
    V, theta = _check_dims(V, theta, model)
    Y = model.G + 1j * model.B
    Vc = V * np.exp(1j * theta)
    Ibus = Y @ Vc
    diagV = np.diag(Vc)
    dS_dth = 1j * diagV @ np.conj(np.diag(Ibus) - Y @ diagV)
    Vnorm = np.exp(1j * theta)
    dS_dV = diagV @ np.conj(Y @ np.diag(Vnorm)) + np.conj(np.diag(Ibus)) @ np.diag(Vnorm)
    return np.block([[dS_dth.real, dS_dV.real], [dS_dth.imag, dS_dV.imag]])


def solve_power_flow(model: NetworkModel, boundary: Boundary, guess=None,
                     tol: float = PF_TOL, max_iter: int = PF_MAX_ITER) -> BusSolution:
    """Newton-Raphson on the P/Q mismatch of the non-source buses.

    ``guess`` is an optional ``(V, theta)`` pair used for the unknown buses;
    source buses always take their values from ``boundary``.
    """
    n = model.n_bus
    src = np.asarray(boundary.source, dtype=bool)
    if src.shape != (n,):
        raise DimensionMismatch("boundary.source must have one entry per bus")
    if not src.any():
        raise ValueError("at least one bus must fix (V, theta) as angle reference")

    if guess is None:
        V = np.where(src, boundary.V, 1.0).astype(float)
        theta = np.where(src, boundary.theta, 0.0).astype(float)
    else:
        V = np.where(src, boundary.V, guess[0]).astype(float)
        theta = np.where(src, boundary.theta, guess[1]).astype(float)

    pq = np.flatnonzero(~src)
    m = len(pq)
    P_spec = np.asarray(boundary.P, dtype=float)[pq]
    Q_spec = np.asarray(boundary.Q, dtype=float)[pq]
    rows = np.concatenate([pq, pq + n])

    it = 0
    worst = 0.0
    while True:
        P, Q = injections(V, theta, model)
        if m == 0:
            break
        F = np.concatenate([P[pq] - P_spec, Q[pq] - Q_spec])
        worst = float(np.max(np.abs(F)))
        if not np.isfinite(worst):
            raise NonConvergence("power flow mismatch became non-finite")
        if worst < tol:
            break
        if it >= max_iter:
            raise NonConvergence(f"power flow did not converge in {max_iter} iterations "
                                 f"(mismatch {worst:.3e})")
        J = power_flow_jacobian(V, theta, model)[np.ix_(rows, rows)]
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        theta[pq] += dx[:m]
        V[pq] += dx[m:]
        it += 1
        if np.any(V[pq] <= 0.0):
            raise NonConvergence("power flow iterate reached non-positive voltage")

    return BusSolution(V, theta, P, Q, iterations=it, mismatch=worst)
