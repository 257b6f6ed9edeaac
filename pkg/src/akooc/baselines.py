"""Comparison secondary controllers: PI on droop reference powers and secondary droop."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PiConfig:
    kp_f: float = 0.0
    ki_f: float = 0.0
    kp_v: float = 0.0
    ki_v: float = 0.0
    u_lb: float = -1.0 / 15
    u_ub: float = 1.0 / 15


class PiController:
    """Per-DER PI loops: frequency error drives ``ΔP*``, voltage error drives ``ΔQ*``.

    Integration is halted on any channel whose output is clamped and whose
    error would push it further into the clamp.
    """

    def __init__(self, cfg: PiConfig, n_der: int):
        self.cfg = cfg
        self.n_der = n_der
        self.integral = np.zeros(2 * n_der)

    def reset(self):
        self.integral[:] = 0.0

    def pi_step(self, d_omega, d_V, dt: float) -> np.ndarray:
        c = self.cfg
        e = np.concatenate([np.asarray(d_omega, float), np.asarray(d_V, float)])
        n = self.n_der
        kp = np.concatenate([np.full(n, c.kp_f), np.full(n, c.kp_v)])
        ki = np.concatenate([np.full(n, c.ki_f), np.full(n, c.ki_v)])

        trial = self.integral + e * dt
        u_trial = -(kp * e + ki * trial)
        # integrator moves u by −ki·e·dt; freeze it where that deepens saturation
        push = -ki * e
        frozen = ((u_trial > c.u_ub) & (push > 0)) | ((u_trial < c.u_lb) & (push < 0))
        self.integral = np.where(frozen, self.integral, trial)
        u = -(kp * e + ki * self.integral)
        return np.clip(u, c.u_lb, c.u_ub)


@dataclass
class SecondaryDroopConfig:
    """Restoration gains.

    ``k_q`` couples each DER's voltage offset to its reactive power mismatch
    from the fleet average (reactive sharing); with ``k_q = 0`` the voltage
    loop is a plain local integrator.
    """

    k_omega: float = 0.0
    k_v: float = 0.0
    k_q: float = 0.0


class SecondaryDroop:
    """Integrates offsets added to the droop frequency and voltage references."""

    def __init__(self, cfg: SecondaryDroopConfig, n_der: int):
        self.cfg = cfg
        self.omega_offset = np.zeros(n_der)
        self.V_offset = np.zeros(n_der)

    def reset(self):
        self.omega_offset[:] = 0.0
        self.V_offset[:] = 0.0

    def secondary_droop_step(self, d_omega, d_V, dt: float, Q=None):
        """Advance the offsets by one step and return ``(omega_offset, V_offset)``.

        ``d_omega`` is in rad/s, ``d_V`` in p.u.; ``Q`` (p.u.) is needed only
        when ``k_q`` is nonzero.
        """
        c = self.cfg
        d_omega = np.asarray(d_omega, float)
        d_V = np.asarray(d_V, float)
        self.omega_offset = self.omega_offset - dt * c.k_omega * np.mean(d_omega)
        dV_rate = -c.k_v * d_V
        if c.k_q and Q is not None:
            Q = np.asarray(Q, float)
            dV_rate = dV_rate - c.k_q * (Q - Q.mean())
        self.V_offset = self.V_offset + dt * dV_rate
        return self.omega_offset.copy(), self.V_offset.copy()
