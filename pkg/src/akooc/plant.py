"""DER droop dynamics, power filtering, dynamic loads and the discretized physical model.

Every stepping function is a pure forward-Euler transition on numpy arrays, one
entry per DER (or per load). Config fields may be scalars or per-DER arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import DimensionMismatch

CONVENTIONAL = "conventional"
MODIFIED = "modified"
ADAPTIVE = "adaptive"
FIXED_BASELINE = "fixed-baseline"


@dataclass
class DerConfig:
    """Per-unit droop parameters.

    ``sigma_omega`` is the frequency droop in Hz per p.u. power (the Hz/W value
    times ``S_base / f_base``); the angle integrates at ``2π·sigma_omega`` rad/s
    per p.u. of power error. ``sigma_V`` is p.u. voltage per p.u. reactive power.
    """

    droop_kind: object = CONVENTIONAL
    sigma_omega: object = 0.0
    sigma_V: object = 0.0
    sigma_theta: object = 0.0
    tau_theta: object = 1.0
    tau_V: object = 1.0
    omega_ref: object = 0.0
    V_ref: object = 1.0
    theta_ref: object = 0.0
    lowpass_tau: object = 0.03

    def __post_init__(self):
        kinds = np.atleast_1d(np.asarray(self.droop_kind))
        for k in kinds:
            if k not in (CONVENTIONAL, MODIFIED):
                raise ValueError(f"unknown droop kind {k!r}")
        if np.any(np.asarray(self.lowpass_tau) <= 0):
            raise ValueError("lowpass_tau must be positive")
        modified = kinds == MODIFIED
        if modified.any():
            for name in ("sigma_theta", "sigma_V", "tau_theta", "tau_V"):
                vals = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), kinds.shape)
                if np.any(vals[modified] <= 0):
                    raise ValueError(f"{name} must be positive for modified droops")
        if (~modified).any():
            for name in ("sigma_omega", "sigma_V"):
                vals = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), kinds.shape)
                if np.any(vals[~modified] <= 0):
                    raise ValueError(f"{name} must be positive for conventional droops")

    @property
    def is_modified(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.droop_kind)) == MODIFIED


def stack_configs(cfgs) -> DerConfig:
    """Combine per-DER scalar configs into one config holding arrays."""
    cfgs = list(cfgs)
    data = {}
    for f in fields(DerConfig):
        vals = [getattr(c, f.name) for c in cfgs]
        data[f.name] = np.array(vals, dtype=object if f.name == "droop_kind" else float)
    data["droop_kind"] = np.array([str(k) for k in data["droop_kind"]])
    return DerConfig(**data)


def per_unit_droop(sigma_omega_hz_per_w, sigma_v_v_per_var, s_base, v_base, f_base):
    """Convert nameplate droop gains (Hz/W, V/Var) to per unit."""
    return sigma_omega_hz_per_w * s_base / f_base, sigma_v_v_per_var * s_base / v_base


@dataclass
class PlantState:
    """Evolving truth of the simulated microgrid (arrays are per DER / per load)."""

    theta: np.ndarray
    V: np.ndarray
    P_filt: np.ndarray
    Q_filt: np.ndarray
    P_star: np.ndarray
    Q_star: np.ndarray
    load_P: np.ndarray
    load_Q: np.ndarray
    omega_offset: np.ndarray
    V_offset: np.ndarray
    t: float = 0.0

    def copy(self) -> "PlantState":
        return replace(self, **{f.name: np.array(getattr(self, f.name), copy=True)
                                for f in fields(self) if f.name != "t"})


def frequency_deviation(P_filt, P_star, cfg: DerConfig, omega_offset=0.0):
    """Instantaneous ω − ω* of a conventional droop, rad/s."""
    return omega_offset - 2 * np.pi * np.asarray(cfg.sigma_omega) * (P_filt - P_star)


def droop_conventional_step(theta, P_filt, Q_filt, P_star, Q_star, cfg: DerConfig, dt,
                            omega_offset=0.0, V_offset=0.0):
    """Frequency droop integrated for the angle; voltage droop is algebraic."""
    theta_new = theta + dt * frequency_deviation(P_filt, P_star, cfg, omega_offset)
    V_new = np.asarray(cfg.V_ref) + V_offset - np.asarray(cfg.sigma_V) * (Q_filt - Q_star)
    return theta_new, V_new


def modified_rates(theta, V, P_filt, Q_filt, P_star, Q_star, cfg: DerConfig,
                   omega_offset=0.0, V_offset=0.0):
    tau_th = np.asarray(cfg.tau_theta)
    tau_v = np.asarray(cfg.tau_V)
    dtheta = (-(theta - np.asarray(cfg.theta_ref)) / tau_th
              - np.asarray(cfg.sigma_theta) / tau_th * (P_filt - P_star) + omega_offset)
    dV = (-(V - np.asarray(cfg.V_ref) - V_offset) / tau_v
          - np.asarray(cfg.sigma_V) / tau_v * (Q_filt - Q_star))
    return dtheta, dV


def droop_modified_step(theta, V, P_filt, Q_filt, P_star, Q_star, cfg: DerConfig, dt,
                        omega_offset=0.0, V_offset=0.0):
    """Forward Euler on the angle/voltage droops with first-order damping."""
    dtheta, dV = modified_rates(theta, V, P_filt, Q_filt, P_star, Q_star, cfg,
                                omega_offset, V_offset)
    return theta + dt * dtheta, V + dt * dV


def lowpass_filter_step(P_raw, Q_raw, P_filt, Q_filt, lowpass_tau, dt):
    alpha = dt / np.asarray(lowpass_tau, dtype=float)
    return P_filt + alpha * (P_raw - P_filt), Q_filt + alpha * (Q_raw - Q_filt)


@dataclass
class LoadConfig:
    """Voltage-dependent load with first-order recovery (``T_L = 0`` means static)."""

    P0: object
    Q0: object
    alpha_P: object = 0.0
    alpha_Q: object = 0.0
    T_L: object = 0.0
    V0: object = 1.0


def load_demand(V_bus, cfg: LoadConfig):
    ratio = np.asarray(V_bus, dtype=float) / np.asarray(cfg.V0, dtype=float)
    return (np.asarray(cfg.P0) * ratio ** np.asarray(cfg.alpha_P),
            np.asarray(cfg.Q0) * ratio ** np.asarray(cfg.alpha_Q))


def dynamic_load_step(load_P, load_Q, V_bus, cfg: LoadConfig, dt):
    """``T_L·ẋ = P0·(V/V0)^α − x`` for active and reactive parts; returns consumed power."""
    target_P, target_Q = load_demand(V_bus, cfg)
    T_L = np.asarray(cfg.T_L, dtype=float)
    static = T_L <= 0
    a = np.where(static, 1.0, dt / np.where(static, 1.0, T_L))
    a = np.minimum(a, 1.0)
    return load_P + a * (target_P - load_P), load_Q + a * (target_Q - load_Q)


def apply_reference_update(P_filt, Q_filt, u, mode, P0=None, Q0=None):
    """New droop reference powers from a secondary command ``u = [ΔP*; ΔQ*]``."""
    u = np.asarray(u, dtype=float)
    n = len(np.atleast_1d(P_filt))
    if u.shape != (2 * n,):
        raise DimensionMismatch(f"u must have length {2 * n}")
    dP, dQ = u[:n], u[n:]
    if mode == ADAPTIVE:
        return P_filt + dP, Q_filt + dQ
    if mode == FIXED_BASELINE:
        return np.asarray(P0) + dP, np.asarray(Q0) + dQ
    raise ValueError(f"unknown reference update mode {mode!r}")


@dataclass
class PhysicalModel:
    A: np.ndarray
    B: np.ndarray
    T_s: float


def _broadcast(cfg: DerConfig, name, n):
    return np.broadcast_to(np.asarray(getattr(cfg, name), dtype=float), (n,)).copy()


def droop_rate_gains(cfg: DerConfig, n_der: int, T_s: float):
    """Diagonal input-to-rate gains for the (Δθ, ΔV) channels, and the decay rates."""
    mod = np.broadcast_to(cfg.is_modified, (n_der,))
    sig_w = 2 * np.pi * _broadcast(cfg, "sigma_omega", n_der)
    sig_v = _broadcast(cfg, "sigma_V", n_der)
    sig_th = _broadcast(cfg, "sigma_theta", n_der)
    tau_th = _broadcast(cfg, "tau_theta", n_der)
    tau_v = _broadcast(cfg, "tau_V", n_der)
    g_theta = np.where(mod, sig_th / tau_th, sig_w)
    # algebraic voltage droop acts within one secondary step
    g_V = np.where(mod, sig_v / tau_v, sig_v / T_s)
    decay_theta = np.where(mod, 1.0 / tau_th, 0.0)
    decay_V = np.where(mod, 1.0 / tau_v, 0.0)
    return np.concatenate([g_theta, g_V]), np.concatenate([decay_theta, decay_V])


def physical_model_matrices(cfg: DerConfig, J, T_s: float, n_der: int | None = None) -> PhysicalModel:
    """Discrete small-signal model ``x⁺ = A x + B u`` with ``x = [Δθ; ΔV]``.

    Modified droops use the exponential decay minus ``diag(σ/τ)·J·T_s``;
    conventional droops use the Euler form ``I − T_s·diag(σ)·J``.
    ``J`` must be ordered ``[θ-block, V-block]`` over the DERs.
    """
    J = np.asarray(J, dtype=float)
    if n_der is None:
        n_der = J.shape[0] // 2
    if J.shape != (2 * n_der, 2 * n_der):
        raise DimensionMismatch(f"J must be {2 * n_der}x{2 * n_der}, got {J.shape}")
    gains, decay = droop_rate_gains(cfg, n_der, T_s)
    mod = np.concatenate([np.broadcast_to(cfg.is_modified, (n_der,))] * 2)
    base = np.where(mod, np.exp(-decay * T_s), 1.0)
    A = np.diag(base) - T_s * gains[:, None] * J
    B = np.diag(T_s * gains)
    return PhysicalModel(A, B, T_s)
