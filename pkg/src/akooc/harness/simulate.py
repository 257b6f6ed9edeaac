"""Two-rate co-simulation: droop plant at ``dt``, secondary control at ``T_s``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..baselines import PiConfig, PiController, SecondaryDroop, SecondaryDroopConfig
from ..control import AKOOC, KOOPMAN_FULL, KOOPMAN_LINEAR, AkoocController, cost_matrices
from ..errors import NonConvergence, PlantCollapse, SingularJacobian
from ..koopman import prediction_error
from ..network import Boundary, build_admittance, solve_power_flow
from ..plant import (
    ADAPTIVE,
    FIXED_BASELINE,
    DerConfig,
    PlantState,
    droop_rate_gains,
    dynamic_load_step,
    frequency_deviation,
    lowpass_filter_step,
    modified_rates,
)
from ..telemetry import TelemetryChannel
from .metrics import compute_rs
from .scenario import ScenarioSpec

KOOPMAN_KINDS = (AKOOC, KOOPMAN_LINEAR, KOOPMAN_FULL)
PRED_NAMES = {AKOOC: "ensemble", KOOPMAN_LINEAR: "linear", KOOPMAN_FULL: "full"}
GLOBAL_COLUMNS = ["time_s", "rs_pu", "regression_err", "spectral_radius", "iterations", "status"]
PER_DER_COLUMNS = ["dtheta_der{i}_rad", "dV_der{i}_pu", "dw_der{i}_pu", "dtheta_meas_der{i}_rad",
                   "dV_meas_der{i}_pu", "uP_der{i}_pu", "uQ_der{i}_pu"]
PRED_COLUMNS = ["pred_err_ensemble", "pred_err_linear", "pred_err_full"]


def trace_columns(n_der: int, shadow: bool = False) -> list:
    cols = list(GLOBAL_COLUMNS)
    for i in range(1, n_der + 1):
        cols += [c.format(i=i) for c in PER_DER_COLUMNS]
    if shadow:
        cols += PRED_COLUMNS
    return cols


@dataclass
class Trace:
    """Per-secondary-step records plus run metadata; wall-clock timings kept apart."""

    columns: list
    rows: list = field(default_factory=list)
    n_der: int = 0
    collapsed: bool = False
    collapse_time: float = float("nan")
    meta: dict = field(default_factory=dict)
    timings_ms: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        j = self.columns.index(name)
        vals = [r[j] for r in self.rows]
        if name == "status":
            return np.array(vals, dtype=object)
        return np.array(vals, dtype=float)

    def has(self, name) -> bool:
        return name in self.columns

    def per_der(self, pattern: str) -> np.ndarray:
        """Stack a per-DER column family into ``steps × n_der``."""
        return np.column_stack([self.column(pattern.format(i=i))
                                for i in range(1, self.n_der + 1)]) \
            if self.rows else np.zeros((0, self.n_der))


def subset_config(cfg: DerConfig, idx) -> DerConfig:
    idx = np.asarray(idx)
    data = {}
    for f in fields(DerConfig):
        v = np.asarray(getattr(cfg, f.name))
        data[f.name] = v[idx] if v.ndim else v
    return DerConfig(**data)


def learner_input_matrix(cfg: DerConfig, n_der: int, T_s: float) -> np.ndarray:
    """Input matrix of the discretized droop model (it does not depend on the Jacobian)."""
    gains, _ = droop_rate_gains(cfg, n_der, T_s)
    return np.diag(T_s * gains)


class Simulation:
    """Stateful executor of one scenario; call :meth:`run` once."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        s = spec
        self.n_src = len(s.der_buses)
        self.n = s.n_der
        self.ctrl_idx = np.arange(self.n)
        self.src_bus = np.array(s.der_buses, dtype=int)
        self.load_bus = np.array(s.load_buses, dtype=int)
        self.cfg = s.der_cfg
        self.is_mod = np.broadcast_to(self.cfg.is_modified, (self.n_src,))
        self.V_ref = np.broadcast_to(np.asarray(self.cfg.V_ref, float), (self.n_src,))
        self.theta_ref = np.broadcast_to(np.asarray(self.cfg.theta_ref, float), (self.n_src,))

        self.lines = list(s.lines)
        self.shunts = np.zeros(s.n_bus, dtype=complex)
        self._rebuild_network()

        root = np.random.SeedSequence([s.seed])
        amb_ss, load_ss = root.spawn(2)
        self.amb_rng = np.random.default_rng(amb_ss)
        self.load_rng = np.random.default_rng(load_ss)
        tel_cfg = replace(s.telemetry, rng_seed=int(np.random.SeedSequence(
            [s.seed, s.telemetry.rng_seed]).generate_state(1)[0]))
        self.telemetry = TelemetryChannel(tel_cfg)

        self._init_equilibrium()
        self._init_controller()

    # ---- network -------------------------------------------------------
    def _rebuild_network(self):
        s = self.spec
        self.model = build_admittance(self.lines, s.n_bus, s.bus_roles, self.shunts)
        self.src_mask = np.zeros(s.n_bus, dtype=bool)
        self.src_mask[self.src_bus] = True

    def _solve(self, V_src, th_src, load_P, load_Q, guess=None):
        s = self.spec
        V = np.ones(s.n_bus)
        th = np.zeros(s.n_bus)
        V[self.src_bus] = V_src
        th[self.src_bus] = th_src
        P = np.zeros(s.n_bus)
        Q = np.zeros(s.n_bus)
        P[self.load_bus] = -load_P
        Q[self.load_bus] = -load_Q
        return solve_power_flow(self.model, Boundary(self.src_mask, V, th, P, Q), guess)

    def _init_equilibrium(self):
        s = self.spec
        lc = s.load_cfg
        sol = self._solve(self.V_ref, self.theta_ref, lc.P0, lc.Q0)
        P0 = sol.P_inj[self.src_bus].copy()
        Q0 = sol.Q_inj[self.src_bus].copy()
        self.P0, self.Q0 = P0, Q0
        self.load_cfg = replace(lc, P0=np.array(lc.P0, float), Q0=np.array(lc.Q0, float),
                                V0=sol.V[self.load_bus].copy())
        self.sol = sol
        zeros = np.zeros(self.n_src)
        self.state = PlantState(self.theta_ref.copy(), self.V_ref.copy(), P0.copy(), Q0.copy(),
                                P0.copy(), Q0.copy(), np.array(lc.P0, float),
                                np.array(lc.Q0, float), zeros.copy(), zeros.copy(), 0.0)
        self.load_wiener = np.zeros((2, len(self.load_bus)))

    # ---- controller ----------------------------------------------------
    def _init_controller(self):
        s = self.spec
        c = s.controller
        self.kind = c.kind
        self.enabled = False
        ctrl_cfg = subset_config(self.cfg, self.ctrl_idx)
        self.koop = None
        self.pi = None
        self.sd = None
        if c.kind in KOOPMAN_KINDS:
            Q, R = cost_matrices(self.n, c.q_theta, c.q_V, c.q_sin, c.q_cos, c.q_omega,
                                 c.r_P, c.r_Q, c.eps_Q)
            B = learner_input_matrix(ctrl_cfg, self.n, s.T_s)
            self.koop = AkoocController(B, self.n, s.T_s, s.learner, Q, R, c.u_lb, c.u_ub,
                                        model_kind=c.kind, dare_tol=c.dare_tol,
                                        dare_max_iter=c.dare_max_iter, shadow=c.shadow)
        elif c.kind in ("pi", "pi-adaptive"):
            self.pi = PiController(PiConfig(c.kp_f, c.ki_f, c.kp_v, c.ki_v, c.u_lb, c.u_ub), self.n)
        elif c.kind == "secondary-droop":
            self.sd = SecondaryDroop(SecondaryDroopConfig(c.k_omega, c.k_v, c.k_q), self.n)
        self.ref_mode = FIXED_BASELINE if c.kind == "pi" else ADAPTIVE
        self.shadow = bool(c.shadow and self.koop is not None)
        self.queue = []  # (effective substep, sequence, kind, payload)
        self._seq = 0

    # ---- events ----------------------------------------------------------
    def _event_steps(self):
        dt = self.spec.dt
        out = []
        for ev in self.spec.events:
            out.append((self._step_of(ev.t), ev.kind, ev.params, ev.t))
            if ev.kind == "fault":
                out.append((self._step_of(ev.params["t_clear"]), "fault-clear", ev.params,
                            ev.params["t_clear"]))
        out.sort(key=lambda e: (e[0], e[3]))
        return out

    def _step_of(self, t):
        return int(math.ceil(t / self.spec.dt - 1e-9))

    def _apply_event(self, kind, p):
        lc = self.load_cfg
        if kind == "load-step":
            P0, Q0 = lc.P0.copy(), lc.Q0.copy()
            for j in p["loads"]:
                if "scale" in p:
                    P0[j] *= 1 + p["scale"]
                    Q0[j] *= 1 + p["scale"]
                else:
                    P0[j] += p["dP"]
                    Q0[j] += p["dQ"]
            self.load_cfg = replace(lc, P0=P0, Q0=Q0)
        elif kind == "line-trip":
            self.lines[p["line"]] = self.lines[p["line"]]._replace(in_service=False)
            self._rebuild_network()
        elif kind == "fault":
            self.shunts[p["bus"]] += complex(p["g"], p["b"])
            self._rebuild_network()
        elif kind == "fault-clear":
            self.shunts[p["bus"]] -= complex(p["g"], p["b"])
            if "line_out" in p:
                self.lines[p["line_out"]] = self.lines[p["line_out"]]._replace(in_service=False)
            self._rebuild_network()
        elif kind == "enable-secondary":
            self.enabled = True

    # ---- control application ---------------------------------------------
    def _apply_command(self, kind, payload):
        st = self.state
        i = self.ctrl_idx
        if kind == "ref":
            u = payload
            if self.ref_mode == ADAPTIVE:
                st.P_star[i] = st.P_filt[i] + u[:self.n]
                st.Q_star[i] = st.Q_filt[i] + u[self.n:]
            else:
                st.P_star[i] = self.P0[i] + u[:self.n]
                st.Q_star[i] = self.Q0[i] + u[self.n:]
        elif kind == "offset":
            st.omega_offset[i], st.V_offset[i] = payload

    def _enqueue(self, t_issue, kind, payload):
        k_eff = self.telemetry.effective_step(t_issue, self.spec.dt)
        self.queue.append((k_eff, self._seq, kind, payload))
        self._seq += 1

    # ---- main loop -------------------------------------------------------
    def run(self) -> Trace:
        s = self.spec
        dt, m = s.dt, s.substeps
        n_ticks = int(math.floor(s.duration / s.T_s + 1e-9))
        n_steps = n_ticks * m
        events = self._event_steps()
        ev_ptr = 0
        trace = Trace(trace_columns(self.n, self.shadow), n_der=self.n,
                      meta={"scenario": s.name, "controller": self.kind, "seed": s.seed,
                            "T_s": s.T_s, "spec_sha256": s.spec_hash()})
        st = self.state
        V_bus = self.sol.V.copy()
        guess = (self.sol.V.copy(), self.sol.theta.copy())
        acc = np.zeros((3, self.n))
        prev_meas = None
        pending_pred = {}
        f_scale = 1.0 / (2 * np.pi * s.f_base)
        ci = self.ctrl_idx

        for k in range(n_steps):
            t = k * dt
            while ev_ptr < len(events) and events[ev_ptr][0] <= k:
                _, kind, p, _ = events[ev_ptr]
                self._apply_event(kind, p)
                ev_ptr += 1
            if self.queue:
                due = sorted(q for q in self.queue if q[0] <= k)
                if due:
                    self.queue = [q for q in self.queue if q[0] > k]
                    for _, _, kind, payload in due:
                        self._apply_command(kind, payload)

            # ambient perturbation of the source outputs and of load demand
            th_out, V_out = st.theta.copy(), st.V.copy()
            if s.der_ref_std > 0:
                th_out += self.amb_rng.normal(0.0, s.der_ref_std, self.n_src)
                V_out += self.amb_rng.normal(0.0, s.der_ref_std, self.n_src)
            lcfg = self.load_cfg
            if s.load_wiener_std > 0 and len(self.load_bus):
                self.load_wiener += self.load_rng.normal(0.0, s.load_wiener_std,
                                                         self.load_wiener.shape)
                lcfg = replace(lcfg, P0=lcfg.P0 + self.load_wiener[0],
                               Q0=lcfg.Q0 + self.load_wiener[1])
            if len(self.load_bus):
                st.load_P, st.load_Q = dynamic_load_step(st.load_P, st.load_Q,
                                                         V_bus[self.load_bus], lcfg, dt)
            if np.any(V_out <= 0):
                return self._collapse(trace, t, "non-positive DER voltage")
            try:
                sol = self._solve(V_out, th_out, st.load_P, st.load_Q, guess)
            except (NonConvergence, SingularJacobian) as exc:
                return self._collapse(trace, t, str(exc))
            V_bus = sol.V
            guess = (sol.V, sol.theta)
            P_raw, Q_raw = sol.P_inj[self.src_bus], sol.Q_inj[self.src_bus]
            st.P_filt, st.Q_filt = lowpass_filter_step(P_raw, Q_raw, st.P_filt, st.Q_filt,
                                                       self.cfg.lowpass_tau, dt)
            rate = self._droop_advance(dt)

            acc[0] += th_out[ci] - self.theta_ref[ci]
            acc[1] += V_out[ci] - self.V_ref[ci]
            acc[2] += rate[ci] * f_scale
            st.t = (k + 1) * dt

            if (k + 1) % m:
                continue
            # ---- secondary tick ----
            t_tick = (k + 1) * dt
            truth = acc / m
            acc[:] = 0.0
            x_true = np.concatenate([truth[0], truth[1]])
            meas = self.telemetry.measure(x_true)
            d_omega_meas = (np.zeros(self.n) if prev_meas is None
                            else (meas[:self.n] - prev_meas[:self.n]) / s.T_s)
            prev_meas = meas

            pred_errs = {}
            for name, xhat in pending_pred.items():
                pred_errs[name] = prediction_error(meas, xhat)
            pending_pred = {}

            status, reg_err, rho, iters = "off", float("nan"), float("nan"), 0
            u = np.zeros(2 * self.n)
            if self.koop is not None:
                if self.enabled:
                    u, diag = self.koop.akooc_step(meas)
                    status, reg_err, iters = diag.status, diag.regression_error, diag.iterations
                    rho = diag.spectral_radius
                    if diag.status != "warmup":
                        trace.timings_ms.append(diag.wall_ms)
                    pending_pred = {PRED_NAMES[kn]: v for kn, v in diag.predictions.items()}
                    self._enqueue(t_tick, "ref", u)
                else:
                    self.koop.xs.append(meas)
                    self.koop.us.append(u)
            elif self.enabled and self.pi is not None:
                u = self.pi.pi_step(d_omega_meas, meas[self.n:], s.T_s)
                status = "ok"
                self._enqueue(t_tick, "ref", u)
            elif self.enabled and self.sd is not None:
                offs = self.sd.secondary_droop_step(d_omega_meas, meas[self.n:], s.T_s,
                                                    st.Q_filt[ci])
                status = "ok"
                self._enqueue(t_tick, "offset", offs)
            rs = compute_rs(truth[1], truth[2], self.n)
            row = [t_tick, rs, reg_err, rho, iters, status]
            for i in range(self.n):
                row += [truth[0, i], truth[1, i], truth[2, i], meas[i], meas[self.n + i],
                        u[i], u[self.n + i]]
            if self.shadow:
                row += [pred_errs.get(nm, float("nan")) for nm in ("ensemble", "linear", "full")]
            trace.rows.append(row)
        return trace

    def _droop_advance(self, dt):
        """Step every source's droop law in place; returns the angle rates (rad/s)."""
        st, cfg, mod = self.state, self.cfg, self.is_mod
        rate = np.empty(self.n_src)
        if mod.any():
            dth, dV = modified_rates(st.theta, st.V, st.P_filt, st.Q_filt, st.P_star, st.Q_star,
                                     cfg, st.omega_offset, st.V_offset)
            rate = np.where(mod, dth, rate)
            V_mod = st.V + dt * dV
        if (~mod).any():
            w = frequency_deviation(st.P_filt, st.P_star, cfg, st.omega_offset)
            rate = np.where(mod, rate, w)
            V_conv = (np.asarray(cfg.V_ref) + st.V_offset
                      - np.asarray(cfg.sigma_V) * (st.Q_filt - st.Q_star))
        st.theta = st.theta + dt * rate
        if mod.all():
            st.V = V_mod
        elif (~mod).all():
            st.V = np.broadcast_to(V_conv, (self.n_src,)).copy()
        else:
            st.V = np.where(mod, V_mod, V_conv)
        return rate

    def _collapse(self, trace: Trace, t: float, reason: str) -> Trace:
        trace.collapsed = True
        trace.collapse_time = t
        trace.meta["collapse_reason"] = reason
        return trace


def run_scenario(spec: ScenarioSpec, raise_on_collapse: bool = False) -> Trace:
    """Simulate ``spec`` and return its trace.

    A collapsing plant yields a truncated trace with ``collapsed`` set, or
    raises :class:`PlantCollapse` when ``raise_on_collapse`` is true.
    """
    trace = Simulation(spec).run()
    if trace.collapsed and raise_on_collapse:
        raise PlantCollapse(f"plant collapsed at t={trace.collapse_time:.3f} s: "
                            f"{trace.meta.get('collapse_reason', '')}")
    return trace
