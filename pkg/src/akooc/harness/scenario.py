"""Scenario files: TOML text with a fixed schema, validated fail-fast.

Layout (all electrical quantities in per unit on ``[base]``)::

    name = "..."            seed = 0
    [timing]                dt, T_s, duration
    [base]                  S_base, V_base, f_base
    [network]               buses = [{id, role}], lines = [{name, from, to, r, x}]
    [[ders]]                bus, kind, controlled, droop gains (p.u. or nameplate), V_ref, ...
    [[loads]]               bus, P, Q, alpha_P, alpha_Q, T_L
    [ambient]               der_ref_std, load_wiener_std
    [telemetry]             noise_std, delay_mean, delay_std, missing, neighbors, seed
    [learner]               N, gamma, N_ITER, epsilon, em_update, pinv_rtol
    [controller]            kind, costs, bounds, DARE settings, baseline gains
    [[events]]              t, type, plus type-specific keys
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ScenarioError
from ..koopman import LearnerParams
from ..network import DER, LOAD, ROLES, SLACK, Line
from ..plant import CONVENTIONAL, MODIFIED, DerConfig, LoadConfig, per_unit_droop, stack_configs
from ..telemetry import TelemetryConfig

CONTROLLER_KINDS = ("akooc", "koopman-linear", "koopman-full-no-ensemble",
                    "pi", "pi-adaptive", "secondary-droop", "none")
EVENT_TYPES = ("load-step", "line-trip", "fault", "enable-secondary")

_TOP = {"name", "seed", "description", "timing", "base", "network", "ders", "loads",
        "ambient", "telemetry", "learner", "controller", "events"}
_SECTIONS = {
    "timing": {"dt", "T_s", "duration"},
    "base": {"S_base", "V_base", "f_base"},
    "network": {"buses", "lines"},
    "ambient": {"der_ref_std", "load_wiener_std"},
    "telemetry": {"noise_std", "delay_mean", "delay_std", "missing", "neighbors", "seed"},
    "learner": {"N", "gamma", "N_ITER", "epsilon", "em_update", "pinv_rtol"},
    "controller": {"kind", "q_theta", "q_V", "q_sin", "q_cos", "q_omega", "r_P", "r_Q",
                   "eps_Q", "u_lb", "u_ub", "dare_tol", "dare_max_iter", "shadow",
                   "kp_f", "ki_f", "kp_v", "ki_v", "k_omega", "k_v", "k_q"},
}
_BUS_KEYS = {"id", "role"}
_LINE_KEYS = {"name", "from", "to", "r", "x", "in_service"}
_DER_KEYS = {"bus", "kind", "controlled", "sigma_omega", "sigma_V", "sigma_omega_hz_per_w",
             "sigma_V_v_per_var", "sigma_theta", "tau_theta", "tau_V", "V_ref", "theta_ref",
             "omega_ref", "lowpass_tau"}
_LOAD_KEYS = {"bus", "P", "Q", "alpha_P", "alpha_Q", "T_L"}
_EVENT_KEYS = {
    "load-step": {"t", "type", "bus", "buses", "dP", "dQ", "scale"},
    "line-trip": {"t", "type", "line"},
    "fault": {"t", "type", "bus", "t_clear", "line_out", "g", "b"},
    "enable-secondary": {"t", "type"},
}


@dataclass
class Event:
    t: float
    kind: str
    params: dict


@dataclass
class ControllerSpec:
    kind: str = "none"
    q_theta: float = 1e-5
    q_V: float = 1.0
    q_sin: float = 0.0
    q_cos: float = 0.0
    q_omega: float = 1e-5
    r_P: float = 1.0
    r_Q: float = 1.0
    eps_Q: float = 0.0
    u_lb: float = -1.0 / 15
    u_ub: float = 1.0 / 15
    dare_tol: float = 1e-10
    dare_max_iter: int = 10_000
    shadow: bool = False
    kp_f: float = 0.0
    ki_f: float = 0.0
    kp_v: float = 0.0
    ki_v: float = 0.0
    k_omega: float = 0.0
    k_v: float = 0.0
    k_q: float = 0.0


@dataclass
class ScenarioSpec:
    name: str
    seed: int
    dt: float
    T_s: float
    duration: float
    S_base: float
    V_base: float
    f_base: float
    bus_ids: list
    bus_roles: list
    lines: list
    der_buses: list
    der_cfg: DerConfig
    controlled: np.ndarray
    load_buses: list
    load_cfg: LoadConfig
    der_ref_std: float
    load_wiener_std: float
    telemetry: TelemetryConfig
    learner: LearnerParams
    controller: ControllerSpec
    events: list
    source: str = ""
    description: str = ""
    line_index: dict = field(default_factory=dict)

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_der(self) -> int:
        """Number of DERs under secondary control."""
        return int(np.count_nonzero(self.controlled))

    @property
    def substeps(self) -> int:
        return int(round(self.T_s / self.dt))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise ScenarioError(f"{where} must be a table")
    extra = set(table) - set(allowed)
    if extra:
        raise ScenarioError(f"unknown key(s) in {where}: {sorted(extra)}")


def _req(table, key, where):
    if key not in table:
        raise ScenarioError(f"missing required key {key!r} in {where}")
    return table[key]


def _num(table, key, where, default=None):
    if key not in table:
        if default is None:
            raise ScenarioError(f"missing required key {key!r} in {where}")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key} must be a number")
    return float(v)


def learner_from_table(lr: dict) -> LearnerParams:
    """Learner settings from a ``[learner]`` table (defaults for absent keys)."""
    _check_keys(lr, _SECTIONS["learner"], "[learner]")
    try:
        return LearnerParams(int(lr.get("N", 10)), float(lr.get("gamma", 5.0)),
                             int(lr.get("N_ITER", 150)), float(lr.get("epsilon", 1e-16)),
                             str(lr.get("em_update", "argmin")),
                             float(lr.get("pinv_rtol", 1e-10)))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"[learner]: {exc}") from exc


def controller_from_table(table: dict) -> ControllerSpec:
    """Controller settings from a ``[controller]`` table (defaults for absent keys)."""
    _check_keys(table, _SECTIONS["controller"], "[controller]")
    ctl = ControllerSpec(**table)
    if ctl.kind not in CONTROLLER_KINDS:
        raise ScenarioError(f"[controller] unknown kind {ctl.kind!r}")
    if ctl.u_lb >= ctl.u_ub:
        raise ScenarioError("[controller] u_lb must be below u_ub")
    return ctl


def read_toml(text: str, what: str = "scenario file") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"malformed {what}: {exc}") from exc


def parse_scenario(text: str) -> ScenarioSpec:
    raw = read_toml(text)
    _check_keys(raw, _TOP, "scenario")
    for sec, keys in _SECTIONS.items():
        if sec in raw:
            _check_keys(raw[sec], keys, f"[{sec}]")

    timing = _req(raw, "timing", "scenario")
    dt = _num(timing, "dt", "[timing]")
    T_s = _num(timing, "T_s", "[timing]")
    duration = _num(timing, "duration", "[timing]")
    if dt <= 0 or T_s <= 0 or duration <= 0:
        raise ScenarioError("timing values must be positive")
    ratio = T_s / dt
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise ScenarioError("T_s must be an integer multiple of dt")

    base = raw.get("base", {})
    S_base = _num(base, "S_base", "[base]", 1.0)
    V_base = _num(base, "V_base", "[base]", 1.0)
    f_base = _num(base, "f_base", "[base]", 60.0)

    net = _req(raw, "network", "scenario")
    buses = _req(net, "buses", "[network]")
    bus_ids, roles = [], []
    for i, b in enumerate(buses):
        _check_keys(b, _BUS_KEYS, f"network.buses[{i}]")
        bid = _req(b, "id", f"network.buses[{i}]")
        role = b.get("role", LOAD)
        if role not in ROLES:
            raise ScenarioError(f"bus {bid}: unknown role {role!r}")
        if bid in bus_ids:
            raise ScenarioError(f"duplicate bus id {bid}")
        bus_ids.append(bid)
        roles.append(role)
    idx = {b: i for i, b in enumerate(bus_ids)}

    def bus_index(bid, where):
        if bid not in idx:
            raise ScenarioError(f"{where}: unknown bus {bid!r}")
        return idx[bid]

    lines, line_index = [], {}
    for i, ln in enumerate(_req(net, "lines", "[network]")):
        where = f"network.lines[{i}]"
        _check_keys(ln, _LINE_KEYS, where)
        name = str(ln.get("name", f"{ln.get('from')}-{ln.get('to')}"))
        if name in line_index:
            raise ScenarioError(f"duplicate line name {name!r}")
        line_index[name] = len(lines)
        lines.append(Line(bus_index(_req(ln, "from", where), where),
                          bus_index(_req(ln, "to", where), where),
                          _num(ln, "r", where), _num(ln, "x", where),
                          bool(ln.get("in_service", True)), name))

    ders = _req(raw, "ders", "scenario")
    der_buses, cfgs, controlled = [], [], []
    for i, d in enumerate(ders):
        where = f"ders[{i}]"
        _check_keys(d, _DER_KEYS, where)
        b = bus_index(_req(d, "bus", where), where)
        if roles[b] not in (DER, SLACK):
            raise ScenarioError(f"{where}: bus {bus_ids[b]!r} is not a source bus")
        if b in der_buses:
            raise ScenarioError(f"{where}: two DERs on bus {bus_ids[b]!r}")
        kind = d.get("kind", CONVENTIONAL)
        if "sigma_omega_hz_per_w" in d or "sigma_V_v_per_var" in d:
            s_w, s_v = per_unit_droop(_num(d, "sigma_omega_hz_per_w", where),
                                      _num(d, "sigma_V_v_per_var", where), S_base, V_base, f_base)
        else:
            s_w = _num(d, "sigma_omega", where, 0.0)
            s_v = _num(d, "sigma_V", where)
        try:
            cfgs.append(DerConfig(kind, s_w, s_v, _num(d, "sigma_theta", where, 0.0),
                                  _num(d, "tau_theta", where, 1.0), _num(d, "tau_V", where, 1.0),
                                  _num(d, "omega_ref", where, 0.0), _num(d, "V_ref", where, 1.0),
                                  _num(d, "theta_ref", where, 0.0),
                                  _num(d, "lowpass_tau", where, 0.03)))
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
        der_buses.append(b)
        controlled.append(bool(d.get("controlled", True)))
    for b, r in enumerate(roles):
        if r in (DER, SLACK) and b not in der_buses:
            raise ScenarioError(f"source bus {bus_ids[b]!r} has no DER entry")
    # controlled DERs first so that secondary-control vectors index them directly
    order = sorted(range(len(der_buses)), key=lambda i: not controlled[i])
    der_buses = [der_buses[i] for i in order]
    cfgs = [cfgs[i] for i in order]
    controlled = np.array([controlled[i] for i in order])
    if not controlled.any():
        raise ScenarioError("at least one DER must be under secondary control")

    load_buses, lP, lQ, aP, aQ, TL = [], [], [], [], [], []
    for i, ld in enumerate(raw.get("loads", [])):
        where = f"loads[{i}]"
        _check_keys(ld, _LOAD_KEYS, where)
        b = bus_index(_req(ld, "bus", where), where)
        if roles[b] != LOAD:
            raise ScenarioError(f"{where}: bus {bus_ids[b]!r} is not a LOAD bus")
        if b in load_buses:
            raise ScenarioError(f"{where}: two loads on bus {bus_ids[b]!r}")
        load_buses.append(b)
        lP.append(_num(ld, "P", where))
        lQ.append(_num(ld, "Q", where))
        aP.append(_num(ld, "alpha_P", where, 0.0))
        aQ.append(_num(ld, "alpha_Q", where, 0.0))
        TL.append(_num(ld, "T_L", where, 0.0))
    load_cfg = LoadConfig(np.array(lP), np.array(lQ), np.array(aP), np.array(aQ), np.array(TL),
                          np.ones(len(lP)))

    amb = raw.get("ambient", {})
    der_ref_std = _num(amb, "der_ref_std", "[ambient]", 0.0)
    load_wiener_std = _num(amb, "load_wiener_std", "[ambient]", 0.0)

    n_ctrl = int(controlled.sum())
    tel = raw.get("telemetry", {})
    missing = tuple(int(m) for m in tel.get("missing", []))
    nbr_list = tel.get("neighbors", [])
    if len(nbr_list) != len(missing):
        raise ScenarioError("[telemetry] neighbors must list one pair per missing DER")
    neighbors = {m: tuple(int(v) for v in nb) for m, nb in zip(missing, nbr_list)}
    for m in list(missing) + [v for nb in neighbors.values() for v in nb]:
        if not 0 <= m < n_ctrl:
            raise ScenarioError(f"[telemetry] DER index {m} out of range")
    try:
        telemetry = TelemetryConfig(_num(tel, "noise_std", "[telemetry]", 0.0),
                                    _num(tel, "delay_mean", "[telemetry]", 0.0),
                                    _num(tel, "delay_std", "[telemetry]", 0.0),
                                    missing, neighbors, int(tel.get("seed", 0)))
    except ValueError as exc:
        raise ScenarioError(f"[telemetry]: {exc}") from exc

    learner = learner_from_table(raw.get("learner", {}))
    ctl = controller_from_table(raw.get("controller", {}))

    events = []
    for i, ev in enumerate(raw.get("events", [])):
        where = f"events[{i}]"
        kind = _req(ev, "type", where)
        if kind not in EVENT_TYPES:
            raise ScenarioError(f"{where}: unknown event type {kind!r}")
        _check_keys(ev, _EVENT_KEYS[kind], where)
        t = _num(ev, "t", where)
        p = {}
        if kind == "load-step":
            bl = ev.get("buses", [ev["bus"]] if "bus" in ev else None)
            if not bl:
                raise ScenarioError(f"{where}: load-step needs bus or buses")
            p["loads"] = []
            for bid in bl:
                b = bus_index(bid, where)
                if b not in load_buses:
                    raise ScenarioError(f"{where}: bus {bid!r} carries no load")
                p["loads"].append(load_buses.index(b))
            if "scale" in ev:
                if "dP" in ev or "dQ" in ev:
                    raise ScenarioError(f"{where}: give either scale or dP/dQ")
                p["scale"] = _num(ev, "scale", where)
            else:
                p["dP"] = _num(ev, "dP", where, 0.0)
                p["dQ"] = _num(ev, "dQ", where, 0.0)
        elif kind == "line-trip":
            name = str(_req(ev, "line", where))
            if name not in line_index:
                raise ScenarioError(f"{where}: unknown line {name!r}")
            p["line"] = line_index[name]
        elif kind == "fault":
            p["bus"] = bus_index(_req(ev, "bus", where), where)
            p["t_clear"] = _num(ev, "t_clear", where)
            if p["t_clear"] <= t:
                raise ScenarioError(f"{where}: t_clear must follow t")
            p["g"] = _num(ev, "g", where, 0.0)
            p["b"] = _num(ev, "b", where, -50.0)
            if "line_out" in ev:
                name = str(ev["line_out"])
                if name not in line_index:
                    raise ScenarioError(f"{where}: unknown line {name!r}")
                p["line_out"] = line_index[name]
        events.append(Event(t, kind, p))
    times = [e.t for e in events]
    if times != sorted(times):
        raise ScenarioError("events must be sorted by time")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ScenarioError("seed must be a non-negative integer")

    return ScenarioSpec(
        name=str(raw.get("name", "scenario")), seed=seed, dt=dt, T_s=T_s, duration=duration,
        S_base=S_base, V_base=V_base, f_base=f_base, bus_ids=bus_ids, bus_roles=roles,
        lines=lines, der_buses=der_buses, der_cfg=stack_configs(cfgs), controlled=controlled,
        load_buses=load_buses, load_cfg=load_cfg, der_ref_std=der_ref_std,
        load_wiener_std=load_wiener_std, telemetry=telemetry, learner=learner, controller=ctl,
        events=events, source=text, description=str(raw.get("description", "")),
        line_index=line_index)


def load_scenario(path) -> ScenarioSpec:
    """Read a scenario from a path, or from the bundled set when given a bare name."""
    p = Path(path)
    if p.exists():
        return parse_scenario(p.read_text(encoding="utf-8"))
    name = p.name if p.suffix else p.name + ".scn"
    bundled = resources.files("akooc.scenarios").joinpath(name)
    if bundled.is_file():
        return parse_scenario(bundled.read_text(encoding="utf-8"))
    raise ScenarioError(f"scenario file not found: {path}")


def bundled_scenarios():
    return sorted(p.name for p in resources.files("akooc.scenarios").iterdir()
                  if p.name.endswith(".scn"))


def with_overrides(spec: ScenarioSpec, controller: str | None = None, seed: int | None = None,
                   **controller_fields) -> ScenarioSpec:
    """Copy of ``spec`` with the controller kind, seed or controller fields replaced."""
    ctl = spec.controller
    if controller is not None:
        if controller not in CONTROLLER_KINDS:
            raise ScenarioError(f"unknown controller kind {controller!r}")
        ctl = replace(ctl, kind=controller)
    if controller_fields:
        bad = set(controller_fields) - set(ControllerSpec.__dataclass_fields__)
        if bad:
            raise ScenarioError(f"unknown controller field(s): {sorted(bad)}")
        ctl = replace(ctl, **controller_fields)
    out = replace(spec, controller=ctl)
    if seed is not None:
        if seed < 0:
            raise ScenarioError("seed must be non-negative")
        out = replace(out, seed=int(seed))
    return out

