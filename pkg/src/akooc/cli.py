"""Command-line entry point: ``akooc <command> ...``.

Every failure exits with status 1 (2 for usage errors) and writes a single
JSON object ``{"error": <type>, "message": <text>}`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .control import design_lqr, cost_matrices
from .errors import AkoocError, ScenarioError
from .harness.plot import render_plot
from .harness.scenario import (
    CONTROLLER_KINDS,
    controller_from_table,
    learner_from_table,
    load_scenario,
    parse_scenario,
    read_toml,
    with_overrides,
)
from .harness.simulate import learner_input_matrix, run_scenario, subset_config
from .harness.traceio import (
    export_timings,
    export_trace,
    import_trace,
    read_matrix_bundle,
    timings_path,
    write_matrix_bundle,
)
from .harness.windows import rolling_windows, trace_T_s
from .koopman import EnsembleLearner


class UsageError(AkoocError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(exc: BaseException, code: int = 1) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def _read_text(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


# ---- simulate ---------------------------------------------------------------
def cmd_simulate(args) -> dict:
    spec = load_scenario(args.scenario)
    spec = with_overrides(spec, controller=args.controller, seed=args.seed)
    trace = run_scenario(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{spec.name}_{spec.controller.kind}_seed{spec.seed}"
    csv_path = export_trace(trace, out / f"{stem}.csv")
    result = {"trace": str(csv_path), "rows": len(trace.rows), "collapsed": trace.collapsed}
    if trace.timings_ms:
        export_timings(trace, timings_path(csv_path))
        result["mean_step_ms"] = float(np.mean(trace.timings_ms))
    if trace.collapsed:
        result["collapse_time_s"] = trace.collapse_time
    return result


# ---- identify ---------------------------------------------------------------
def _learner_setup(path):
    """``(LearnerParams, B)`` from a scenario (file or bundled name) or a learner file.

    A learner file holds a ``[learner]`` table and either ``scenario = <name or
    path>`` (droop gains are taken from it) or ``input_gains = [...]``, the
    diagonal of the input matrix.
    """
    if not Path(path).is_file():
        spec = load_scenario(path)
        cfg = subset_config(spec.der_cfg, range(spec.n_der))
        return spec.learner, learner_input_matrix(cfg, spec.n_der, spec.T_s)
    text = _read_text(path)
    raw = read_toml(text, "learner file")
    if "network" in raw:
        spec = parse_scenario(text)
        cfg = subset_config(spec.der_cfg, range(spec.n_der))
        return spec.learner, learner_input_matrix(cfg, spec.n_der, spec.T_s)
    unknown = set(raw) - {"learner", "scenario", "input_gains"}
    if unknown:
        raise ScenarioError(f"unknown key(s) in learner file: {sorted(unknown)}")
    params = learner_from_table(raw.get("learner", {}))
    if "input_gains" in raw:
        return params, np.diag(np.asarray(raw["input_gains"], dtype=float))
    if "scenario" in raw:
        spec = load_scenario(raw["scenario"])
        cfg = subset_config(spec.der_cfg, range(spec.n_der))
        return params, learner_input_matrix(cfg, spec.n_der, spec.T_s)
    raise ScenarioError("learner file needs 'scenario' or 'input_gains'")


def cmd_identify(args) -> dict:
    trace = import_trace(args.trace)
    params, B = _learner_setup(args.learner)
    if B.shape[0] != 2 * trace.n_der:
        raise ScenarioError(f"input matrix is {B.shape[0]}-dimensional but the trace has "
                            f"{trace.n_der} DERs")
    windows = rolling_windows(trace, params.N, trace_T_s(trace))
    if not windows:
        raise ScenarioError(f"trace is shorter than one window (N = {params.N})")
    learner = EnsembleLearner(params, B)
    for ds in windows:
        model = learner.fit(ds)
    write_matrix_bundle(args.out, {
        "A_E": model.A_E, "A_EM": model.A_EM, "C_M": model.C_M, "B_M_hat": model.B_M_hat,
        "B": model.B, "A_C": model.A_C, "B_C": model.B_C})
    return {"bundle": str(args.out), "windows": len(windows),
            "regression_error": model.regression_error, "iterations": model.iterations_used}


# ---- margins ----------------------------------------------------------------
def cmd_margins(args) -> dict:
    mats = read_matrix_bundle(args.model)
    missing = {"A_C", "B_C"} - set(mats)
    if missing:
        raise ScenarioError(f"model bundle lacks {sorted(missing)}")
    A_C, B_C = mats["A_C"], mats["B_C"]
    n_der = B_C.shape[1] // 2
    raw = read_toml(_read_text(args.costs), "costs file")
    ctl = controller_from_table(raw.get("controller", raw))
    Q, R = cost_matrices(n_der, ctl.q_theta, ctl.q_V, ctl.q_sin, ctl.q_cos, ctl.q_omega,
                         ctl.r_P, ctl.r_Q, ctl.eps_Q)
    if Q.shape[0] != A_C.shape[0]:
        raise ScenarioError(f"cost dimension {Q.shape[0]} does not match model {A_C.shape[0]}")
    d = design_lqr(A_C, B_C, Q, R, ctl.u_lb, ctl.u_ub, ctl.dare_tol, ctl.dare_max_iter)
    m = d.margins
    closed = np.max(np.abs(np.linalg.eigvals(A_C - B_C @ d.K)))
    return {"rho": m.rho, "mu": m.mu, "lower": _listify(m.lower), "upper": _listify(m.upper),
            "spectral_radius": float(closed)}


def _listify(a):
    return [None if not np.isfinite(v) else float(v) for v in np.atleast_1d(a)]


# ---- plot / compare -----------------------------------------------------------
def cmd_plot(args) -> dict:
    trace = import_trace(args.trace)
    written = render_plot(trace, args.channels, args.out)
    return {"svg": [str(p) for p in written]}


def cmd_compare(args) -> dict:
    traces = [(Path(p).stem, import_trace(p)) for p in args.traces]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = render_plot(traces, "rs", out / "compare_rs.svg")
    with_pred = [(lbl, tr) for lbl, tr in traces if tr.has("pred_err_ensemble")]
    if with_pred:
        written += render_plot(with_pred, "prediction", out / "compare_prediction.svg")
    return {"svg": [str(p) for p in written]}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="akooc", description="Ensemble-Koopman secondary control of microgrids.")
    p.add_argument("--version", action="version", version=f"akooc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run a scenario and write its trace")
    s.add_argument("--scenario", required=True, help="scenario file or bundled name")
    s.add_argument("--controller", choices=CONTROLLER_KINDS, help="override the controller kind")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("identify", help="fit the ensemble model over a trace's windows")
    s.add_argument("--trace", required=True)
    s.add_argument("--learner", required=True, help="scenario file or learner file")
    s.add_argument("--out", required=True, help="matrix bundle to write")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("margins", help="LQR design and disc margins for an identified model")
    s.add_argument("--model", required=True, help="matrix bundle from 'identify'")
    s.add_argument("--costs", required=True, help="file with cost keys or a [controller] table")
    s.set_defaults(func=cmd_margins)

    s = sub.add_parser("plot", help="plot trace channels to SVG")
    s.add_argument("--trace", required=True)
    s.add_argument("--channels", required=True, help="comma-separated panels or columns")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("compare", help="overlay RS and prediction-error panels")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("traces", nargs="+")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    try:
        result = args.func(args)
    except (AkoocError, OSError, ValueError) as exc:
        return _fail(exc)
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
