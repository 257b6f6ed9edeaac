"""Compare secondary controllers on the 34-bus feeder analog.

Prints steady-state RS, the largest late voltage deviation and, for the
Koopman controller, the mean wall-clock cost of one secondary step.

    python demos/ieee34_controllers.py
"""
import numpy as np

from akooc.harness import load_scenario, run_scenario, with_overrides


def main():
    spec = load_scenario("ieee34")
    print(f"{'controller':<18}{'collapsed':>10}{'steady RS':>12}{'late |dV|':>12}{'step ms':>10}")
    for kind in ("none", "secondary-droop", "pi-adaptive", "akooc"):
        trace = run_scenario(with_overrides(spec, controller=kind))
        t = trace.column("time_s")
        late = t >= t[-1] - 5.0
        rs = trace.column("rs_pu")[late].mean()
        dV = np.abs(trace.per_der("dV_der{i}_pu")[late]).max()
        ms = f"{np.mean(trace.timings_ms):.2f}" if trace.timings_ms else "-"
        print(f"{kind:<18}{str(trace.collapsed):>10}{rs:>12.4f}{dV:>12.4f}{ms:>10}")


if __name__ == "__main__":
    main()
