import pytest

TINY = """
name = "tiny"
seed = 3

[timing]
dt = 0.001
T_s = 0.06
duration = {duration}

[network]
buses = [{{ id = "d1", role = "DER" }}, {{ id = "d2", role = "DER" }}, {{ id = "b", role = "LOAD" }}]
lines = [
  {{ name = "l1", from = "d1", to = "b", r = 0.01, x = 0.1 }},
  {{ name = "l2", from = "d2", to = "b", r = 0.02, x = 0.15 }},
]

[[ders]]
bus = "d1"
sigma_omega = 0.2
sigma_V = 0.05

[[ders]]
bus = "d2"
sigma_omega = 0.3
sigma_V = 0.05

[[loads]]
bus = "b"
P = 0.5
Q = 0.2
alpha_P = 2.0
alpha_Q = 2.0

[ambient]
der_ref_std = {amb}

[telemetry]
noise_std = {noise}

[controller]
kind = "{kind}"
kp_f = 0.05
ki_f = 0.5
kp_v = 0.5
ki_v = 5.0
k_omega = 2.0
k_v = 2.0
{events}
"""

LOAD_STEP = """
[[events]]
t = 0.12
type = "enable-secondary"

[[events]]
t = {t}
type = "load-step"
bus = "b"
dP = {dP}
dQ = 0.1
"""


@pytest.fixture
def tiny_text():
    """Text of a two-DER scenario; keyword arguments fill the template."""

    def make(kind="none", duration=1.2, amb=0.0, noise=0.0, step_t=None, dP=0.2):
        events = LOAD_STEP.format(t=step_t, dP=dP) if step_t is not None else ""
        return TINY.format(duration=duration, amb=amb, noise=noise, kind=kind, events=events)

    return make


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the lines are replayed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
