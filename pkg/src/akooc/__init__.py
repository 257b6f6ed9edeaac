"""Adaptive Koopman operator optimal control for droop-controlled microgrids.

Submodules: ``network`` (admittance, power flow), ``plant`` (droop and load
dynamics), ``telemetry`` (PMU noise, delay, imputation), ``koopman`` (ensemble
identification), ``control`` (LQR and stability diagnostics), ``baselines``
(PI and secondary droop) and ``harness`` (scenarios, simulation, I/O).
"""

__version__ = "0.1.0"
