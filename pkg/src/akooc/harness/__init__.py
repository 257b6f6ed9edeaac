"""Scenario loading, simulation, metrics, trace persistence and plotting."""

from .metrics import compute_rs
from .scenario import ScenarioSpec, bundled_scenarios, load_scenario, parse_scenario, with_overrides
from .simulate import Trace, run_scenario

__all__ = ["ScenarioSpec", "Trace", "bundled_scenarios", "compute_rs", "load_scenario",
           "parse_scenario", "run_scenario", "with_overrides"]
