"""Deterministic discrete-event simulation of the replicated protocol."""

from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict
from .runner import Simulation, SimReport, run_scenario

__all__ = [
    "Scenario", "ScenarioError", "load_scenario", "scenario_from_dict",
    "Simulation", "SimReport", "run_scenario",
]
