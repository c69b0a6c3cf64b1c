"""Discrete-event simulator of SLO-aware RAN and edge resource management for 5G MEC."""
from .config import ConfigError, Scenario, load_scenario
from .sim import RunResult, Simulation, simulate

__version__ = "0.1.0"

__all__ = ["ConfigError", "RunResult", "Scenario", "Simulation", "load_scenario", "simulate"]
