"""Max-min fair multi-UAV downlink: trajectories, power and scheduling."""

from .scenario import (AuxGains, ConfigError, FlightPlan, LinkMetrics, PerformanceReport, PowerPlan,
                       Schedule, ScenarioConfig, audit_feasibility, default_config, load_config)
from .bcd import SolveReport, recover_powers, round_schedule, run_baselines, solve, sweep_energy

__all__ = [
    "AuxGains", "ConfigError", "FlightPlan", "LinkMetrics", "PerformanceReport", "PowerPlan",
    "Schedule", "ScenarioConfig", "SolveReport", "audit_feasibility", "default_config", "load_config",
    "recover_powers", "round_schedule", "run_baselines", "solve", "sweep_energy",
]
__version__ = "0.1.0"
