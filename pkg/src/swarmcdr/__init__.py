"""Edge-assisted conflict detection and resolution simulator for UAV swarms."""
from __future__ import annotations

from .engine import LogEvent, Simulation, run
from .kinematics import ManeuverClass, UavState
from .metrics import MetricsReport, SweepTable, compare, summarize
from .scenario import ScenarioConfig, load_config, rng_stream

__all__ = [
    "LogEvent", "ManeuverClass", "MetricsReport", "ScenarioConfig", "Simulation", "SweepTable",
    "UavState", "compare", "load_config", "rng_stream", "run", "summarize",
]
__version__ = "0.1.0"
