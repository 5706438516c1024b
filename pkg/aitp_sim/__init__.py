"""AITP simulator - federated-learning-driven adaptive transmission in clustered 6G edge networks."""

__version__ = "0.1.0"

from .engine import run_round, run_simulation  # noqa: E402
from .report import SimulationReport, emit_outputs  # noqa: E402
from .scenario import Mode, ScenarioConfig, load_scenario, make_config  # noqa: E402

__all__ = [
    "Mode",
    "ScenarioConfig",
    "SimulationReport",
    "emit_outputs",
    "load_scenario",
    "make_config",
    "run_round",
    "run_simulation",
]
