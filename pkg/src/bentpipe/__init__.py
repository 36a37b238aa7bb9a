"""Energy-efficient joint precoding and feeder-link/beam matching for bent-pipe GEO satellites."""

from .metrics import PowerParams, evaluate
from .optimizer import Algorithm, SolveReport, SystemInstance, dinkelbach
from .scenario import Scenario, default_scenario, load_scenario, realize

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "PowerParams",
    "Scenario",
    "SolveReport",
    "SystemInstance",
    "default_scenario",
    "dinkelbach",
    "evaluate",
    "load_scenario",
    "realize",
]
