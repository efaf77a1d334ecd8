"""Level-set simulation of drug particle dissolution with time-dependent solubility."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("lsdissolve")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .config import ScenarioConfig, load_config, parse_config, serialize_config
from .dynamics import RunResult, SimulationError, run
from .oracle import recrystallization_closed_form, solve_circle
from .physchem import DrugParams, get_preset, overall_k

__all__ = [
    "DrugParams",
    "RunResult",
    "ScenarioConfig",
    "SimulationError",
    "get_preset",
    "load_config",
    "overall_k",
    "parse_config",
    "recrystallization_closed_form",
    "run",
    "serialize_config",
    "solve_circle",
]
