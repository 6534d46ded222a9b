"""Consensus dispatch - fully distributed economic dispatch by ADMM and dynamic average consensus."""

from .caseio import load_irradiance_csv, parse_matpower_case, parse_native_case, read_case
from .cli import main
from .config import SimulationConfig
from .engine import run_simulation
from .oracle import reference_admm, solve_case, solve_centralized_ed

__version__ = "0.1.0"

__all__ = [
    "SimulationConfig",
    "load_irradiance_csv",
    "main",
    "parse_matpower_case",
    "parse_native_case",
    "read_case",
    "reference_admm",
    "run_simulation",
    "solve_case",
    "solve_centralized_ed",
]
