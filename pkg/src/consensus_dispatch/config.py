"""Pydantic configuration models and YAML config loading."""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class WeightScheme(str, Enum):
    metropolis = "metropolis"
    mean_metropolis = "mean_metropolis"


class ExecutorKind(str, Enum):
    vectorized = "vectorized"
    agents = "agents"


class CaseFormat(str, Enum):
    matpower = "matpower"
    native = "native"


class RunMode(str, Enum):
    distributed = "distributed"
    reference_admm = "reference-admm"
    oracle = "oracle"
    validate_case = "validate-case"
    convert_case = "convert-case"


class SimulationConfig(BaseModel):
    """Simulation parameters. Defaults are the 30-bus benchmark settings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    n2_rho: float = Field(default=0.063546, gt=0.0, description="Scaled penalty N²ρ (MW-denominated)")
    max_iter: int = Field(default=100_000, ge=1, description="Number of synchronous rounds")
    demand_step_interval: int = Field(default=20_000, ge=1, description="Rounds between demand changes")
    epsilon: float = Field(default=1.0, description="Mean-Metropolis epsilon")
    weight_scheme: WeightScheme = Field(default=WeightScheme.mean_metropolis)
    tol_lambda: float = Field(default=1e-3, gt=0.0, description="Price spread tolerance")
    tol_mismatch: float = Field(default=1e-3, gt=0.0, description="Mismatch estimate tolerance")
    tol_balance: float = Field(default=1e-3, gt=0.0, description="Total generation vs demand tolerance")
    rng_seed: int = Field(default=0, description="Seed of the initial price draw")
    pv_capacity_factor: float = Field(default=1.0, ge=0.0, description="PV capacity as a share of nodal load")
    convergence_window: int = Field(default=50, ge=1, description="Rounds that must all be within tolerance")
    early_stop: bool = Field(default=False, description="Stop once converged on the last demand plateau")
    snapshot_interval: Optional[int] = Field(default=None, ge=1, description="Rounds between agent snapshots")
    executor: ExecutorKind = Field(default=ExecutorKind.vectorized)
    record_wall_time: bool = Field(default=False, description="Record elapsed time per round")

    def penalty(self, n_agents: int, base_mva: float = 1.0) -> float:
        """Penalty ρ in per-unit for a network of `n_agents` agents."""
        return self.n2_rho * base_mva * base_mva / (n_agents * n_agents)


class CliConfig(SimulationConfig):
    """Everything the command line controls."""

    case_path: Path
    case_format: Optional[CaseFormat] = None
    irradiance_path: Optional[Path] = None
    synthetic_irradiance: bool = False
    out_path: Optional[Path] = None
    snapshot_path: Optional[Path] = None
    message_log_path: Optional[Path] = None
    mode: RunMode = RunMode.distributed
    oracle_check: bool = False
    require_convergence: bool = False

    def simulation(self) -> SimulationConfig:
        """Strip the CLI-only fields."""
        return SimulationConfig(**self.model_dump(include=set(SimulationConfig.model_fields)))


def load_config(path: Path) -> Dict[str, Any]:
    """Read simulation settings from a YAML file.

    Returns the raw mapping so command line flags can be layered on top before validation.
    """
    with Path(path).open("r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must contain a mapping, got {type(data).__name__}")
    logger.info("Loaded %d settings from %s", len(data), path)
    return data
