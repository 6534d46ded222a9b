"""Pydantic models for case data, messages and simulation records."""

import math
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import CaseFormatError, DanglingReference, DisconnectedGraph, DuplicateBusId
from .graph import CommGraph


class GeneratorParams(BaseModel):
    """Quadratic cost curve a·p² + b·p + c with real power limits."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    a: float = Field(default=0.0, ge=0.0, description="Cost curvature")
    b: float = Field(default=0.0, description="Linear cost")
    c: float = Field(default=0.0, description="Fixed cost")
    p_min: float = Field(default=0.0, description="Lower real power bound")
    p_max: float = Field(default=0.0, description="Upper real power bound")

    @model_validator(mode="after")
    def _check_bounds(self) -> "GeneratorParams":
        if self.p_min > self.p_max:
            raise ValueError(f"p_min {self.p_min} exceeds p_max {self.p_max}")
        return self

    @property
    def is_null(self) -> bool:
        """Load-only agents carry a degenerate [0, 0] generator."""
        return self.p_min == 0.0 and self.p_max == 0.0

    def cost(self, p: float) -> float:
        return self.a * p * p + self.b * p + self.c

    def marginal_cost(self, p: float) -> float:
        return 2.0 * self.a * p + self.b


NULL_GENERATOR = GeneratorParams()
"""Generator of a load-only agent."""


class Generator(GeneratorParams):
    """A generator attached to a bus."""

    bus: int = Field(..., description="Id of the bus the generator is connected to")


class Bus(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    id: int
    load: float = Field(default=0.0, description="Nominal real power demand")


class CaseData(BaseModel):
    """A dispatch case: buses with nominal loads, generators and the branch topology."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    name: str = Field(default="case", description="Case name")
    base_mva: float = Field(default=1.0, gt=0.0, description="System base used for per-unit quantities")
    buses: List[Bus] = Field(default_factory=list)
    generators: List[Generator] = Field(default_factory=list)
    branches: List[Tuple[int, int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_references(self) -> "CaseData":
        """Unique bus ids, generators and branches on existing buses, and one connected network."""
        if not self.buses:
            raise CaseFormatError(f"case {self.name!r} has no buses")
        seen = set()
        for bus in self.buses:
            if bus.id in seen:
                raise DuplicateBusId(f"bus id {bus.id} appears more than once")
            seen.add(bus.id)
        for k, gen in enumerate(self.generators):
            if gen.bus not in seen:
                raise DanglingReference(f"generator {k} references unknown bus {gen.bus}")
        for k, (f, t) in enumerate(self.branches):
            for end in (f, t):
                if end not in seen:
                    raise DanglingReference(f"branch {k} ({f}, {t}) references unknown bus {end}")
        index = self.bus_index()
        graph = CommGraph.from_edges(len(self.buses), [(index[f], index[t]) for f, t in self.branches if f != t])
        if not graph.is_connected():
            raise DisconnectedGraph(f"case {self.name!r}: branch list does not connect all {len(self.buses)} buses")
        return self

    @property
    def total_load(self) -> float:
        return sum(bus.load for bus in self.buses)

    def bus_index(self) -> Dict[int, int]:
        """Map bus id to its position in the bus list."""
        return {bus.id: i for i, bus in enumerate(self.buses)}

    def to_dict(self) -> Dict[str, Any]:
        """Convert to the native JSON schema."""
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [bus.model_dump() for bus in self.buses],
            "generators": [gen.model_dump() for gen in self.generators],
            "branches": [list(branch) for branch in self.branches],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CaseData":
        return cls(**data)


class IrradianceProfile(BaseModel):
    """Normalized irradiance samples as (time offset in seconds, value in [0, 1])."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    samples: Tuple[Tuple[float, float], ...]

    @model_validator(mode="after")
    def _check_samples(self) -> "IrradianceProfile":
        if not self.samples:
            raise ValueError("profile has no samples")
        times = [t for t, _ in self.samples]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")
        if any(not 0.0 <= v <= 1.0 for _, v in self.samples):
            raise ValueError("normalized irradiance must lie in [0, 1]")
        return self

    @property
    def values(self) -> List[float]:
        return [v for _, v in self.samples]

    def value_at_step(self, step: int) -> float:
        """Irradiance used for demand step `step`; the last sample holds once the profile runs out."""
        return self.samples[min(step, len(self.samples) - 1)][1]


class NeighborMessage(BaseModel):
    """The only data an agent shares: its two consensus estimates."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sender_id: int
    p_gd_bar: float
    w: float


class MessageRecord(BaseModel):
    """One row of the message log."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    round: int
    sender_id: int
    p_gd_bar: float
    w: float

    @classmethod
    def from_message(cls, round: int, message: NeighborMessage) -> "MessageRecord":
        return cls(round=round, **message.model_dump())


class RoundMetrics(BaseModel):
    """Network-wide quantities after one synchronous round."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    iteration: int
    lambda_spread: float
    lambda_mean: float
    total_gen: float
    total_demand: float
    max_abs_mismatch_estimate: float
    wall_time: float = 0.0
    mismatch_estimate_sum: float = 0.0

    @field_validator(
        "lambda_spread",
        "lambda_mean",
        "total_gen",
        "total_demand",
        "max_abs_mismatch_estimate",
        "wall_time",
        "mismatch_estimate_sum",
    )
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("metric is not finite")
        return value


class AgentSnapshot(BaseModel):
    """Per-agent state exported at snapshot points and at the end of a run."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    agent_id: int
    bus_id: int
    p_g: float
    p_d: float
    p_gd_bar: float
    w: float
    lambda_: float = Field(alias="lambda")

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(by_alias=True)


class PlateauSummary(BaseModel):
    """Settling behaviour between two demand steps.

    Settling counts are iterations after the plateau start from which the quantity stays within
    tolerance until the plateau ends; None means it never settled.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    step: int
    start_iteration: int
    end_iteration: int
    lambda_settled_after: Optional[int] = None
    mismatch_settled_after: Optional[int] = None
    balance_settled_after: Optional[int] = None


class DispatchSolution(BaseModel):
    """Optimal dispatch of the centralized problem."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    p: Tuple[float, ...] = Field(..., description="Per-generator output")
    price: float = Field(..., description="Clearing price")
    total_cost: float

    def to_dict(self) -> Dict[str, Any]:
        return {"p": list(self.p), "lambda": self.price, "total_cost": self.total_cost}


class OracleGap(BaseModel):
    """Distance of a final state from the oracle, with power and price kept in their own units."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    power: float = Field(..., description="Largest per-generator deviation, per unit")
    price: float = Field(..., description="Price deviation in $/MWh")

    @classmethod
    def nan(cls) -> "OracleGap":
        return cls(power=float("nan"), price=float("nan"))
