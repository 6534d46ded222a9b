"""Exception hierarchy for consensus dispatch."""

from typing import Iterable, Optional


class DispatchError(Exception):
    """Base class for every error raised by this package."""


# graph


class InvalidGraph(DispatchError):
    """Communication topology violates the simple undirected graph rules."""


class DisconnectedGraph(InvalidGraph):
    """Communication graph is not connected (algebraic connectivity is zero)."""


class NonPositiveEpsilon(DispatchError):
    """Mean-Metropolis epsilon must be strictly positive."""


class NonTermination(DispatchError):
    """Size discovery did not settle within N rounds."""


# consensus


class DimensionMismatch(DispatchError):
    """Vector length does not match the weight matrix dimension."""


class InvalidWeightMatrix(DispatchError):
    """Weight matrix fails the stochasticity or spectral conditions."""


# agent


class NonPositiveRho(DispatchError):
    """Penalty parameter must be strictly positive."""


class MissingNeighborMessage(DispatchError):
    """An agent did not receive a message from every neighbor."""

    def __init__(self, agent_id: int, missing: Iterable[int]):
        self.agent_id = agent_id
        self.missing = sorted(missing)
        super().__init__(f"agent {agent_id} is missing messages from neighbors {self.missing}")


# engine


class InfeasibleCase(DispatchError):
    """Total demand of a scheduled step lies outside the generation limits."""

    def __init__(self, step: int, total_demand: float, bound_name: str, bound: float):
        self.step = step
        self.total_demand = total_demand
        self.bound_name = bound_name
        self.bound = bound
        super().__init__(
            f"demand step {step}: total demand {total_demand:.6g} violates {bound_name} = {bound:.6g}"
        )


class NegativeNominalLoad(DispatchError):
    """PV capacity cannot be derived from a negative nominal load."""


class SimulationDiverged(DispatchError):
    """A round produced non-finite metrics."""


# case input


class CaseFormatError(DispatchError):
    """Case file could not be turned into valid case data."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        location = ""
        if line is not None:
            location = f"line {line}"
            if column is not None:
                location += f", column {column}"
            location += ": "
        super().__init__(f"{location}{message}")


class UnsupportedCostModel(CaseFormatError):
    """Only polynomial cost models of degree two or less are supported."""


class MalformedMatrix(CaseFormatError):
    """A numeric matrix in the case file is missing, ragged or too narrow."""


class DanglingReference(CaseFormatError):
    """A generator or branch references a bus that does not exist."""


class DuplicateBusId(CaseFormatError):
    """Two buses share the same id."""


# irradiance input


class IrradianceError(DispatchError):
    """Irradiance profile is unusable."""


class NonMonotoneTime(IrradianceError):
    """Sample times must be strictly increasing."""


class NegativeIrradiance(IrradianceError):
    """Raw irradiance values must be non-negative."""


class EmptyProfile(IrradianceError):
    """Profile has no samples or no positive sample to normalize by."""


class IrradianceOutOfRange(IrradianceError):
    """Normalized irradiance must lie in [0, 1]."""


# oracle


class InfeasibleDemand(DispatchError):
    """Demand cannot be met within the generator limits."""

    def __init__(self, total_demand: float, bound_name: str, bound: float):
        self.total_demand = total_demand
        self.bound_name = bound_name
        self.bound = bound
        super().__init__(f"total demand {total_demand:.6g} violates {bound_name} = {bound:.6g}")


class UnboundedPrice(DispatchError):
    """Clearing price is not unique because only linear-cost generators remain."""

    def __init__(self, degenerate: Iterable[int]):
        self.degenerate = sorted(degenerate)
        super().__init__(f"price is not determined by demand; degenerate generators {self.degenerate}")
