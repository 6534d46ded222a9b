"""Static and dynamic average consensus.

The continuous-time Laplacian flow dx/dt = -Lx converges to the same average as the discrete
iteration below; only the discrete form is implemented.

With a column-stochastic weight matrix the dynamic iteration conserves sums: whenever x⁰ = z⁰,
sum(x^k) = sum(z^k) at every iteration.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidWeightMatrix
from .graph import WeightMatrix, validate_consensus_matrix

logger = logging.getLogger(__name__)


def _as_vector(weights: WeightMatrix, x, name: str) -> np.ndarray:
    vector = np.asarray(x, dtype=float)
    if vector.shape != (weights.dimension,):
        raise DimensionMismatch(f"{name} has shape {vector.shape}, expected ({weights.dimension},)")
    return vector


def static_consensus_step(weights: WeightMatrix, x) -> np.ndarray:
    """x'_i = a_ii x_i + sum over neighbors of a_ij x_j."""
    return weights.mix(_as_vector(weights, x, "x"))


def dynamic_consensus_step(weights: WeightMatrix, x, z_new, z_old) -> np.ndarray:
    """Static mix plus each node's signal increment z_new - z_old."""
    x = _as_vector(weights, x, "x")
    z_new = _as_vector(weights, z_new, "z_new")
    z_old = _as_vector(weights, z_old, "z_old")
    return weights.mix(x) + (z_new - z_old)


@dataclass(frozen=True)
class StaticConsensusResult:
    x: np.ndarray
    iterations: int
    converged: bool


def run_static_consensus(weights: WeightMatrix, x0, tol: float, max_iter: int) -> StaticConsensusResult:
    """Iterate static mixing until every entry is within `tol` of the initial average."""
    report = validate_consensus_matrix(weights)
    if not report.is_valid:
        raise InvalidWeightMatrix(f"weight matrix does not average: {report}")
    x = _as_vector(weights, x0, "x0")
    target = float(np.mean(x))
    for iteration in range(max_iter + 1):
        if np.max(np.abs(x - target)) <= tol:
            return StaticConsensusResult(x, iteration, True)
        if iteration == max_iter:
            break
        x = weights.mix(x)
    logger.info("Static consensus did not reach tol %g within %d iterations", tol, max_iter)
    return StaticConsensusResult(x, max_iter, False)


class DynamicConsensus:
    """Tracks the running average of time-varying node signals.

    Keeps the last signal so callers only hand in the new one.
    """

    def __init__(self, weights: WeightMatrix, z0):
        self.weights = weights
        self.z_old = _as_vector(weights, z0, "z0").copy()
        self.x = self.z_old.copy()

    def step(self, z_new) -> np.ndarray:
        z_new = _as_vector(self.weights, z_new, "z_new")
        self.x = dynamic_consensus_step(self.weights, self.x, z_new, self.z_old)
        self.z_old = z_new.copy()
        return self.x

    @property
    def conservation_residual(self) -> float:
        """|sum(x) - sum(z)|, zero up to rounding for a column-stochastic matrix."""
        return abs(float(np.sum(self.x) - np.sum(self.z_old)))
