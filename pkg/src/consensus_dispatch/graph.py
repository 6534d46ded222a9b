"""Communication graph, Laplacian and consensus weight matrices.

Graphs are undirected and simple. Nodes are numbered 0..N-1; mapping to bus ids happens in the engine.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Tuple

import networkx as nx
import numpy as np
from scipy import sparse

from .config import WeightScheme
from .errors import DisconnectedGraph, InvalidGraph, NonPositiveEpsilon, NonTermination

logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-10
STOCHASTIC_TOL = 1e-10


@dataclass(frozen=True)
class CommGraph:
    """Undirected simple communication topology among agents."""

    node_count: int
    edges: FrozenSet[Tuple[int, int]]
    neighbor_sets: Tuple[FrozenSet[int], ...]

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Tuple[int, int]]) -> "CommGraph":
        """Build a graph from unordered node pairs. Duplicate and reversed pairs collapse into one edge."""
        if node_count < 1:
            raise InvalidGraph(f"graph needs at least one node, got {node_count}")
        unique = set()
        for i, j in edges:
            if i == j:
                raise InvalidGraph(f"self-loop on node {i}")
            if not (0 <= i < node_count and 0 <= j < node_count):
                raise InvalidGraph(f"edge ({i}, {j}) references a node outside 0..{node_count - 1}")
            unique.add((min(i, j), max(i, j)))
        neighbors: List[set] = [set() for _ in range(node_count)]
        for i, j in unique:
            neighbors[i].add(j)
            neighbors[j].add(i)
        return cls(node_count, frozenset(unique), tuple(frozenset(n) for n in neighbors))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degree(self, i: int) -> int:
        return len(self.neighbor_sets[i])

    def neighbors(self, i: int) -> List[int]:
        """Neighbors of node i in ascending order."""
        return sorted(self.neighbor_sets[i])

    @cached_property
    def nx_graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from(self.edges)
        return g

    def is_connected(self) -> bool:
        return nx.is_connected(self.nx_graph)

    def diameter(self) -> int:
        """Longest shortest path. Raises DisconnectedGraph on a disconnected graph."""
        if not self.is_connected():
            raise DisconnectedGraph("diameter is undefined on a disconnected graph")
        return nx.diameter(self.nx_graph)


def build_laplacian(g: CommGraph) -> np.ndarray:
    """L = D - A for the graph's adjacency matrix A and degree matrix D."""
    return nx.laplacian_matrix(g.nx_graph, nodelist=list(range(g.node_count))).toarray().astype(float)


def algebraic_connectivity(lap: np.ndarray) -> float:
    """Second-smallest Laplacian eigenvalue; zero iff the graph is disconnected."""
    if lap.shape[0] < 2:
        return 0.0
    eigenvalues = np.linalg.eigvalsh(lap)
    second = float(eigenvalues[1])
    return second if second > EIGEN_TOL else 0.0


def _require_connected(g: CommGraph) -> None:
    if g.node_count == 1:
        return
    if algebraic_connectivity(build_laplacian(g)) == 0.0:
        raise DisconnectedGraph(f"communication graph with {g.node_count} nodes is not connected")


@dataclass(frozen=True)
class WeightMatrix:
    """Consensus mixing weights stored per node: a self weight plus one weight per neighbor."""

    dimension: int
    self_weights: Tuple[float, ...]
    neighbor_weights: Tuple[Dict[int, float], ...]

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "WeightMatrix":
        """Wrap an arbitrary square matrix; every nonzero off-diagonal entry becomes a neighbor weight."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {matrix.shape}")
        n = matrix.shape[0]
        rows = tuple({j: float(matrix[i, j]) for j in range(n) if j != i and matrix[i, j] != 0.0} for i in range(n))
        return cls(n, tuple(float(matrix[i, i]) for i in range(n)), rows)

    def row(self, i: int) -> Tuple[float, Dict[int, float]]:
        """Own weight a_ii and neighbor weights a_ij of node i."""
        return self.self_weights[i], self.neighbor_weights[i]

    def to_dense(self) -> np.ndarray:
        matrix = np.zeros((self.dimension, self.dimension))
        for i in range(self.dimension):
            matrix[i, i] = self.self_weights[i]
            for j, a_ij in self.neighbor_weights[i].items():
                matrix[i, j] = a_ij
        return matrix

    @cached_property
    def sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.to_dense())

    def mix(self, x: np.ndarray) -> np.ndarray:
        """One consensus mix: every node combines its own value with its neighbors' values."""
        return self.sparse @ x


def _degree_weights(g: CommGraph, edge_weight) -> WeightMatrix:
    _require_connected(g)
    rows = []
    for i in range(g.node_count):
        rows.append({j: edge_weight(g.degree(i), g.degree(j)) for j in g.neighbors(i)})
    self_weights = tuple(1.0 - sum(row.values()) for row in rows)
    return WeightMatrix(g.node_count, self_weights, tuple(rows))


def metropolis_weights(g: CommGraph) -> WeightMatrix:
    """Local degree weights a_ij = 1 / max(d_i, d_j)."""
    return _degree_weights(g, lambda d_i, d_j: 1.0 / max(d_i, d_j))


def mean_metropolis_weights(g: CommGraph, epsilon: float) -> WeightMatrix:
    """Mean-Metropolis weights a_ij = 2 / (d_i + d_j + epsilon)."""
    if epsilon <= 0.0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    return _degree_weights(g, lambda d_i, d_j: 2.0 / (d_i + d_j + epsilon))


def weights_for(g: CommGraph, scheme: WeightScheme, epsilon: float = 1.0) -> WeightMatrix:
    if scheme == WeightScheme.metropolis:
        return metropolis_weights(g)
    return mean_metropolis_weights(g, epsilon)


@dataclass(frozen=True)
class ConsensusReport:
    row_stochastic: bool
    col_stochastic: bool
    spectral_radius_gap: float

    @property
    def is_valid(self) -> bool:
        """True iff repeated mixing converges to the average."""
        return self.row_stochastic and self.col_stochastic and self.spectral_radius_gap < 1.0 - EIGEN_TOL


def validate_consensus_matrix(weights: WeightMatrix) -> ConsensusReport:
    matrix = weights.to_dense()
    n = weights.dimension
    ones = np.ones(n)
    row_ok = bool(np.all(np.abs(matrix @ ones - 1.0) <= STOCHASTIC_TOL))
    col_ok = bool(np.all(np.abs(ones @ matrix - 1.0) <= STOCHASTIC_TOL))
    shifted = matrix - np.full((n, n), 1.0 / n)
    if np.allclose(shifted, shifted.T, atol=0.0, rtol=0.0):
        eigenvalues = np.linalg.eigvalsh(shifted)
    else:
        eigenvalues = np.linalg.eigvals(shifted)
    gap = float(np.max(np.abs(eigenvalues)))
    if gap < EIGEN_TOL:
        gap = 0.0
    return ConsensusReport(row_ok, col_ok, gap)


@dataclass(frozen=True)
class SizeDiscovery:
    counts: Tuple[int, ...]
    rounds: int


def discover_size(g: CommGraph) -> SizeDiscovery:
    """Flood known-id sets until nothing changes; every node then counts the ids it has seen.

    Each node starts out knowing only its own id. One round lets every node merge its neighbors' sets.
    """
    if not g.is_connected():
        raise DisconnectedGraph("size discovery needs a connected graph")
    known = [frozenset({i}) for i in range(g.node_count)]
    rounds = 0
    while True:
        merged = [known[i].union(*(known[j] for j in g.neighbor_sets[i])) for i in range(g.node_count)]
        if merged == known:
            break
        known = merged
        rounds += 1
        if rounds > g.node_count:
            raise NonTermination(f"size discovery still changing after {rounds} rounds")
    logger.debug("Size discovery settled after %d rounds", rounds)
    return SizeDiscovery(tuple(len(k) for k in known), rounds)
