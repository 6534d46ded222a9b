import networkx as nx
import numpy as np
import pytest
from conftest import connected_graph

from consensus_dispatch.config import WeightScheme
from consensus_dispatch.errors import DisconnectedGraph, InvalidGraph, NonPositiveEpsilon
from consensus_dispatch.graph import (
    CommGraph,
    WeightMatrix,
    algebraic_connectivity,
    build_laplacian,
    discover_size,
    mean_metropolis_weights,
    metropolis_weights,
    validate_consensus_matrix,
    weights_for,
)


def path_graph(n):
    return CommGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n):
    return CommGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def from_nx(g):
    return CommGraph.from_edges(g.number_of_nodes(), g.edges)


def test_from_edges_deduplicates():
    g = CommGraph.from_edges(3, [(0, 1), (1, 0), (1, 2), (0, 1)])
    assert g.edge_count == 2
    assert g.neighbors(1) == [0, 2]


def test_from_edges_rejects_self_loop():
    with pytest.raises(InvalidGraph):
        CommGraph.from_edges(2, [(1, 1)])


def test_from_edges_rejects_unknown_node():
    with pytest.raises(InvalidGraph):
        CommGraph.from_edges(2, [(0, 2)])


def test_diameter():
    assert path_graph(5).diameter() == 4
    assert complete_graph(4).diameter() == 1
    with pytest.raises(DisconnectedGraph):
        CommGraph.from_edges(3, [(0, 1)]).diameter()


def test_laplacian_of_path():
    lap = build_laplacian(path_graph(3))
    np.testing.assert_array_equal(lap, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.all(lap @ np.ones(3) == 0.0)


def test_algebraic_connectivity_known_values():
    assert algebraic_connectivity(build_laplacian(complete_graph(3))) == pytest.approx(3.0)
    assert algebraic_connectivity(build_laplacian(path_graph(3))) == pytest.approx(1.0)
    assert algebraic_connectivity(build_laplacian(CommGraph.from_edges(4, [(0, 1), (2, 3)]))) == 0.0


def test_algebraic_connectivity_is_positive_iff_connected():
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(100):
        n = int(rng.integers(2, 21))
        g = nx.gnp_random_graph(n, float(rng.uniform(0.05, 0.5)), seed=int(rng.integers(2**31)))
        lap = build_laplacian(from_nx(g))
        assert np.all(lap @ np.ones(n) == 0.0)
        assert np.min(np.linalg.eigvalsh(lap)) >= -1e-10
        assert (algebraic_connectivity(lap) > 0.0) == nx.is_connected(g)
        assert from_nx(g).is_connected() == nx.is_connected(g)


def test_metropolis_weights_on_path():
    w = metropolis_weights(path_graph(3)).to_dense()
    expected = np.array([[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]])
    np.testing.assert_allclose(w, expected)


def test_mean_metropolis_weights_on_path():
    w = mean_metropolis_weights(path_graph(3), epsilon=1.0).to_dense()
    # a_01 = 2 / (1 + 2 + 1)
    assert w[0, 1] == pytest.approx(0.5)
    assert w[1, 1] == pytest.approx(0.0)
    assert w[0, 0] == pytest.approx(0.5)


def test_mean_metropolis_rejects_non_positive_epsilon():
    with pytest.raises(NonPositiveEpsilon):
        mean_metropolis_weights(path_graph(3), epsilon=0.0)


def test_weights_reject_disconnected_graph():
    with pytest.raises(DisconnectedGraph):
        metropolis_weights(CommGraph.from_edges(4, [(0, 1), (2, 3)]))


def test_single_node_weights():
    w = weights_for(CommGraph.from_edges(1, []), WeightScheme.mean_metropolis)
    assert w.to_dense().tolist() == [[1.0]]
    assert validate_consensus_matrix(w).is_valid


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_weight_matrices_on_random_graphs(scheme):
    rng = np.random.Generator(np.random.PCG64(11))
    for _ in range(100):
        n = int(rng.integers(3, 21))
        g = connected_graph(n, rng, p=float(rng.uniform(0.15, 0.6)))
        if scheme is WeightScheme.metropolis and nx.is_regular(g) and nx.is_bipartite(g):
            # plain Metropolis has eigenvalue -1 here
            continue
        weights = weights_for(from_nx(g), scheme, epsilon=1.0)
        w = weights.to_dense()
        assert np.array_equal(w, w.T)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        report = validate_consensus_matrix(weights)
        assert report.row_stochastic and report.col_stochastic
        assert report.spectral_radius_gap < 1.0

        # consensus error shrinks at least as fast as the spectral gap predicts
        x = rng.normal(size=n)
        err0 = np.linalg.norm(x - x.mean())
        for k in range(1, 21):
            x = weights.mix(x)
            assert np.linalg.norm(x - x.mean()) <= report.spectral_radius_gap**k * err0 + 1e-9


def test_validate_rejects_non_stochastic_matrix():
    report = validate_consensus_matrix(WeightMatrix.from_dense(np.array([[0.5, 0.6], [0.5, 0.4]])))
    assert not report.row_stochastic
    assert not report.is_valid


def test_validate_rejects_identity():
    report = validate_consensus_matrix(WeightMatrix.from_dense(np.eye(3)))
    assert report.row_stochastic and report.col_stochastic
    assert report.spectral_radius_gap == pytest.approx(1.0)
    assert not report.is_valid


def test_complete_graph_averaging_matrix_has_zero_gap():
    report = validate_consensus_matrix(WeightMatrix.from_dense(np.full((4, 4), 0.25)))
    assert report.spectral_radius_gap == 0.0
    assert report.is_valid


@pytest.mark.parametrize(
    "graph, rounds",
    [
        (CommGraph.from_edges(1, []), 0),
        (complete_graph(3), 1),
        (path_graph(3), 2),
        (path_graph(6), 5),
    ],
)
def test_discover_size(graph, rounds):
    discovery = discover_size(graph)
    assert discovery.counts == (graph.node_count,) * graph.node_count
    assert discovery.rounds == rounds


def test_discover_size_rounds_equal_diameter():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(20):
        g = from_nx(connected_graph(int(rng.integers(2, 15)), rng))
        assert discover_size(g).rounds == g.diameter()


def test_discover_size_on_random_graphs():
    rng = np.random.Generator(np.random.PCG64(4))
    for _ in range(100):
        n = int(rng.integers(1, 51))
        g = from_nx(connected_graph(n, rng, p=float(rng.uniform(0.1, 0.5))))
        discovery = discover_size(g)
        assert discovery.counts == (n,) * n
        assert discovery.rounds == g.diameter()


def test_discover_size_rejects_disconnected_graph():
    with pytest.raises(DisconnectedGraph):
        discover_size(CommGraph.from_edges(3, [(0, 1)]))
