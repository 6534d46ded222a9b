"""Shared pytest fixtures for all tests."""

from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from consensus_dispatch.caseio import read_case
from consensus_dispatch.config import SimulationConfig
from consensus_dispatch.engine import build_layout
from consensus_dispatch.models import Bus, CaseData, Generator

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture()
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture()
def two_gen_case() -> CaseData:
    """Two buses, gens (a=1, b=0) and (a=1, b=2) on [0, 10], total demand 4."""
    return read_case(DATA_DIR / "two_gen.json")


@pytest.fixture()
def single_agent_case() -> CaseData:
    return CaseData(
        name="single",
        buses=[Bus(id=1, load=2.0)],
        generators=[Generator(bus=1, a=1.0, b=0.0, p_min=0.0, p_max=10.0)],
    )


@pytest.fixture(scope="session")
def case30() -> CaseData:
    return read_case(DATA_DIR / "case30.m")


@pytest.fixture(scope="session")
def case300() -> CaseData:
    """IEEE 300-bus case; drop MATPOWER's case300.m into tests/data to enable the runs that need it."""
    path = DATA_DIR / "case300.m"
    if not path.exists():
        pytest.skip("tests/data/case300.m is not vendored")
    return read_case(path)


def connected_graph(n: int, rng: np.random.Generator, p: float = 0.4) -> nx.Graph:
    """Random connected G(n, p) graph, redrawn until connected."""
    while True:
        g = nx.gnp_random_graph(n, p, seed=int(rng.integers(2**31)))
        if n == 1 or nx.is_connected(g):
            return g


def random_case(seed: int, max_buses: int = 12, max_generators: int = 8) -> CaseData:
    """Random feasible case on a connected topology with distinct generator buses."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(rng.integers(2, max_buses + 1))
    g = connected_graph(n, rng)
    k = int(rng.integers(1, min(max_generators, n) + 1))
    gen_buses = rng.choice(n, size=k, replace=False)
    generators = [
        Generator(
            bus=int(bus) + 1,
            a=float(rng.uniform(0.1, 5.0)),
            b=float(rng.uniform(0.0, 50.0)),
            p_min=0.0,
            p_max=float(rng.uniform(1.0, 10.0)),
        )
        for bus in gen_buses
    ]
    capacity = sum(gen.p_max for gen in generators)
    demand = rng.uniform(0.1, 0.9) * capacity
    shares = rng.dirichlet(np.ones(n))
    return CaseData(
        name=f"random-{seed}",
        buses=[Bus(id=i + 1, load=float(demand * shares[i])) for i in range(n)],
        generators=generators,
        branches=[(i + 1, j + 1) for i, j in g.edges],
    )


def tuned_config(case: CaseData, **overrides) -> SimulationConfig:
    """Fast-converging settings: the penalty keeps the summed primal gain near 0.02."""
    n_agents = build_layout(case).size
    rho = 0.02 / sum(1.0 / (2.0 * gen.a) for gen in case.generators)
    settings = dict(
        n2_rho=rho * n_agents**2,
        max_iter=50_000,
        demand_step_interval=50_000,
        early_stop=True,
        tol_lambda=1e-7,
        tol_mismatch=1e-8,
    )
    settings.update(overrides)
    return SimulationConfig(**settings)
