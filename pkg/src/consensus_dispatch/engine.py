"""Bulk-synchronous simulation driver.

One coordinator advances all agents round by round. Within a round every agent reads only the
previous round's values, so the round result does not depend on evaluation order. Metrics are
aggregated after the round barrier.
"""

import logging
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .agent import AgentState, agent_round, initial_price_range
from .caseio import apply_demand_step
from .config import ExecutorKind, SimulationConfig
from .errors import DisconnectedGraph, InfeasibleCase, InvalidWeightMatrix, SimulationDiverged
from .graph import CommGraph, WeightMatrix, discover_size, validate_consensus_matrix, weights_for
from .models import (
    NULL_GENERATOR,
    AgentSnapshot,
    CaseData,
    GeneratorParams,
    IrradianceProfile,
    MessageRecord,
    NeighborMessage,
    PlateauSummary,
    RoundMetrics,
)

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9

MessageSink = Callable[[MessageRecord], None]


@dataclass(frozen=True)
class AgentLayout:
    """How a case maps onto agents.

    Every bus is an agent. The first generator of a bus belongs to the bus agent; every further
    generator on the same bus becomes an extra zero-load agent linked to its bus agent.
    """

    case: CaseData
    graph: CommGraph
    params: Tuple[GeneratorParams, ...]
    bus_ids: Tuple[int, ...]
    load_bus: Tuple[Optional[int], ...]
    generator_agents: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.params)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.params], dtype=float)


def build_layout(case: CaseData) -> AgentLayout:
    index = case.bus_index()
    params: List[GeneratorParams] = [NULL_GENERATOR] * len(case.buses)
    bus_ids = [bus.id for bus in case.buses]
    load_bus: List[Optional[int]] = list(bus_ids)
    edges = [(index[f], index[t]) for f, t in case.branches if f != t]
    generator_agents = []
    for gen in case.generators:
        home = index[gen.bus]
        own = GeneratorParams(**gen.model_dump(exclude={"bus"}))
        if params[home] is NULL_GENERATOR:
            params[home] = own
            generator_agents.append(home)
        else:
            agent = len(params)
            params.append(own)
            bus_ids.append(gen.bus)
            load_bus.append(None)
            edges.append((home, agent))
            generator_agents.append(agent)
    graph = CommGraph.from_edges(len(params), edges)
    return AgentLayout(case, graph, tuple(params), tuple(bus_ids), tuple(load_bus), tuple(generator_agents))


class DemandSchedule:
    """Piecewise-constant nodal demand: the irradiance profile is sampled once per demand step."""

    def __init__(self, layout: AgentLayout, cfg: SimulationConfig, profile: Optional[IrradianceProfile] = None):
        self.layout = layout
        self.interval = cfg.demand_step_interval
        self.step_count = 1
        if profile is not None:
            # once the profile runs out its last sample holds, so later intervals add no new plateau
            self.step_count = min(cfg.max_iter // cfg.demand_step_interval + 1, len(profile.samples))
        self._demands = []
        for step in range(self.step_count):
            irradiance = profile.value_at_step(step) if profile is not None else 0.0
            self._demands.append(
                np.array(
                    [
                        0.0 if bus is None else apply_demand_step(layout.case, irradiance, bus, cfg.pv_capacity_factor)
                        for bus in layout.load_bus
                    ]
                )
            )

    @property
    def last_step(self) -> int:
        return self.step_count - 1

    def step_of(self, iteration: int) -> int:
        return min(iteration // self.interval, self.last_step)

    def is_step_start(self, iteration: int) -> bool:
        return iteration > 0 and iteration % self.interval == 0 and iteration // self.interval <= self.last_step

    def demand(self, iteration: int) -> np.ndarray:
        return self._demands[self.step_of(iteration)]

    def check_feasible(self) -> None:
        low = float(self.layout.column("p_min").sum())
        high = float(self.layout.column("p_max").sum())
        for step, demand in enumerate(self._demands):
            total = float(demand.sum())
            slack = FEASIBILITY_TOL * (1.0 + abs(total))
            if total < low - slack:
                raise InfeasibleCase(step, total, "sum of p_min", low)
            if total > high + slack:
                raise InfeasibleCase(step, total, "sum of p_max", high)


@dataclass
class AgentArrays:
    """State of all agents as parallel arrays."""

    p_g: np.ndarray
    p_d: np.ndarray
    p_gd_bar: np.ndarray
    w: np.ndarray
    lam: np.ndarray

    def copy(self) -> "AgentArrays":
        return AgentArrays(self.p_g.copy(), self.p_d.copy(), self.p_gd_bar.copy(), self.w.copy(), self.lam.copy())


@dataclass(frozen=True)
class InitialState:
    """Explicit starting point, replacing the default initialization."""

    p_g: Sequence[float]
    p_gd_bar: Sequence[float]
    w: Sequence[float]


class RoundExecutor(ABC):
    """
    Executes synchronous rounds for every agent.
    Implementations must be deterministic and read only previous-round values.
    """

    def __init__(self, layout: AgentLayout, weights: WeightMatrix, rho: float, n_est: np.ndarray, state: AgentArrays):
        self.layout = layout
        self.weights = weights
        self.rho = rho
        self.n_est = n_est.astype(float)
        self.a = layout.column("a")
        self.b = layout.column("b")
        self.p_min = layout.column("p_min")
        self.p_max = layout.column("p_max")
        self._state = state

    @property
    def state(self) -> AgentArrays:
        return self._state

    @abstractmethod
    def step(self, iteration: int, p_d_new: np.ndarray) -> AgentArrays:
        """
        Run one round.
        Args:
            iteration (int): Index of the round being computed (1-based).
            p_d_new (np.ndarray): Demand of every agent for this round.
        Returns:
            AgentArrays: State after the round.
        """
        pass

    def primal(self, psi: np.ndarray) -> np.ndarray:
        """Closed-form primal update for all agents at once."""
        unclipped = (self.n_est * self.rho * psi - self.b) / (2.0 * self.a + self.rho)
        return np.clip(unclipped, self.p_min, self.p_max)


class VectorizedExecutor(RoundExecutor):
    """All agents' updates evaluated as sparse matrix-vector products."""

    def step(self, iteration: int, p_d_new: np.ndarray) -> AgentArrays:
        s = self._state
        p_g = self.primal(s.p_g / self.n_est - s.p_gd_bar + s.w)
        p_gd_bar = self.weights.mix(s.p_gd_bar) + (p_g - p_d_new) - (s.p_g - s.p_d)
        w = self.weights.mix(s.w) - p_gd_bar
        self._state = AgentArrays(p_g, p_d_new.copy(), p_gd_bar, w, self.rho * self.n_est * w)
        return self._state


class AgentExecutor(RoundExecutor):
    """One agent_round per agent with explicit message exchange."""

    def __init__(self, *args, message_sink: Optional[MessageSink] = None, **kwargs):
        super().__init__(*args, **kwargs)
        s = self._state
        self.agents = [
            AgentState(
                agent_id=i,
                p_g=float(s.p_g[i]),
                p_d=float(s.p_d[i]),
                p_gd_bar=float(s.p_gd_bar[i]),
                w=float(s.w[i]),
                lambda_=float(s.lam[i]),
                n_est=int(self.n_est[i]),
                rho=self.rho,
            )
            for i in range(self.layout.size)
        ]
        self.rows = [self.weights.row(i) for i in range(self.layout.size)]
        self.neighbors = [self.layout.graph.neighbors(i) for i in range(self.layout.size)]
        self.outbox: List[NeighborMessage] = [agent.message() for agent in self.agents]
        self.message_sink = message_sink
        self._log(0)

    def _log(self, iteration: int) -> None:
        if self.message_sink is not None:
            for msg in self.outbox:
                self.message_sink(MessageRecord.from_message(iteration, msg))

    def step(self, iteration: int, p_d_new: np.ndarray) -> AgentArrays:
        results = [
            agent_round(
                agent,
                self.layout.params[i],
                [self.outbox[j] for j in self.neighbors[i]],
                self.rows[i],
                float(p_d_new[i]),
            )
            for i, agent in enumerate(self.agents)
        ]
        self.agents = [state for state, _ in results]
        self.outbox = [msg for _, msg in results]
        self._log(iteration)
        self._state = AgentArrays(
            np.array([a.p_g for a in self.agents]),
            np.array([a.p_d for a in self.agents]),
            np.array([a.p_gd_bar for a in self.agents]),
            np.array([a.w for a in self.agents]),
            np.array([a.lambda_ for a in self.agents]),
        )
        return self._state


ExecutorFactory = Callable[..., RoundExecutor]

TRACE_COLUMNS = (
    "iteration",
    "lambda_spread",
    "lambda_mean",
    "total_gen",
    "total_demand",
    "max_abs_mismatch",
    "wall_time_s",
)


@dataclass
class SimTrace:
    """Per-round metrics (row 0 is the initial state) plus the final per-agent state."""

    layout: AgentLayout
    rho: float
    columns: dict
    conservation_residual: np.ndarray
    conservation_scale: np.ndarray
    final_state: AgentArrays
    plateaus: List[PlateauSummary] = field(default_factory=list)
    snapshots: List[Tuple[int, List[AgentSnapshot]]] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.columns["iteration"])

    @property
    def iterations(self) -> int:
        """Number of rounds executed."""
        return int(self.columns["iteration"][-1])

    def metrics(self, row: int) -> RoundMetrics:
        c = self.columns
        return RoundMetrics(
            iteration=int(c["iteration"][row]),
            lambda_spread=float(c["lambda_spread"][row]),
            lambda_mean=float(c["lambda_mean"][row]),
            total_gen=float(c["total_gen"][row]),
            total_demand=float(c["total_demand"][row]),
            max_abs_mismatch_estimate=float(c["max_abs_mismatch"][row]),
            wall_time=float(c["wall_time_s"][row]),
            mismatch_estimate_sum=float(c["mismatch_sum"][row]),
        )

    def rounds(self) -> Iterator[RoundMetrics]:
        for row in range(len(self)):
            yield self.metrics(row)

    def max_relative_conservation_error(self) -> float:
        return float(np.max(self.conservation_residual / (1.0 + self.conservation_scale)))

    @property
    def final_snapshot(self) -> List[AgentSnapshot]:
        return snapshot(self.layout, self.final_state)

    def generator_outputs(self) -> np.ndarray:
        """Final output of every case generator, in case order."""
        return self.final_state.p_g[list(self.layout.generator_agents)]

    @property
    def final_lambda_mean(self) -> float:
        return float(self.columns["lambda_mean"][-1])


def snapshot(layout: AgentLayout, state: AgentArrays) -> List[AgentSnapshot]:
    return [
        AgentSnapshot(
            agent_id=i,
            bus_id=layout.bus_ids[i],
            p_g=float(state.p_g[i]),
            p_d=float(state.p_d[i]),
            p_gd_bar=float(state.p_gd_bar[i]),
            w=float(state.w[i]),
            lambda_=float(state.lam[i]),
        )
        for i in range(layout.size)
    ]


def detect_convergence(window: Iterable[RoundMetrics], cfg: SimulationConfig) -> bool:
    """True iff every round in the window is within both the price-spread and mismatch tolerances."""
    window = list(window)
    if not window:
        return False
    return all(
        m.lambda_spread <= cfg.tol_lambda and m.max_abs_mismatch_estimate <= cfg.tol_mismatch for m in window
    )


def _settled_after(values: np.ndarray, tol: float) -> Optional[int]:
    above = np.nonzero(values > tol)[0]
    if len(above) == 0:
        return 0
    if above[-1] == len(values) - 1:
        return None
    return int(above[-1]) + 1


def _plateaus(columns: dict, schedule: DemandSchedule, cfg: SimulationConfig) -> List[PlateauSummary]:
    last = int(columns["iteration"][-1])
    balance = np.abs(columns["total_gen"] - columns["total_demand"])
    plateaus = []
    for step in range(schedule.step_count):
        start = step * schedule.interval
        if start > last:
            break
        end = last if step == schedule.last_step else min((step + 1) * schedule.interval - 1, last)
        rows = slice(start, end + 1)
        plateaus.append(
            PlateauSummary(
                step=step,
                start_iteration=start,
                end_iteration=end,
                lambda_settled_after=_settled_after(columns["lambda_spread"][rows], cfg.tol_lambda),
                mismatch_settled_after=_settled_after(columns["max_abs_mismatch"][rows], cfg.tol_mismatch),
                balance_settled_after=_settled_after(balance[rows], cfg.tol_balance),
            )
        )
    return plateaus


def _initial_state(
    layout: AgentLayout,
    cfg: SimulationConfig,
    rho: float,
    n_est: np.ndarray,
    p_d: np.ndarray,
    initial: Optional[InitialState],
) -> AgentArrays:
    if initial is not None:
        p_g = np.array(initial.p_g, dtype=float)
        w = np.array(initial.w, dtype=float)
        return AgentArrays(p_g, p_d.copy(), np.array(initial.p_gd_bar, dtype=float), w, rho * n_est * w)
    # P̄_g(0) = 0, P̄_d(0) = P_d(0): the estimate starts at the local mismatch, keeping sums consistent
    p_g = np.clip(np.zeros(layout.size), layout.column("p_min"), layout.column("p_max"))
    mc_min, mc_max = initial_price_range(layout.params)
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    lam = rng.uniform(mc_min, mc_max, size=layout.size)
    w = lam / (rho * n_est)
    return AgentArrays(p_g, p_d.copy(), p_g - p_d, w, lam)


def simulate(
    case: CaseData,
    cfg: SimulationConfig,
    executor_factory: ExecutorFactory,
    profile: Optional[IrradianceProfile] = None,
    initial: Optional[InitialState] = None,
    require_mixing: bool = True,
) -> SimTrace:
    """Shared round loop for every executor.

    With `require_mixing` the consensus weights must average (see validate_consensus_matrix); executors that
    never mix can turn the check off.
    """
    layout = build_layout(case)
    weights = weights_for(layout.graph, cfg.weight_scheme, cfg.epsilon)
    report = validate_consensus_matrix(weights)
    if require_mixing and not report.is_valid:
        raise InvalidWeightMatrix(
            f"{cfg.weight_scheme.value} weights do not average on this topology (gap {report.spectral_radius_gap:.6g})"
        )
    discovery = discover_size(layout.graph)
    if any(count != layout.size for count in discovery.counts):
        raise DisconnectedGraph(f"size discovery found {set(discovery.counts)} agents, expected {layout.size}")
    n_est = np.array(discovery.counts)
    rho = cfg.penalty(layout.size, case.base_mva)

    schedule = DemandSchedule(layout, cfg, profile)
    schedule.check_feasible()

    state = _initial_state(layout, cfg, rho, n_est, schedule.demand(0), initial)
    executor = executor_factory(layout, weights, rho, n_est, state)
    logger.info(
        "Simulating %s: %d agents, rho=%.6g, %s weights (gap %.4f), %d rounds, %d demand steps",
        case.name,
        layout.size,
        rho,
        cfg.weight_scheme.value,
        report.spectral_radius_gap,
        cfg.max_iter,
        schedule.step_count,
    )

    rows = cfg.max_iter + 1
    columns = {name: np.zeros(rows) for name in TRACE_COLUMNS + ("mismatch_sum",)}
    columns["iteration"] = np.arange(rows)
    residual = np.zeros(rows)
    scale = np.zeros(rows)
    window: Deque[RoundMetrics] = deque(maxlen=cfg.convergence_window)
    snapshots: List[Tuple[int, List[AgentSnapshot]]] = []
    started = time.perf_counter()

    def record(k: int, s: AgentArrays) -> RoundMetrics:
        p_gd = s.p_g - s.p_d
        residual[k] = abs(float(s.p_gd_bar.sum()) - float(p_gd.sum()))
        scale[k] = float(np.abs(p_gd).sum())
        try:
            metrics = RoundMetrics(
                iteration=k,
                lambda_spread=float(s.lam.max() - s.lam.min()),
                lambda_mean=float(s.lam.mean()),
                total_gen=float(s.p_g.sum()),
                total_demand=float(s.p_d.sum()),
                max_abs_mismatch_estimate=float(np.abs(s.p_gd_bar).max()),
                wall_time=time.perf_counter() - started if cfg.record_wall_time else 0.0,
                mismatch_estimate_sum=float(s.p_gd_bar.sum()),
            )
        except ValidationError as e:
            raise SimulationDiverged(f"round {k} produced non-finite values") from e
        columns["lambda_spread"][k] = metrics.lambda_spread
        columns["lambda_mean"][k] = metrics.lambda_mean
        columns["total_gen"][k] = metrics.total_gen
        columns["total_demand"][k] = metrics.total_demand
        columns["max_abs_mismatch"][k] = metrics.max_abs_mismatch_estimate
        columns["wall_time_s"][k] = metrics.wall_time
        columns["mismatch_sum"][k] = metrics.mismatch_estimate_sum
        if cfg.snapshot_interval and k % cfg.snapshot_interval == 0:
            snapshots.append((k, snapshot(layout, s)))
        return metrics

    window.append(record(0, state))
    last = 0
    for k in range(1, cfg.max_iter + 1):
        if schedule.is_step_start(k):
            logger.info(
                "Demand step %d at round %d: total demand %.6g", schedule.step_of(k), k, schedule.demand(k).sum()
            )
        state = executor.step(k, schedule.demand(k))
        metrics = record(k, state)
        logger.debug("round %d: %s", k, metrics)
        window.append(metrics)
        last = k
        if (
            cfg.early_stop
            and schedule.step_of(k) == schedule.last_step
            and len(window) == window.maxlen
            and detect_convergence(window, cfg)
        ):
            logger.info("Converged on the last demand plateau at round %d; stopping early", k)
            break

    columns = {name: values[: last + 1] for name, values in columns.items()}
    trace = SimTrace(
        layout=layout,
        rho=rho,
        columns=columns,
        conservation_residual=residual[: last + 1],
        conservation_scale=scale[: last + 1],
        final_state=state.copy(),
        plateaus=_plateaus(columns, schedule, cfg),
        snapshots=snapshots,
        converged=len(window) == window.maxlen and detect_convergence(window, cfg),
    )
    logger.info("Finished after %d rounds, converged=%s, lambda=%.6g", last, trace.converged, trace.final_lambda_mean)
    return trace


def run_simulation(
    case: CaseData,
    cfg: SimulationConfig,
    profile: Optional[IrradianceProfile] = None,
    initial: Optional[InitialState] = None,
    message_sink: Optional[MessageSink] = None,
) -> SimTrace:
    """Run the fully distributed algorithm on `case`.

    With the agents executor every transmitted message is handed to `message_sink` as it is sent.
    """
    if cfg.executor == ExecutorKind.agents:

        def factory(*args):
            return AgentExecutor(*args, message_sink=message_sink)

    else:
        factory = VectorizedExecutor
    return simulate(case, cfg, factory, profile=profile, initial=initial)
