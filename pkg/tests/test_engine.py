import numpy as np
import pytest
from conftest import random_case, tuned_config

from consensus_dispatch.config import ExecutorKind, SimulationConfig, WeightScheme
from consensus_dispatch.engine import (
    AgentArrays,
    DemandSchedule,
    InitialState,
    build_layout,
    detect_convergence,
    run_simulation,
)
from consensus_dispatch.errors import DisconnectedGraph, InfeasibleCase, InvalidWeightMatrix, SimulationDiverged
from consensus_dispatch.models import Bus, CaseData, Generator, IrradianceProfile, MessageRecord, RoundMetrics
from consensus_dispatch.oracle import fixed_point_state, kkt_residual, reference_admm, solve_case


def metrics(spread=0.0, mismatch=0.0, iteration=0):
    return RoundMetrics(
        iteration=iteration,
        lambda_spread=spread,
        lambda_mean=1.0,
        total_gen=1.0,
        total_demand=1.0,
        max_abs_mismatch_estimate=mismatch,
    )


def assert_conserved(trace):
    assert trace.max_relative_conservation_error() <= 1e-9


def test_detect_convergence():
    cfg = SimulationConfig(tol_lambda=1e-3, tol_mismatch=1e-3)
    assert detect_convergence([metrics()] * 50, cfg)
    assert not detect_convergence([metrics()] * 49 + [metrics(spread=2e-3)], cfg)
    assert not detect_convergence([metrics(mismatch=2e-3)] + [metrics()] * 49, cfg)
    assert not detect_convergence([], cfg)


def test_single_agent(single_agent_case):
    cfg = SimulationConfig(n2_rho=1.0, max_iter=500)
    trace = run_simulation(single_agent_case, cfg)
    assert trace.rho == 1.0
    assert trace.final_state.p_g[0] == pytest.approx(2.0, abs=1e-6)
    assert trace.final_state.lam[0] == pytest.approx(4.0, abs=1e-6)
    assert trace.converged
    assert len(trace) == 501
    assert_conserved(trace)


def test_two_generators(two_gen_case):
    cfg = SimulationConfig(n2_rho=0.4, max_iter=20_000, early_stop=True, tol_lambda=1e-9, tol_mismatch=1e-10)
    trace = run_simulation(two_gen_case, cfg)
    assert trace.converged
    assert trace.iterations < 20_000
    assert trace.generator_outputs() == pytest.approx([2.5, 1.5], abs=1e-6)
    assert trace.final_state.lam == pytest.approx([5.0, 5.0], abs=1e-6)
    assert_conserved(trace)


def test_penalty_scales_with_agents_and_base(case30):
    cfg = SimulationConfig(max_iter=1)
    trace = run_simulation(case30, cfg)
    assert trace.rho == pytest.approx(0.063546 * 100**2 / 30**2)


def test_initial_state(two_gen_case):
    cfg = SimulationConfig(max_iter=1, rng_seed=3)
    trace = run_simulation(two_gen_case, cfg)
    row0 = trace.metrics(0)
    assert row0.iteration == 0
    assert row0.total_gen == 0.0
    assert row0.total_demand == 4.0
    # p_gd_bar starts at the local mismatch -p_d
    assert row0.mismatch_estimate_sum == pytest.approx(-4.0)
    assert row0.max_abs_mismatch_estimate == pytest.approx(2.0)
    assert 0.0 <= row0.lambda_mean <= 22.0


def test_determinism(case30):
    cfg = SimulationConfig(max_iter=300, rng_seed=42, record_wall_time=False)
    first = run_simulation(case30, cfg)
    second = run_simulation(case30, cfg)
    for name, column in first.columns.items():
        assert np.array_equal(column, second.columns[name]), name
    assert first.final_snapshot == second.final_snapshot
    assert np.all(first.columns["wall_time_s"] == 0.0)


def test_seed_changes_initial_prices(two_gen_case):
    a = run_simulation(two_gen_case, SimulationConfig(max_iter=1, rng_seed=1))
    b = run_simulation(two_gen_case, SimulationConfig(max_iter=1, rng_seed=2))
    assert a.columns["lambda_mean"][0] != b.columns["lambda_mean"][0]


def test_wall_time_is_recorded(two_gen_case):
    trace = run_simulation(two_gen_case, SimulationConfig(max_iter=20, record_wall_time=True))
    wall = trace.columns["wall_time_s"]
    assert np.all(np.diff(wall) >= 0.0)
    assert wall[-1] > 0.0


def test_executors_agree(case30):
    profile = IrradianceProfile(samples=((0.0, 0.0), (10.0, 0.7), (20.0, 0.3)))
    base = dict(max_iter=240, demand_step_interval=80, rng_seed=5)
    vectorized = run_simulation(case30, SimulationConfig(**base), profile)
    agents = run_simulation(case30, SimulationConfig(**base, executor=ExecutorKind.agents), profile)
    for name in ("lambda_spread", "lambda_mean", "total_gen", "total_demand", "max_abs_mismatch", "mismatch_sum"):
        np.testing.assert_allclose(agents.columns[name], vectorized.columns[name], rtol=1e-9, atol=1e-9)
    for field in ("p_g", "p_gd_bar", "w", "lam"):
        np.testing.assert_allclose(
            getattr(agents.final_state, field), getattr(vectorized.final_state, field), rtol=1e-9, atol=1e-9
        )


def test_message_log(two_gen_case):
    log = []
    cfg = SimulationConfig(max_iter=3, executor=ExecutorKind.agents)
    trace = run_simulation(two_gen_case, cfg, message_sink=log.append)
    assert all(isinstance(record, MessageRecord) for record in log)
    assert [(r.round, r.sender_id) for r in log] == [(k, i) for k in range(4) for i in range(2)]
    last = [r for r in log if r.round == 3]
    assert [r.w for r in last] == pytest.approx(list(trace.final_state.w))
    assert set(MessageRecord.model_fields) == {"round", "sender_id", "p_gd_bar", "w"}


def test_fixed_point_is_stationary(two_gen_case):
    cfg = SimulationConfig(n2_rho=0.4, max_iter=300)
    initial = fixed_point_state(two_gen_case, cfg, solve_case(two_gen_case))
    trace = run_simulation(two_gen_case, cfg, initial=initial)
    for name in ("lambda_mean", "total_gen", "total_demand", "max_abs_mismatch", "lambda_spread"):
        column = trace.columns[name]
        np.testing.assert_allclose(column, column[0], atol=1e-9)
    assert trace.columns["lambda_mean"][0] == pytest.approx(5.0)


def test_explicit_initial_state(two_gen_case):
    initial = InitialState(p_g=[1.0, 1.0], p_gd_bar=[-1.0, -1.0], w=[2.0, 4.0])
    trace = run_simulation(two_gen_case, SimulationConfig(n2_rho=0.4, max_iter=1), initial=initial)
    row0 = trace.metrics(0)
    assert row0.total_gen == 2.0
    # lambda = rho * N * w with rho = 0.4 / 4
    assert row0.lambda_mean == pytest.approx(0.1 * 2 * 3.0)
    assert row0.lambda_spread == pytest.approx(0.1 * 2 * 2.0)


def test_disconnected_case_is_rejected():
    with pytest.raises(DisconnectedGraph):
        CaseData(
            name="split",
            buses=[Bus(id=1, load=1.0), Bus(id=2, load=1.0)],
            generators=[Generator(bus=1, a=1.0, b=0.0, p_max=5.0)],
            branches=[],
        )


def test_infeasible_case_names_step(two_gen_case):
    small = two_gen_case.model_copy(
        update={"generators": [g.model_copy(update={"p_max": 1.5}) for g in two_gen_case.generators]}
    )
    with pytest.raises(InfeasibleCase) as info:
        run_simulation(small, SimulationConfig(max_iter=10))
    assert info.value.step == 0
    assert info.value.bound_name == "sum of p_max"


def test_infeasible_later_step_is_caught_before_the_run(two_gen_case):
    floor = two_gen_case.model_copy(
        update={"generators": [g.model_copy(update={"p_min": 1.0}) for g in two_gen_case.generators]}
    )
    profile = IrradianceProfile(samples=((0.0, 0.0), (10.0, 0.0), (20.0, 0.9)))
    with pytest.raises(InfeasibleCase) as info:
        run_simulation(floor, SimulationConfig(max_iter=100, demand_step_interval=10), profile)
    assert info.value.step == 2
    assert info.value.bound_name == "sum of p_min"


def test_divergence_is_reported(two_gen_case):
    initial = InitialState(p_g=[0.0, 0.0], p_gd_bar=[-2.0, -2.0], w=[np.inf, 0.0])
    with pytest.raises(SimulationDiverged):
        run_simulation(two_gen_case, SimulationConfig(max_iter=5), initial=initial)


def test_demand_schedule(two_gen_case):
    layout = build_layout(two_gen_case)
    profile = IrradianceProfile(samples=((0.0, 0.0), (10.0, 0.5), (20.0, 1.0)))
    cfg = SimulationConfig(max_iter=100, demand_step_interval=30, pv_capacity_factor=0.5)
    schedule = DemandSchedule(layout, cfg, profile)
    assert schedule.step_count == 3
    assert schedule.demand(29).tolist() == [2.0, 2.0]
    assert schedule.demand(30).tolist() == [1.5, 1.5]
    assert schedule.demand(60).tolist() == [1.0, 1.0]
    # the profile holds its last sample
    assert schedule.demand(100).tolist() == [1.0, 1.0]
    assert schedule.is_step_start(30) and not schedule.is_step_start(31) and not schedule.is_step_start(0)


def test_layout_splits_extra_generators_into_agents():
    case = CaseData(
        buses=[Bus(id=1, load=1.0), Bus(id=2, load=3.0)],
        generators=[
            Generator(bus=2, a=1.0, b=1.0, p_max=5.0),
            Generator(bus=2, a=2.0, b=0.0, p_max=5.0),
            Generator(bus=1, a=1.0, b=0.0, p_max=5.0),
        ],
        branches=[(1, 2)],
    )
    layout = build_layout(case)
    assert layout.size == 3
    assert layout.generator_agents == (1, 2, 0)
    assert layout.bus_ids == (1, 2, 2)
    assert layout.load_bus == (1, 2, None)
    assert layout.graph.neighbors(2) == [1]

    cfg = tuned_config(case)
    trace = run_simulation(case, cfg)
    solution = solve_case(case)
    assert trace.converged
    assert trace.generator_outputs() == pytest.approx(list(solution.p), abs=1e-4)
    assert trace.final_lambda_mean == pytest.approx(solution.price, abs=1e-4)
    assert trace.final_state.p_d.tolist() == [1.0, 3.0, 0.0]


@pytest.mark.parametrize("scheme", list(WeightScheme))
def test_load_only_agents_carry_no_generation(scheme):
    case = CaseData(
        buses=[Bus(id=1, load=1.0), Bus(id=2, load=2.0), Bus(id=3, load=0.5)],
        generators=[Generator(bus=2, a=0.5, b=1.0, p_max=10.0)],
        branches=[(1, 2), (2, 3)],
    )
    trace = run_simulation(case, tuned_config(case, weight_scheme=scheme))
    assert trace.final_state.p_g[0] == 0.0
    assert trace.final_state.p_g[2] == 0.0
    assert trace.final_state.p_g[1] == pytest.approx(3.5, abs=1e-5)
    assert trace.final_lambda_mean == pytest.approx(2 * 0.5 * 3.5 + 1.0, abs=1e-4)


def test_plateaus_and_early_stop_on_last_step(two_gen_case):
    profile = IrradianceProfile(samples=((0.0, 0.0), (10.0, 0.5)))
    cfg = SimulationConfig(
        n2_rho=0.4, max_iter=40_000, demand_step_interval=5_000, early_stop=True, tol_lambda=1e-8, tol_mismatch=1e-9
    )
    trace = run_simulation(two_gen_case, cfg, profile)
    # the second sample holds for every later step, so the run stops during step 1
    assert 5_000 < trace.iterations < 10_000
    assert [p.step for p in trace.plateaus] == [0, 1]
    first, second = trace.plateaus
    assert (first.start_iteration, first.end_iteration) == (0, 4_999)
    assert second.start_iteration == 5_000
    assert second.end_iteration == trace.iterations
    assert first.lambda_settled_after is not None
    assert first.mismatch_settled_after is not None
    assert first.balance_settled_after is not None
    assert trace.generator_outputs() == pytest.approx(list(solve_case(two_gen_case, 2.0).p), abs=1e-5)
    assert_conserved(trace)


def test_unsettled_plateau_is_none(two_gen_case):
    trace = run_simulation(two_gen_case, SimulationConfig(max_iter=3, tol_lambda=1e-12, tol_mismatch=1e-12))
    (plateau,) = trace.plateaus
    assert plateau.mismatch_settled_after is None


def test_snapshots(two_gen_case):
    trace = run_simulation(two_gen_case, SimulationConfig(max_iter=10, snapshot_interval=5))
    assert [k for k, _ in trace.snapshots] == [0, 5, 10]
    final = trace.final_snapshot
    assert [s.agent_id for s in final] == [0, 1]
    assert [s.bus_id for s in final] == [1, 2]
    assert final[0].to_dict().keys() == {"agent_id", "bus_id", "p_g", "p_d", "p_gd_bar", "w", "lambda"}
    assert trace.snapshots[-1][1] == final


def test_agent_arrays_copy_is_independent():
    arrays = AgentArrays(*(np.zeros(2) for _ in range(5)))
    copy = arrays.copy()
    copy.p_g[0] = 1.0
    assert arrays.p_g[0] == 0.0


@pytest.mark.parametrize("seed", range(25))
def test_random_cases_match_oracle(seed):
    case = random_case(seed)
    trace = run_simulation(case, tuned_config(case, rng_seed=seed))
    solution = solve_case(case)
    assert trace.converged
    assert np.max(np.abs(trace.generator_outputs() - np.array(solution.p))) <= 1e-3
    assert np.max(np.abs(trace.final_state.lam - solution.price)) <= 1e-3
    assert kkt_residual(case.generators, trace.generator_outputs(), solution.price) <= 1e-4
    assert_conserved(trace)


def test_metropolis_on_a_single_edge_never_averages(two_gen_case):
    with pytest.raises(InvalidWeightMatrix):
        run_simulation(two_gen_case, SimulationConfig(max_iter=10, weight_scheme=WeightScheme.metropolis))
    # the centralized reference does not mix and still runs
    assert len(reference_admm(two_gen_case, SimulationConfig(max_iter=10, weight_scheme=WeightScheme.metropolis))) == 11


@pytest.mark.parametrize("executor", list(ExecutorKind))
def test_dual_sum_drops_by_the_mismatch_sum_every_round(executor):
    profile = IrradianceProfile(samples=((0.0, 0.0), (10.0, 0.6), (20.0, 0.1), (30.0, 0.9)))
    for seed in range(10):
        case = random_case(seed, max_buses=20)
        cfg = SimulationConfig(
            max_iter=120, demand_step_interval=30, snapshot_interval=1, pv_capacity_factor=0.5, executor=executor
        )
        trace = run_simulation(case, cfg, profile)
        for (_, before), (k, after) in zip(trace.snapshots, trace.snapshots[1:]):
            w_before = np.array([agent.w for agent in before])
            w_after = np.array([agent.w for agent in after])
            p_gd_bar = np.array([agent.p_gd_bar for agent in after])
            scale = 1.0 + np.abs(w_before).sum() + np.abs(p_gd_bar).sum()
            assert abs(w_after.sum() - w_before.sum() + p_gd_bar.sum()) <= 1e-10 * scale, (case.name, k)
