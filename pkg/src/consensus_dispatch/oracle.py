"""Centralized reference solvers.

`solve_centralized_ed` is the ground truth: equal-incremental-cost dispatch found by bisection on the
price. `reference_admm` runs the same primal update as the distributed engine, but a coordinator
computes the exact network mismatch and a single shared dual variable.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from .config import SimulationConfig
from .engine import AgentArrays, InitialState, RoundExecutor, SimTrace, build_layout, simulate
from .errors import InfeasibleDemand, UnboundedPrice
from .models import CaseData, DispatchSolution, GeneratorParams, IrradianceProfile, OracleGap

logger = logging.getLogger(__name__)

MAX_BISECTIONS = 200
RESIDUAL_TOL = 1e-10
BOUND_TOL = 1e-9


def _upper_supply(gens: Sequence[GeneratorParams], price: float) -> float:
    """Total output at `price`, with linear-cost units at their kink counted at p_max."""
    total = 0.0
    for g in gens:
        if g.a > 0.0:
            total += min(max((price - g.b) / (2.0 * g.a), g.p_min), g.p_max)
        else:
            total += g.p_max if price >= g.b else g.p_min
    return total


def _dispatch(gens: Sequence[GeneratorParams], price: float, total_demand: float) -> List[float]:
    p: List[Optional[float]] = []
    at_kink = []
    for i, g in enumerate(gens):
        if g.a > 0.0:
            p.append(min(max((price - g.b) / (2.0 * g.a), g.p_min), g.p_max))
        elif g.b < price:
            p.append(g.p_max)
        elif g.b > price:
            p.append(g.p_min)
        else:
            p.append(None)
            at_kink.append(i)
    if at_kink:
        # linear-cost units at the clearing price share what is left in proportion to their range
        remainder = total_demand - sum(v for v in p if v is not None) - sum(gens[i].p_min for i in at_kink)
        headroom = sum(gens[i].p_max - gens[i].p_min for i in at_kink)
        for i in at_kink:
            g = gens[i]
            share = (g.p_max - g.p_min) / headroom if headroom > 0.0 else 0.0
            p[i] = min(max(g.p_min + remainder * share, g.p_min), g.p_max)
    return p


def _solution(gens: Sequence[GeneratorParams], p: Sequence[float], price: float) -> DispatchSolution:
    return DispatchSolution(p=tuple(p), price=price, total_cost=sum(g.cost(v) for g, v in zip(gens, p)))


def solve_centralized_ed(gens: Sequence[GeneratorParams], total_demand: float) -> DispatchSolution:
    """Minimum-cost dispatch of `gens` meeting `total_demand`.

    The price is the smallest λ whose supply covers the demand. Raises InfeasibleDemand when the
    demand lies outside the generation limits and UnboundedPrice when only linear-cost units remain
    and the demand sits on a flat stretch of the supply curve.
    """
    if not gens:
        raise InfeasibleDemand(total_demand, "sum of p_max", 0.0)
    low = sum(g.p_min for g in gens)
    high = sum(g.p_max for g in gens)
    slack = BOUND_TOL * (1.0 + abs(total_demand))
    if total_demand < low - slack:
        raise InfeasibleDemand(total_demand, "sum of p_min", low)
    if total_demand > high + slack:
        raise InfeasibleDemand(total_demand, "sum of p_max", high)
    if total_demand <= low + RESIDUAL_TOL:
        return _solution(gens, [g.p_min for g in gens], min(g.marginal_cost(g.p_min) for g in gens))
    if total_demand >= high - RESIDUAL_TOL:
        return _solution(gens, [g.p_max for g in gens], max(g.marginal_cost(g.p_max) for g in gens))

    lo = min(g.marginal_cost(g.p_min) for g in gens) - 1.0
    hi = max(g.marginal_cost(g.p_max) for g in gens) + 1.0
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        supply = _upper_supply(gens, mid)
        if supply >= total_demand:
            hi = mid
            if supply - total_demand <= RESIDUAL_TOL and all(g.a > 0.0 for g in gens):
                break
        else:
            lo = mid

    price = hi
    kinks = [g.b for g in gens if g.a == 0.0 and lo < g.b <= hi]
    if kinks:
        price = min(kinks)
    if all(g.a == 0.0 for g in gens) and abs(_upper_supply(gens, price) - total_demand) <= RESIDUAL_TOL:
        raise UnboundedPrice(i for i, g in enumerate(gens) if g.a == 0.0)

    p = _dispatch(gens, price, total_demand)
    logger.debug("Cleared %d generators at price %.12g, residual %.3g", len(gens), price, sum(p) - total_demand)
    return _solution(gens, p, price)


def solve_case(case: CaseData, total_demand: Optional[float] = None) -> DispatchSolution:
    """Dispatch the case's generators against `total_demand` (nominal total load by default)."""
    demand = case.total_load if total_demand is None else total_demand
    return solve_centralized_ed(case.generators, demand)


def kkt_residual(gens: Sequence[GeneratorParams], p: Sequence[float], price: float) -> float:
    """Largest distance of a quadratic-cost unit's output from clip((λ - b)/(2a), p_min, p_max)."""
    residual = 0.0
    for g, value in zip(gens, p):
        if g.a > 0.0:
            target = min(max((price - g.b) / (2.0 * g.a), g.p_min), g.p_max)
            residual = max(residual, abs(value - target))
    return residual


def oracle_gap(case: CaseData, trace: SimTrace) -> OracleGap:
    """Deviation of the final state from the oracle at the final demand.

    Prices are per unit internally; the price gap is divided by `base_mva` to report $/MWh.
    """
    solution = solve_case(case, float(trace.columns["total_demand"][-1]))
    p_gap = float(np.max(np.abs(trace.generator_outputs() - np.array(solution.p)))) if solution.p else 0.0
    return OracleGap(power=p_gap, price=abs(trace.final_lambda_mean - solution.price) / case.base_mva)


def fixed_point_state(case: CaseData, cfg: SimulationConfig, solution: DispatchSolution) -> InitialState:
    """Starting point that already sits at the optimum: every agent shares λ* and zero mismatch."""
    layout = build_layout(case)
    n = layout.size
    p_g = np.zeros(n)
    p_g[list(layout.generator_agents)] = solution.p
    w = solution.price / (cfg.penalty(n, case.base_mva) * n)
    return InitialState(p_g=list(p_g), p_gd_bar=[0.0] * n, w=[w] * n)


class CentralizedExecutor(RoundExecutor):
    """Exact coordinator: the network mismatch is averaged exactly and one dual variable is shared."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        s = self._state
        self.n_est = np.full(self.layout.size, float(self.layout.size))
        self.mismatch = float(np.mean(s.p_g - s.p_d))
        self.w = float(np.mean(s.w))

    def step(self, iteration: int, p_d_new: np.ndarray) -> AgentArrays:
        s = self._state
        p_g = self.primal(s.p_g / self.n_est - self.mismatch + self.w)
        self.mismatch = float(np.mean(p_g - p_d_new))
        self.w -= self.mismatch
        n = self.layout.size
        w = np.full(n, self.w)
        self._state = AgentArrays(p_g, p_d_new.copy(), np.full(n, self.mismatch), w, self.rho * self.n_est * w)
        return self._state


def reference_admm(
    case: CaseData,
    cfg: SimulationConfig,
    profile: Optional[IrradianceProfile] = None,
    initial: Optional[InitialState] = None,
) -> SimTrace:
    """Centralized ADMM over the same case, schedule and initialization as the distributed run."""
    return simulate(case, cfg, CentralizedExecutor, profile=profile, initial=initial, require_mixing=False)
