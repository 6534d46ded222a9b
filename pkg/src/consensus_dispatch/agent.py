"""One dispatch agent: a quadratic-cost generator (possibly null) plus a local load.

Each round an agent runs four local updates, reading only its own state and the previous-round
messages of its neighbors:

1. primal update of its generation setpoint,
2. dynamic-consensus update of its estimate of the average power mismatch,
3. consensus update of its scaled dual variable w,
4. local price λ = ρ·N·w (never transmitted).
"""

from typing import Dict, Iterable, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from .errors import MissingNeighborMessage, NonPositiveRho
from .models import GeneratorParams, NeighborMessage

WeightRow = Tuple[float, Dict[int, float]]
"""Own weight a_ii and neighbor weights a_ij."""


class AgentState(BaseModel):
    """Primal, dual and estimate variables of one agent."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    agent_id: int
    p_g: float = Field(..., description="Generation setpoint")
    p_d: float = Field(..., description="Local demand")
    p_gd_bar: float = Field(..., description="Estimate of the network-average power mismatch")
    w: float = Field(..., description="Scaled dual estimate")
    lambda_: float = Field(..., alias="lambda", description="Local price estimate")
    n_est: int = Field(..., ge=1, description="Discovered number of agents")
    rho: float = Field(..., description="Penalty parameter")

    def message(self) -> NeighborMessage:
        return NeighborMessage(sender_id=self.agent_id, p_gd_bar=self.p_gd_bar, w=self.w)


def _check_rho(rho: float) -> None:
    if rho <= 0.0:
        raise NonPositiveRho(f"penalty must be positive, got {rho}")


def _neighbor_values(agent_id: int, msgs: Iterable[NeighborMessage], weights: WeightRow) -> Dict[int, NeighborMessage]:
    by_sender = {msg.sender_id: msg for msg in msgs}
    missing = set(weights[1]) - set(by_sender)
    if missing:
        raise MissingNeighborMessage(agent_id, missing)
    return by_sender


def _mix(own: float, weights: WeightRow, values: Dict[int, float]) -> float:
    a_ii, row = weights
    total = a_ii * own
    for j in sorted(row):
        total += row[j] * values[j]
    return total


def local_primal_update(s: AgentState, g: GeneratorParams) -> float:
    """Closed-form minimizer of the local augmented cost, clipped to the generator limits."""
    _check_rho(s.rho)
    n = s.n_est
    psi = s.p_g / n - s.p_gd_bar + s.w
    unclipped = (n * s.rho * psi - g.b) / (2.0 * g.a + s.rho)
    return min(max(unclipped, g.p_min), g.p_max)


def update_mismatch_estimate(
    s: AgentState,
    msgs: Iterable[NeighborMessage],
    weights: WeightRow,
    p_gd_new: float,
    p_gd_old: float,
) -> float:
    """Dynamic consensus on the average mismatch; the local mismatch change enters as the bias."""
    by_sender = _neighbor_values(s.agent_id, msgs, weights)
    mixed = _mix(s.p_gd_bar, weights, {j: m.p_gd_bar for j, m in by_sender.items()})
    return mixed + (p_gd_new - p_gd_old)


def update_dual(s: AgentState, msgs: Iterable[NeighborMessage], weights: WeightRow, p_gd_bar_new: float) -> float:
    """Consensus on w, pulled down by this round's mismatch estimate."""
    by_sender = _neighbor_values(s.agent_id, msgs, weights)
    return _mix(s.w, weights, {j: m.w for j, m in by_sender.items()}) - p_gd_bar_new


def update_price(w: float, rho: float, n: int) -> float:
    return rho * n * w


def agent_round(
    s: AgentState,
    g: GeneratorParams,
    msgs: Sequence[NeighborMessage],
    weights: WeightRow,
    p_d_new: float,
) -> Tuple[AgentState, NeighborMessage]:
    """Run one full round and return the new state plus the message to send next round."""
    p_g_new = local_primal_update(s, g)
    p_gd_bar_new = update_mismatch_estimate(s, msgs, weights, p_g_new - p_d_new, s.p_g - s.p_d)
    w_new = update_dual(s, msgs, weights, p_gd_bar_new)
    new_state = s.model_copy(
        update={
            "p_g": p_g_new,
            "p_d": p_d_new,
            "p_gd_bar": p_gd_bar_new,
            "w": w_new,
            "lambda_": update_price(w_new, s.rho, s.n_est),
        }
    )
    return new_state, new_state.message()


def initial_price_range(gens: Iterable[GeneratorParams]) -> Tuple[float, float]:
    """Marginal-cost range (min b, max 2a·p_max + b) over the non-null generators."""
    real = [g for g in gens if not g.is_null]
    if not real:
        return 0.0, 0.0
    return min(g.b for g in real), max(g.marginal_cost(g.p_max) for g in real)
