"""Per-round scalar reward: accuracy delta with budget-overrun penalties."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidSpecError, NumericFailureError


@dataclass(frozen=True)
class RewardParams:
    """Latency/energy budgets and penalty exponents."""

    latency_budget: float  # T, seconds
    energy_budget: float  # E, joules
    alpha: float = 2.0
    beta: float = 2.0

    def __post_init__(self):
        if not self.latency_budget > 0:
            raise InvalidSpecError("latency_budget must be > 0")
        if not self.energy_budget > 0:
            raise InvalidSpecError("energy_budget must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidSpecError("penalty exponents must be >= 0")


def compute_reward(delta_acc: float, r_t: float, r_e: float, p: RewardParams) -> float:
    """delta_acc * (T/R_T)^(alpha if over budget) * (E/R_E)^(beta if over budget).

    Rounds inside both budgets pass the accuracy delta through unpenalized;
    overruns shrink its magnitude (sign preserved).
    """
    if not (math.isfinite(delta_acc) and math.isfinite(r_t) and math.isfinite(r_e)):
        raise NumericFailureError("non-finite reward inputs")
    if not (r_t > 0 and r_e > 0):
        raise InvalidSpecError("round costs must be positive")
    reward = delta_acc
    if r_t > p.latency_budget:
        reward *= (p.latency_budget / r_t) ** p.alpha
    if r_e > p.energy_budget:
        reward *= (p.energy_budget / r_e) ** p.beta
    return reward
