"""Battery arbitrage environment.

Actions are dimensionless in [-1, 1]: negative charges, positive discharges.
``|a| * e_step_mwh`` is the energy at the grid meter; efficiency losses are
applied inside the battery. Out-of-range actions are clamped to the feasible
range for the current state of charge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericError

# reward = step profit in USD times this factor
REWARD_SCALE = 1e-3


@dataclass(frozen=True)
class BatteryParams:
    capacity_mwh: float = 100.0
    e_step_mwh: float = 50.0
    eta_c: float = 0.95
    eta_d: float = 0.95
    soc_min: float = 0.1
    soc_max: float = 0.9
    deg_cost_per_mwh: float = 10.0
    soc_init: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.soc_min < self.soc_max <= 1.0:
            raise ContractViolation(f"need 0 <= soc_min < soc_max <= 1, got {self.soc_min}, {self.soc_max}")
        if self.capacity_mwh <= 0 or self.e_step_mwh <= 0:
            raise ContractViolation("capacity_mwh and e_step_mwh must be positive")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ContractViolation(f"efficiencies must lie in (0, 1], got {self.eta_c}, {self.eta_d}")
        if self.deg_cost_per_mwh < 0:
            raise ContractViolation("deg_cost_per_mwh must be non-negative")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise ContractViolation(f"soc_init {self.soc_init} outside [{self.soc_min}, {self.soc_max}]")


@dataclass(frozen=True)
class FeasibleRange:
    p_c_bar: float
    p_d_bar: float

    def __post_init__(self):
        if not -1.0 <= self.p_c_bar <= 0.0 <= self.p_d_bar <= 1.0:
            raise ContractViolation(f"invalid feasible range ({self.p_c_bar}, {self.p_d_bar})")

    def contains(self, a: float) -> bool:
        return self.p_c_bar <= a <= self.p_d_bar


@dataclass(frozen=True)
class EnvState:
    t: int
    soc: float
    charging_cost_usd: float = 0.0
    discharging_revenue_usd: float = 0.0
    degradation_cost_usd: float = 0.0

    @property
    def total_profit_usd(self) -> float:
        return self.charging_cost_usd + self.discharging_revenue_usd + self.degradation_cost_usd


@dataclass(frozen=True)
class StepInfo:
    a_eff: float
    clamped: bool
    charging_cost_usd: float
    discharging_revenue_usd: float
    degradation_cost_usd: float

    @property
    def profit_usd(self) -> float:
        return self.charging_cost_usd + self.discharging_revenue_usd + self.degradation_cost_usd


def feasible_range(soc: float, params: BatteryParams) -> FeasibleRange:
    if not params.soc_min <= soc <= params.soc_max:
        raise ContractViolation(f"soc {soc} outside [{params.soc_min}, {params.soc_max}]")
    cap, e = params.capacity_mwh, params.e_step_mwh
    p_c = -min(1.0, (params.soc_max - soc) * cap / (params.eta_c * e))
    p_d = min(1.0, (soc - params.soc_min) * cap * params.eta_d / e)
    # -0.0 would make range comparisons print oddly; normalise it
    return FeasibleRange(p_c + 0.0, p_d + 0.0)


def reset(params: BatteryParams, t0: int = 0) -> EnvState:
    return EnvState(t=t0, soc=params.soc_init)


def step(state: EnvState, action: float, price_usd_per_mwh: float, params: BatteryParams):
    """Apply one action. Returns ``(next_state, reward, info)``."""
    action = float(action)
    if not math.isfinite(action):
        raise NumericError(f"non-finite action {action}")
    rng_ = feasible_range(state.soc, params)
    a_eff = min(max(action, rng_.p_c_bar), rng_.p_d_bar)
    clamped = a_eff != action
    e = params.e_step_mwh
    cap = params.capacity_mwh
    soc = state.soc
    charge = revenue = 0.0
    if a_eff < 0:
        energy = -a_eff * e
        soc = soc + params.eta_c * energy / cap
        charge = -price_usd_per_mwh * energy
    elif a_eff > 0:
        energy = a_eff * e
        soc = soc - energy / (params.eta_d * cap)
        revenue = price_usd_per_mwh * energy
    else:
        energy = 0.0
    # rounding at a saturated bound can overshoot by one ulp
    soc = min(max(soc, params.soc_min), params.soc_max)
    degradation = -params.deg_cost_per_mwh * energy
    info = StepInfo(a_eff + 0.0, clamped, charge + 0.0, revenue, degradation + 0.0)
    nxt = EnvState(
        t=state.t + 1,
        soc=soc,
        charging_cost_usd=state.charging_cost_usd + info.charging_cost_usd,
        discharging_revenue_usd=state.discharging_revenue_usd + revenue,
        degradation_cost_usd=state.degradation_cost_usd + info.degradation_cost_usd,
    )
    return nxt, info.profit_usd * REWARD_SCALE, info


class ArbitrageEnv:
    """Episode wrapper over a price segment with a reset/step interface.

    Observations are ``(soc, normalized price)`` pairs. An episode covers the
    whole segment; ``done`` is set on the last step.
    """

    def __init__(self, prices_usd, prices_norm, params: BatteryParams | None = None):
        self.prices_usd = np.asarray(prices_usd, dtype=np.float64)
        self.prices_norm = np.asarray(prices_norm, dtype=np.float64)
        if self.prices_usd.shape != self.prices_norm.shape or self.prices_usd.ndim != 1:
            raise ContractViolation("price arrays must be 1-D and of equal length")
        if len(self.prices_usd) == 0:
            raise ContractViolation("empty price segment")
        self.params = params or BatteryParams()
        self.state = reset(self.params)

    def __len__(self):
        return len(self.prices_usd)

    def observation(self) -> np.ndarray:
        t = min(self.state.t, len(self) - 1)
        return np.array([self.state.soc, self.prices_norm[t]])

    def reset(self) -> np.ndarray:
        self.state = reset(self.params)
        return self.observation()

    def feasible_range(self) -> FeasibleRange:
        return feasible_range(self.state.soc, self.params)

    def step(self, action: float):
        t = self.state.t
        if t >= len(self):
            raise ContractViolation("episode already finished; call reset()")
        self.state, reward, info = step(self.state, action, self.prices_usd[t], self.params)
        done = self.state.t >= len(self)
        return self.observation(), reward, done, info
