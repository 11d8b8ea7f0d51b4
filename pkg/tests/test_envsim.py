import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from battery_ppo import envsim
from battery_ppo.envsim import ArbitrageEnv, BatteryParams, EnvState, FeasibleRange, feasible_range, reset, step
from battery_ppo.errors import ContractViolation, NumericError

BP = BatteryParams()


def test_feasible_range_at_bounds():
    assert feasible_range(0.9, BP) == FeasibleRange(0.0, 1.0)
    assert feasible_range(0.1, BP) == FeasibleRange(-1.0, 0.0)


def test_feasible_range_midpoint():
    r = feasible_range(0.5, BP)
    assert r.p_c_bar == pytest.approx(-0.8421052631578947, abs=1e-15)
    assert r.p_d_bar == pytest.approx(0.76, abs=1e-15)


def test_feasible_range_rejects_out_of_bounds_soc():
    with pytest.raises(ContractViolation):
        feasible_range(0.95, BP)
    with pytest.raises(ContractViolation):
        feasible_range(0.05, BP)


@given(a=st.floats(0.1, 0.9), b=st.floats(0.1, 0.9))
def test_feasible_range_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    r_lo, r_hi = feasible_range(lo, BP), feasible_range(hi, BP)
    # discharge headroom grows with SoC, charge headroom |p_c_bar| shrinks
    assert r_lo.p_d_bar <= r_hi.p_d_bar
    assert abs(r_lo.p_c_bar) >= abs(r_hi.p_c_bar)


def test_discharge_hand_case():
    s, reward, info = step(reset(BP), 0.4, 100.0, BP)
    assert info.discharging_revenue_usd == pytest.approx(2000.0)
    assert info.degradation_cost_usd == pytest.approx(-200.0)
    assert info.charging_cost_usd == 0.0
    assert reward == pytest.approx(1.8)
    assert s.soc == pytest.approx(0.5 - 20 / 95, abs=1e-12)
    assert round(s.soc, 6) == 0.289474
    assert not info.clamped and info.a_eff == 0.4


def test_zero_action_is_noop():
    s0 = reset(BP)
    s, reward, info = step(s0, 0.0, 80.0, BP)
    assert s.soc == s0.soc and reward == 0.0 and info.profit_usd == 0.0
    assert s.t == 1


def test_clamped_at_full_charge():
    s0 = EnvState(0, 0.9)
    s, reward, info = step(s0, -0.5, 30.0, BP)
    assert info.clamped and info.a_eff == 0.0
    assert s.soc == 0.9 and reward == 0.0


def test_charge_hand_case():
    s, reward, info = step(reset(BP), -0.5, 40.0, BP)
    assert info.charging_cost_usd == pytest.approx(-1000.0)
    assert info.degradation_cost_usd == pytest.approx(-250.0)
    assert s.soc == pytest.approx(0.5 + 0.95 * 25 / 100)
    assert reward == pytest.approx(-1.25)


def test_over_range_discharge_is_clamped_to_bound():
    s, _, info = step(reset(BP), 1.0, 50.0, BP)
    assert info.clamped and info.a_eff == pytest.approx(0.76)
    assert s.soc == pytest.approx(0.1, abs=1e-12)


def test_non_finite_action_rejected():
    with pytest.raises(NumericError):
        step(reset(BP), math.nan, 10.0, BP)
    with pytest.raises(NumericError):
        step(reset(BP), math.inf, 10.0, BP)


def test_negative_prices_accepted():
    s, reward, info = step(reset(BP), -0.2, -20.0, BP)
    assert info.charging_cost_usd == pytest.approx(200.0)
    assert reward == pytest.approx((200.0 - 100.0) * 1e-3)


def test_reset_defaults_and_determinism():
    s = reset(BP)
    assert s.soc == 0.5 and s.total_profit_usd == 0.0 and s.t == 0
    assert reset(BatteryParams(soc_init=0.9)).soc == 0.9
    assert reset(BP, 7) == reset(BP, 7)


@pytest.mark.parametrize("kw", [
    dict(soc_min=0.5, soc_max=0.4), dict(capacity_mwh=0.0), dict(e_step_mwh=-1.0),
    dict(eta_c=0.0), dict(eta_d=1.5), dict(deg_cost_per_mwh=-1.0), dict(soc_init=0.95),
])
def test_battery_params_validation(kw):
    with pytest.raises(ContractViolation):
        BatteryParams(**kw)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-100, 300)), min_size=1, max_size=60))
def test_random_walk_invariants(seq):
    s = reset(BP)
    for a, price in seq:
        rng_ = feasible_range(s.soc, BP)
        prev = s
        s, reward, info = step(s, a, price, BP)
        assert BP.soc_min <= s.soc <= BP.soc_max
        assert s.total_profit_usd == s.charging_cost_usd + s.discharging_revenue_usd + s.degradation_cost_usd
        assert reward == info.profit_usd * envsim.REWARD_SCALE
        if rng_.contains(a):
            assert info.a_eff == a and not info.clamped
        assert s.degradation_cost_usd <= prev.degradation_cost_usd


@given(frac=st.floats(0.01, 0.8), price=st.floats(0, 200), eta=st.floats(0.5, 1.0), deg=st.floats(0, 20))
def test_round_trip_never_profitable(frac, price, eta, deg):
    bp = BatteryParams(eta_c=eta, eta_d=eta, deg_cost_per_mwh=deg)
    s = EnvState(0, 0.1)
    s, _, info = step(s, -frac, price, bp)
    stored_drop = (s.soc - 0.1) * bp.capacity_mwh * bp.eta_d / bp.e_step_mwh
    s, _, _ = step(s, stored_drop, price, bp)
    assert s.soc == pytest.approx(0.1, abs=1e-9)
    if eta < 1 or deg > 0:
        assert s.total_profit_usd <= 1e-9


def test_env_wrapper_episode():
    prices = np.array([10.0, 90.0, 50.0])
    env = ArbitrageEnv(prices, prices / 90.0, BP)
    obs = env.reset()
    np.testing.assert_array_equal(obs, [0.5, 10.0 / 90.0])
    assert env.feasible_range() == feasible_range(0.5, BP)
    dones = [env.step(a)[2] for a in (-0.3, 0.6, 0.0)]
    assert dones == [False, False, True]
    with pytest.raises(ContractViolation):
        env.step(0.0)
    assert len(env) == 3
