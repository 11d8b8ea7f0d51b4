"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import filecmp
import math
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest

from battery_ppo import envsim, harness, numcore, policy, ppo
from battery_ppo.config import ExperimentConfig, parse_config_text
from battery_ppo.envsim import BatteryParams, FeasibleRange
from battery_ppo.policy import NetworkParams
from battery_ppo.ppo import Case, PpoConfig


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))
        assert ok, detail
    return emit


# 1 -------------------------------------------------------------------------

def test_criterion_1_gradient_suite(verdict):
    t0 = time.time()
    worst = 0.0
    cases = list(Case)
    for seed in range(24):
        r = np.random.default_rng(seed)
        H, T = int(r.integers(1, 5)), int(r.integers(1, 9))
        base = NetworkParams.init(r, hidden_size=H)
        base = base.with_tensors({k: r.normal(0, 0.8, v.shape) for k, v in base.to_dict().items()})
        cfg = PpoConfig(case=cases[seed % 3], c2=1.0, bptt_window=int(r.integers(0, T + 1)),
                        critic_target=("td", "gae")[seed % 2])
        bp = BatteryParams(soc_init=float(r.uniform(0.1, 0.9)))
        prices = r.uniform(0, 120, T)
        env = envsim.ArbitrageEnv(prices, prices / 120, bp)
        buf = ppo.collect_rollout(env, base, cfg, r)
        buf.compute_advantages(cfg.gamma, cfg.gae_lambda)
        batch = ppo.make_windows(buf, cfg.bptt_window, ppo.normalize_advantages(buf.advantages))
        rep = numcore.grad_check(
            lambda d: ppo.total_loss(base.with_tensors(d), batch, cfg),
            lambda d: ppo.loss_and_grad(base.with_tensors(d), batch, cfg)[2],
            base.to_dict(), step=1e-5, tolerance=1e-4,
        )
        worst = max(worst, rep.max_rel_error)
    elapsed = time.time() - t0
    verdict(1, "total-loss gradient vs central differences on 24 toy instances",
            worst < 1e-4 and elapsed < 60, f"max rel error {worst:.2e}, {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------

def test_criterion_2_supervising_semantics(verdict):
    r = np.random.default_rng(2)
    n = 10_000
    p_c = -r.uniform(0, 1, n)
    p_d = r.uniform(0, 1, n)
    inside = p_c + r.uniform(0, 1, n) * (p_d - p_c)
    below = p_c - r.uniform(1e-6, 1.0, n)
    above = p_d + r.uniform(1e-6, 1.0, n)
    ok_in = np.all(ppo.supervising_term(inside, (p_c, p_d)) == 0.0)
    ok_out = np.all(ppo.supervising_term(below, (p_c, p_d)) > 0) and np.all(ppo.supervising_term(above, (p_c, p_d)) > 0)
    h = 1e-7
    worst_slope = 0.0
    for b in (p_c, p_d):
        f0 = ppo.supervising_term(b, (p_c, p_d))
        for side in (h, -h):
            slope = (ppo.supervising_term(b + side, (p_c, p_d)) - f0) / side
            worst_slope = max(worst_slope, float(np.max(np.abs(slope))))
    ok_deriv = worst_slope <= 1e-6
    verdict(2, "supervising term zero inside, positive outside, flat at the boundaries",
            ok_in and ok_out and ok_deriv, f"max one-sided slope {worst_slope:.1e}")


# 3 -------------------------------------------------------------------------

def test_criterion_3_feasible_range_endpoints(verdict):
    bp = BatteryParams()
    full = envsim.feasible_range(bp.soc_max, bp)
    empty = envsim.feasible_range(bp.soc_min, bp)
    verdict(3, "feasible range (0, 1) at full charge and (-1, 0) when empty",
            full == FeasibleRange(0.0, 1.0) and empty == FeasibleRange(-1.0, 0.0), f"{full}, {empty}")


# 4 -------------------------------------------------------------------------

def test_criterion_4_environment_accounting(verdict):
    bp = BatteryParams()
    r = np.random.default_rng(4)
    n = 100_000
    actions = r.uniform(-1.5, 1.5, n)
    prices = r.uniform(-20, 200, n)
    s = envsim.reset(bp)
    soc_ok, worst = True, 0.0
    for a, p in zip(actions, prices):
        prev = s
        s, reward, info = envsim.step(s, a, p, bp)
        soc_ok &= bp.soc_min <= s.soc <= bp.soc_max
        step_gap = abs(info.profit_usd - (info.charging_cost_usd + info.discharging_revenue_usd
                                          + info.degradation_cost_usd))
        total_gap = abs(s.total_profit_usd - (s.charging_cost_usd + s.discharging_revenue_usd
                                              + s.degradation_cost_usd))
        carry_gap = abs((s.total_profit_usd - prev.total_profit_usd) - info.profit_usd) / max(1.0, abs(s.total_profit_usd))
        worst = max(worst, step_gap, total_gap, carry_gap)
    verdict(4, "SoC bounds and ledger identity over 1e5 random steps",
            bool(soc_ok) and worst <= 1e-9, f"max gap {worst:.1e}")


# 5 -------------------------------------------------------------------------

def _short_trained_policy():
    cfg = parse_config_text(
        "data.length = 400\nsplit.n_train = 200\nsplit.n_val = 100\nsplit.n_test = 100\n"
        "policy.hidden_size = 8\nrun.max_updates = 15\nrun.patience = 15\n")
    return harness.run_case(cfg, 3, 0).params


def test_criterion_5_oracle_consistency(verdict):
    t0 = time.time()
    hand_bp = BatteryParams(eta_c=1.0, eta_d=1.0, deg_cost_per_mwh=0.0)
    hand = harness.dp_oracle([0.0, 100.0], hand_bp, 21, 21).profit_usd
    trained = _short_trained_policy()
    r = np.random.default_rng(5)
    bp = BatteryParams()
    violations, checked = 0, 0
    for _ in range(50):
        T = int(r.integers(1, 13))
        N, M = int(r.integers(2, 22)), int(r.integers(2, 22))
        prices = r.uniform(0, 150, T)
        res = harness.dp_oracle(prices, bp, N, M)
        slack = harness.oracle_slack_usd(res, prices, bp)
        mid = float(np.median(prices))
        policies = [
            lambda obs: 1.0 if obs[1] * 150 > mid else -1.0,  # greedy threshold on price
            lambda obs, g=np.random.default_rng(int(r.integers(1 << 30))): g.uniform(-1.5, 1.5),
        ]
        profits = [harness.evaluate_policy(f, prices, prices / 150, bp)[0].total_profit * T for f in policies]
        profits.append(harness.evaluate(trained, prices, prices / prices.max(), bp)[0].total_profit * T)
        for p in profits:
            checked += 1
            violations += p > res.profit_usd + slack + 1e-9
    elapsed = time.time() - t0
    verdict(5, "oracle hand case $5000 and upper bound over 50 random instances",
            hand == 5000.0 and violations == 0 and elapsed < 60,
            f"hand {hand}, {violations}/{checked} violations, {elapsed:.1f}s")


# 6 -------------------------------------------------------------------------

def test_criterion_6_directional_reproduction(verdict):
    t0 = time.time()
    cfg = ExperimentConfig()
    assert cfg.data.length == 2000 and (cfg.split.n_train, cfg.split.n_val, cfg.split.n_test) == (1000, 500, 500)
    assert len(cfg.run.seeds) >= 5
    entries = harness.run_all(cfg)
    by_case = {c: [e for e in entries if e.case == c] for c in (1, 2, 3)}
    med = {c: statistics.median(e.total_profit for e in by_case[c]) for c in by_case}
    c1_charge = statistics.median(e.charging_cost for e in by_case[1])
    c1_post = statistics.median(e.post_sellout_fraction for e in by_case[1])
    elapsed = time.time() - t0
    ok = (med[3] > med[2] > med[1] and abs(c1_charge) < 1.0 and c1_post < 0.05 and elapsed < 900
          and all(e.status == "ok" for e in entries))
    verdict(6, "median test profit Case 3 > Case 2 > Case 1 with the Case 1 sell-out signature", ok,
            f"medians {med[3]:.2f} > {med[2]:.2f} > {med[1]:.2f} $/step; Case 1 charging {c1_charge:.3f} $/step, "
            f"post-sellout energy {100 * c1_post:.2f}% of maximum; {elapsed:.0f}s")


# 7 -------------------------------------------------------------------------

SMALL = ("data.length = 600\nsplit.n_train = 300\nsplit.n_val = 150\nsplit.n_test = 150\n"
         "policy.hidden_size = 6\nrun.max_updates = 8\nrun.patience = 8\n")


def _same_run(a, b):
    same_curve = len(a.curve) == len(b.curve) and all(
        x == y or (math.isnan(x) and math.isnan(y)) for ra, rb in zip(a.curve, b.curve) for x, y in zip(ra, rb))
    same_params = all(np.array_equal(a.params.to_dict()[k], v) for k, v in b.params.to_dict().items())
    same_metrics = all(getattr(a, c) == getattr(b, c) for c in harness.METRIC_COLUMNS)
    return same_curve and same_params and same_metrics


def test_criterion_7_case_equivalences(verdict):
    cfg1 = parse_config_text(SMALL)
    cfg3 = replace(cfg1, ppo=replace(cfg1.ppo, c2=0.0))
    run1 = harness.run_case(cfg1, 1, 7)
    run3 = harness.run_case(cfg3, 3, 7)
    segs = harness.load_segments(cfg1)
    env = lambda: envsim.ArbitrageEnv(segs.train.prices_usd, segs.norm(segs.train), cfg1.battery)
    net = harness.initial_params(cfg1, segs, np.random.default_rng(7))
    net = replace(net, actor_b=np.array([0.8]))  # push means out of range so penalties would bite
    b1 = ppo.collect_rollout(env(), net, replace(cfg1.ppo, case=Case.CASE1), np.random.default_rng(1))
    b2 = ppo.collect_rollout(env(), net, replace(cfg1.ppo, case=Case.CASE2, penalty_coeff=0.0),
                             np.random.default_rng(1))
    b2p = ppo.collect_rollout(env(), net, replace(cfg1.ppo, case=Case.CASE2, penalty_coeff=1.0),
                              np.random.default_rng(1))
    rewards_same = np.array_equal(b1.rewards, b2.rewards)
    control = not np.array_equal(b1.rewards, b2p.rewards)
    verdict(7, "Case 3 with c2 = 0 trains like Case 1; Case 2 with zero penalty rewards like Case 1",
            _same_run(run1, run3) and rewards_same and control,
            f"training identical: {_same_run(run1, run3)}, rewards identical: {rewards_same}")


# 8 -------------------------------------------------------------------------

def test_criterion_8_determinism(verdict, tmp_path):
    cfg = parse_config_text(SMALL + "run.cases = 1,2,3\nrun.seeds = 0,1\n")
    for name in ("a", "b"):
        harness.emit_report(harness.run_all(cfg), tmp_path / name, cfg)
    names = ["metrics.csv", "table.txt"] + [f"{kind}_{c}_{s}.csv" for kind in ("curve", "trajectory")
                                            for c in (1, 2, 3) for s in (0, 1)]
    names += [f"checkpoint_{c}_{s}.bin" for c in (1, 2, 3) for s in (0, 1)]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    verdict(8, "repeated runs reproduce metrics.csv and all run artifacts bit for bit",
            not mismatch and not errors and "metrics.csv" in match, f"{len(match)} files identical")
