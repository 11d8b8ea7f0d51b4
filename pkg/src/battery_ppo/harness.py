"""Experiment runner: training with early stopping, evaluation, reports, and a DP oracle."""
from __future__ import annotations

import csv
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import data, envsim, numcore, policy, ppo
from .config import ExperimentConfig, dump_config
from .envsim import BatteryParams
from .errors import ContractViolation, NumericError, TrainingFailure
from .policy import HiddenState, NetworkParams
from .ppo import Case

METRIC_COLUMNS = ("charging_cost", "discharging_revenue", "degradation_cost", "total_profit")
REPORT_COLUMNS = ("case", "seed", "status") + METRIC_COLUMNS + (
    "updates", "best_update", "best_val_profit", "post_sellout_fraction")
CURVE_COLUMNS = ("update", "loss", "actor", "critic", "supervising", "train_profit", "val_profit")
TRAJECTORY_COLUMNS = ("t", "price", "soc", "mu", "a_eff", "clamped", "step_profit",
                      "cum_charging_cost", "cum_discharging_revenue", "cum_degradation_cost", "cum_profit")


class TrajectoryRow(NamedTuple):
    t: int
    price: float
    soc: float  # state of charge at the start of the step
    mu: float
    a_eff: float
    clamped: bool
    step_profit: float
    cum_charging_cost: float
    cum_discharging_revenue: float
    cum_degradation_cost: float
    cum_profit: float


@dataclass
class MetricsEntry:
    """Per-step (30-minute) averages in USD over one evaluated segment."""

    case: int = 0
    seed: int = 0
    status: str = "ok"
    charging_cost: float = 0.0
    discharging_revenue: float = 0.0
    degradation_cost: float = 0.0
    total_profit: float = 0.0
    updates: int = 0
    best_update: int = 0
    best_val_profit: float = 0.0
    post_sellout_fraction: float = 0.0
    message: str = ""
    curve: list = field(default_factory=list, repr=False)
    trajectory: list = field(default_factory=list, repr=False)
    params: NetworkParams | None = field(default=None, repr=False)


# --- evaluation -------------------------------------------------------------

def _rollout(mu_fn: Callable, prices_usd, prices_norm, battery: BatteryParams):
    env = envsim.ArbitrageEnv(prices_usd, prices_norm, battery)
    obs = env.reset()
    rows = []
    for t in range(len(env)):
        soc = env.state.soc
        mu = float(mu_fn(obs))
        obs, _, _, info = env.step(mu)
        s = env.state
        rows.append(TrajectoryRow(
            t, float(env.prices_usd[t]), soc, mu, info.a_eff, info.clamped, info.profit_usd,
            s.charging_cost_usd, s.discharging_revenue_usd, s.degradation_cost_usd, s.total_profit_usd,
        ))
    T = len(env)
    s = env.state
    entry = MetricsEntry(
        charging_cost=s.charging_cost_usd / T,
        discharging_revenue=s.discharging_revenue_usd / T,
        degradation_cost=s.degradation_cost_usd / T,
        total_profit=s.total_profit_usd / T,
        post_sellout_fraction=post_sellout_fraction(rows, battery),
        trajectory=rows,
    )
    return entry, rows


def evaluate(params: NetworkParams, prices_usd, prices_norm, battery: BatteryParams | None = None):
    """Deterministic rollout of the policy mean. Returns ``(MetricsEntry, trajectory rows)``."""
    battery = battery or BatteryParams()
    hidden = [HiddenState.zeros(params.hidden_size)]

    def mu_fn(obs):
        mu, _, hidden[0], _ = policy.forward(obs, hidden[0], params)
        return mu

    return _rollout(mu_fn, prices_usd, prices_norm, battery)


def evaluate_policy(mu_fn: Callable, prices_usd, prices_norm=None, battery: BatteryParams | None = None):
    """Like :func:`evaluate` for an arbitrary ``obs -> action`` callable."""
    prices_usd = np.asarray(prices_usd, dtype=np.float64)
    if prices_norm is None:
        prices_norm = np.zeros_like(prices_usd)
    return _rollout(mu_fn, prices_usd, prices_norm, battery or BatteryParams())


def post_sellout_fraction(rows, battery: BatteryParams) -> float:
    """Grid energy moved after the initial discharge, as a fraction of ``e_step * T``.

    The initial discharge ends at the first step that reaches ``soc_min`` or
    at the first charging step, whichever comes first.
    """
    if not rows:
        return 0.0
    end = len(rows)
    for r in rows:
        soc_after = r.soc - max(r.a_eff, 0.0) * battery.e_step_mwh / (battery.eta_d * battery.capacity_mwh)
        if r.a_eff < 0:
            end = r.t
            break
        if soc_after <= battery.soc_min + 1e-12:
            end = r.t + 1
            break
    energy = sum(abs(r.a_eff) for r in rows[end:]) * battery.e_step_mwh
    return energy / (battery.e_step_mwh * len(rows))


# --- data preparation -------------------------------------------------------

@dataclass
class Segments:
    train: data.PriceSeries
    val: data.PriceSeries
    test: data.PriceSeries
    price_max: float

    def norm(self, seg: data.PriceSeries) -> np.ndarray:
        return data.normalize(seg, self.price_max)


def load_segments(config: ExperimentConfig) -> Segments:
    if config.data.csv:
        series = data.load_csv(config.data.csv)
    else:
        series = data.synth_prices(config.data.length, config.data.seed, config.synth)
    sp = config.split
    train, val, test = data.chrono_split(series, sp.n_train, sp.n_val, sp.n_test)
    return Segments(train, val, test, series.price_max)


def input_standardization(train_norm: np.ndarray, battery: BatteryParams):
    """Fixed (shift, scale) mapping SoC and training prices to roughly unit range."""
    std = float(np.std(train_norm))
    shift = np.array([0.5 * (battery.soc_min + battery.soc_max), float(np.mean(train_norm))])
    scale = np.array([0.5 * (battery.soc_max - battery.soc_min), std if std > 0 else 1.0])
    return shift, scale


def initial_params(config: ExperimentConfig, segs: Segments, rng: np.random.Generator) -> NetworkParams:
    net = NetworkParams.init(rng, config.policy.hidden_size, config.policy.sigma)
    if config.policy.standardize_inputs:
        shift, scale = input_standardization(segs.norm(segs.train), config.battery)
        net = replace(net, obs_shift=shift, obs_scale=scale)
    return net


# --- training ---------------------------------------------------------------

def _write_row(fh, row):
    fh.write(",".join(_fmt(v) for v in row) + "\n")
    fh.flush()


def run_case(config: ExperimentConfig, case: int, seed: int, segments: Segments | None = None,
             curve_path=None) -> MetricsEntry:
    """Train one (case, seed) run with early stopping and evaluate it on the test segment.

    The deterministic validation profit is measured before training and
    after every update; the best-scoring parameters are kept and training
    stops after ``run.patience`` updates without strict improvement. A
    non-finite loss ends the run with ``status == "failed"``; the metrics
    are then NaN. With ``curve_path`` the training curve is streamed to
    that CSV as it is produced.
    """
    config.validate()
    case = Case(case)
    segs = segments or load_segments(config)
    bp = config.battery
    pcfg = replace(config.ppo, case=case)
    rng = np.random.default_rng(seed)
    net = initial_params(config, segs, rng)
    adam = numcore.AdamState(lr=pcfg.lr)
    train_env = envsim.ArbitrageEnv(segs.train.prices_usd, segs.norm(segs.train), bp)
    val_usd, val_norm = segs.val.prices_usd, segs.norm(segs.val)

    best_val = evaluate(net, val_usd, val_norm, bp)[0].total_profit
    best_net, best_update, stale = net, 0, 0
    curve = []
    status, message = "ok", ""
    fh = None
    if curve_path is not None:
        fh = open(curve_path, "w")
        fh.write(",".join(CURVE_COLUMNS) + "\n")
    row = (0, math.nan, math.nan, math.nan, math.nan, math.nan, best_val)
    curve.append(row)
    if fh:
        _write_row(fh, row)
    u = 0
    try:
        for u in range(1, config.run.max_updates + 1):
            buf = ppo.collect_rollout(train_env, net, pcfg, rng)
            train_profit = buf.profit_usd / len(buf)
            net, adam, diag = ppo.update(net, buf, pcfg, adam, rng)
            val = evaluate(net, val_usd, val_norm, bp)[0].total_profit
            row = (u, diag.loss, diag.actor, diag.critic, diag.supervising, train_profit, val)
            curve.append(row)
            if fh:
                _write_row(fh, row)
            if val > best_val:
                best_val, best_net, best_update, stale = val, net, u, 0
            else:
                stale += 1
                if stale >= config.run.patience:
                    break
    except (TrainingFailure, NumericError) as exc:
        status, message = "failed", str(exc)
    finally:
        if fh:
            fh.close()

    entry, _ = evaluate(best_net, segs.test.prices_usd, segs.norm(segs.test), bp)
    if status != "ok":
        for name in METRIC_COLUMNS + ("post_sellout_fraction",):
            setattr(entry, name, math.nan)
    entry.case, entry.seed, entry.status, entry.message = int(case), int(seed), status, message
    entry.updates, entry.best_update, entry.best_val_profit = u, best_update, best_val
    entry.curve, entry.params = curve, best_net
    return entry


def _run_job(args):
    config, case, seed, out_dir = args
    curve_path = None if out_dir is None else Path(out_dir) / f"curve_{case}_{seed}.csv"
    return run_case(config, case, seed, curve_path=curve_path)


def run_all(config: ExperimentConfig, out_dir=None, workers: int = 1) -> list[MetricsEntry]:
    """Every (case, seed) pair of the config, in case-major order.

    Runs are independent, so ``workers > 1`` distributes them over
    processes; the result order and contents do not depend on it.
    """
    config.validate()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(config, c, s, out_dir) for c in config.run.cases for s in config.run.seeds]
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# --- reports ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_metrics_csv(entries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for e in entries:
            w.writerow([_fmt(getattr(e, c)) for c in REPORT_COLUMNS])


def read_metrics_csv(path) -> list[MetricsEntry]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for c in REPORT_COLUMNS:
                v = row[c]
                if c == "status":
                    kw[c] = v
                elif c in ("case", "seed", "updates", "best_update"):
                    kw[c] = int(v)
                else:
                    kw[c] = float(v)
            out.append(MetricsEntry(**kw))
    return out


def write_trajectory_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_curve_csv(curve, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in curve:
            w.writerow([_fmt(v) for v in r])


def format_table(entries) -> str:
    """Fixed-width table of per-step averages: one row per run, then per-case medians."""
    head = f"{'case':>5} {'seed':>5} {'status':>7}" + "".join(f" {c:>20}" for c in METRIC_COLUMNS)
    lines = ["Results (30-minute averages, USD)", head, "-" * len(head)]
    for e in entries:
        lines.append(f"{e.case:>5} {e.seed:>5} {e.status:>7}"
                     + "".join(f" {getattr(e, c):>20.3f}" for c in METRIC_COLUMNS))
    cases = sorted({e.case for e in entries})
    if cases:
        lines.append("-" * len(head))
    for c in cases:
        ok = [e for e in entries if e.case == c and e.status == "ok"]
        if not ok:
            lines.append(f"{c:>5} {'median':>5} {'n/a':>7}")
            continue
        meds = [statistics.median(getattr(e, m) for e in ok) for m in METRIC_COLUMNS]
        lines.append(f"{c:>5} {'med':>5} {len(ok):>7}" + "".join(f" {m:>20.3f}" for m in meds))
    return "\n".join(lines) + "\n"


def emit_report(entries, out_dir, config: ExperimentConfig | None = None) -> Path:
    """Write ``metrics.csv``, ``table.txt`` and, per run, curve/trajectory CSVs and a checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(entries, out / "metrics.csv")
    (out / "table.txt").write_text(format_table(entries))
    if config is not None:
        (out / "config.txt").write_text(dump_config(config))
    for e in entries:
        tag = f"{e.case}_{e.seed}"
        if e.curve:
            write_curve_csv(e.curve, out / f"curve_{tag}.csv")
        if e.trajectory:
            write_trajectory_csv(e.trajectory, out / f"trajectory_{tag}.csv")
        if e.params is not None:
            policy.save_checkpoint(e.params, out / f"checkpoint_{tag}.bin")
    return out / "metrics.csv"


# --- dynamic-programming oracle ---------------------------------------------

@dataclass
class OracleResult:
    profit_usd: float  # optimum of the lattice model from soc_init
    actions: np.ndarray  # best candidate against the lattice value function, one per step
    replay_profit_usd: float  # those actions replayed through the exact environment
    soc_grid: np.ndarray
    action_grid: np.ndarray

    @property
    def cell_soc(self) -> float:
        return float(self.soc_grid[1] - self.soc_grid[0])


DEFAULT_ORACLE_GUARD = 5_000_000


def dp_oracle(prices_usd, battery: BatteryParams | None = None, soc_grid_size: int = 21,
              action_grid_size: int = 21, guard: int = DEFAULT_ORACLE_GUARD) -> OracleResult:
    """Backward induction on an SoC lattice.

    At each state the candidate actions are the ``action_grid_size``-point
    lattice on [-1, 1] plus, for every SoC lattice point within one step's
    reach, the action that lands exactly on it. Every candidate goes through
    :func:`envsim.step`, so step profits and next SoCs are exact; the value
    of the next SoC is linearly interpolated between lattice points. The
    result is exact whenever the true value function is piecewise linear on
    the lattice (flat prices, the two-step hand cases) and otherwise stays
    within about one lattice cell's energy value of the continuous optimum.

    The action sequence is rebuilt forward from the true state, picking the
    best candidate against the interpolated values, and replayed.
    Refuses when ``T * soc_grid_size * (soc_grid_size + action_grid_size)``
    exceeds ``guard``.
    """
    bp = battery or BatteryParams()
    prices = np.asarray(prices_usd, dtype=np.float64)
    T = len(prices)
    if soc_grid_size < 2 or action_grid_size < 2:
        raise ContractViolation("grid sizes must be >= 2")
    if T == 0:
        raise ContractViolation("empty price segment")
    work = T * soc_grid_size * (soc_grid_size + action_grid_size)
    if work > guard:
        raise ContractViolation(
            f"oracle lattice too large: {T} steps x {soc_grid_size} SoC x "
            f"({soc_grid_size} + {action_grid_size}) candidate actions = {work} step evaluations "
            f"(guard {guard})"
        )
    soc_grid = np.linspace(bp.soc_min, bp.soc_max, soc_grid_size)
    action_grid = np.linspace(-1.0, 1.0, action_grid_size)
    e, cap = bp.e_step_mwh, bp.capacity_mwh

    def candidates(soc):
        up = -(soc_grid - soc) * cap / (bp.eta_c * e)  # charge to a higher lattice point
        down = (soc - soc_grid) * cap * bp.eta_d / e  # discharge to a lower one
        hit = np.where(soc_grid > soc, up, down)
        return np.concatenate([action_grid, hit[np.abs(hit) <= 1.0]])

    def q_values(soc, price, V_next):
        st = envsim.EnvState(0, float(soc))
        acts = candidates(soc)
        q = np.empty(len(acts))
        for k, a in enumerate(acts):
            nxt, _, info = envsim.step(st, a, price, bp)
            q[k] = info.profit_usd + np.interp(nxt.soc, soc_grid, V_next)
        return acts, q

    # values[t] is the value-to-go on the lattice before step t
    values = np.zeros((T + 1, soc_grid_size))
    for t in range(T - 1, 0, -1):
        for i, s in enumerate(soc_grid):
            values[t, i] = q_values(s, prices[t], values[t + 1])[1].max()
    profit = float(q_values(bp.soc_init, prices[0], values[1])[1].max())

    seq = np.empty(T)
    state = envsim.reset(bp)
    for t in range(T):
        acts, q = q_values(state.soc, prices[t], values[t + 1])
        seq[t] = acts[int(np.argmax(q))]
        state, _, _ = envsim.step(state, seq[t], prices[t], bp)
    return OracleResult(profit, seq, state.total_profit_usd, soc_grid, action_grid)


def oracle_slack_usd(result: OracleResult, prices_usd, battery: BatteryParams | None = None) -> float:
    """Energy value of one SoC lattice cell at the segment's highest absolute price."""
    bp = battery or BatteryParams()
    return result.cell_soc * bp.capacity_mwh * float(np.max(np.abs(prices_usd)))
