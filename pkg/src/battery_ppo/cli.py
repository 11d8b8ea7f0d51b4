"""Command-line entry point: ``train``, ``evaluate``, ``oracle`` and ``synth``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import data, harness, policy
from .config import ExperimentConfig, load_config
from .envsim import BatteryParams
from .errors import ConfigError, ContractViolation, DataError, TrainingFailure

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    run = cfg.run
    if args.case is not None:
        run = replace(run, cases=[args.case])
    if args.seed is not None:
        run = replace(run, seeds=[args.seed])
    if args.out is not None:
        run = replace(run, out_dir=args.out)
    cfg = replace(cfg, run=run).validate()
    entries = harness.run_all(cfg, out_dir=run.out_dir, workers=args.workers)
    harness.emit_report(entries, run.out_dir, cfg)
    print(harness.format_table(entries), end="")
    failed = [e for e in entries if e.status != "ok"]
    for e in failed:
        print(f"case {e.case} seed {e.seed} failed: {e.message}", file=sys.stderr)
    return EXIT_TRAINING if failed else EXIT_OK


def _battery(args) -> BatteryParams:
    return load_config(args.config).battery if args.config else BatteryParams()


def _cmd_evaluate(args) -> int:
    params = policy.load_checkpoint(args.checkpoint)
    series = data.load_csv(args.data)
    pmax = args.price_max if args.price_max is not None else series.price_max
    entry, rows = harness.evaluate(params, series.prices_usd, data.normalize(series, pmax), _battery(args))
    if args.trajectory:
        harness.write_trajectory_csv(rows, args.trajectory)
    for c in harness.METRIC_COLUMNS:
        print(f"{c} {getattr(entry, c):.6f}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    series = data.load_csv(args.data)
    res = harness.dp_oracle(series.prices_usd, _battery(args), args.soc_grid, args.action_grid,
                            guard=args.guard)
    print(f"profit_usd {res.profit_usd:.6f}")
    print(f"replay_profit_usd {res.replay_profit_usd:.6f}")
    print("actions " + " ".join(f"{a:g}" for a in res.actions))
    return EXIT_OK


def _cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    series = data.synth_prices(args.length, args.seed, cfg.synth)
    data.write_csv(series, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="battery-ppo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train and evaluate cases over seeds")
    t.add_argument("--config", help="flat key = value config file (defaults when omitted)")
    t.add_argument("--case", type=int, choices=(1, 2, 3))
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (overrides run.out_dir)")
    t.add_argument("--workers", type=int, default=1, help="parallel run processes")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("evaluate", help="deterministic evaluation of a checkpoint on a price CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--price-max", type=float, help="normalization constant (default: data max)")
    e.add_argument("--trajectory", help="write the trajectory CSV here")
    e.add_argument("--config", help="take battery.* settings from this config file")
    e.set_defaults(func=_cmd_evaluate)

    o = sub.add_parser("oracle", help="dynamic-programming profit bound on a price CSV")
    o.add_argument("--data", required=True)
    o.add_argument("--soc-grid", type=int, default=21)
    o.add_argument("--action-grid", type=int, default=21)
    o.add_argument("--guard", type=int, default=harness.DEFAULT_ORACLE_GUARD)
    o.add_argument("--config", help="take battery.* settings from this config file")
    o.set_defaults(func=_cmd_oracle)

    s = sub.add_parser("synth", help="write a synthetic price CSV")
    s.add_argument("--length", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="take synth.* settings from this config file")
    s.set_defaults(func=_cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingFailure as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
