"""Command line entry point: ``banker run|sweep|verify``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import BankerError
from .harness import ExperimentConfig, ExperimentError, run_experiment, sweep
from .verify import verify


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.override("master_seed", args.seed)
    if args.runs is not None:
        cfg = cfg.override("runs", args.runs)
    if getattr(args, "dump_actions", False):
        cfg = cfg.override("output.dump_actions", True)
    if args.out is not None:
        cfg = cfg.override("output.dir", args.out)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    stats, records, paths = run_experiment(cfg)
    if stats is None:
        print(f"T=0: wrote empty outputs to {paths['runs.csv'].parent}")
    else:
        print(f"{cfg.algorithm.kind}: {stats.runs} runs, T={cfg.algorithm.horizon}, "
              f"mean final regret {stats.mean_final:.4f} +- {stats.stderr_final:.4f}")
        print(f"outputs in {paths['runs.csv'].parent}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [v for v in args.values.split(",") if v != ""]
    if not values:
        raise SystemExit("--values needs at least one value")
    for value, mean, stderr in sweep(cfg, args.param, values):
        print(f"{args.param}={value}: mean final regret {mean:.4f} +- {stderr:.4f}")
    return 0


def cmd_verify(args) -> int:
    return verify(args.filter)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="banker", description="Banker-OMD bandits under delayed feedback.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings from the numerics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--runs", type=int, help="override the number of Monte-Carlo runs")
        p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.add_argument("--dump-actions", action="store_true", help="also write full x_t vectors to actions.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run an experiment for each value of one config key")
    common(p)
    p.add_argument("--param", required=True, help="dotted config path, e.g. environment.delays.d")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--filter", help="only properties whose name contains this text")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (BankerError, ExperimentError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
