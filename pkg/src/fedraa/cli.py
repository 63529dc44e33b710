"""Command-line entry point: ``fedraa run|sweep|ablate|verify-theorem2``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import bound_check, experiment
from .config import load_config
from .errors import ConfigError, FedRAAError

log = logging.getLogger("fedraa")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _load(args):
    cfg = load_config(args.config)
    seed = getattr(args, "seed", None)
    if seed is None and os.environ.get("FEDRAA_SEED"):
        seed = int(os.environ["FEDRAA_SEED"])
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    _, summary = experiment.run_experiment(cfg, args.out)
    print(experiment.format_table([summary], ("mode", "merges", "ticks_to_target", "final_loss", "final_accuracy", "q")))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = experiment.sweep(cfg, args.grid, args.out)
    keys = [experiment.parse_grid(g)[0] for g in args.grid]
    print(experiment.format_table(rows, keys + ["ticks_to_target", "ticks_to_target_accuracy", "final_accuracy"]))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    rows = experiment.run_ablation_suite(cfg, args.out)
    print(experiment.format_table(rows, experiment.ABLATION_FIELDS))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.n < args.m:
        raise ConfigError("need n >= m", "n")
    trials = bound_check.verify(args.n, args.m, args.trials, args.seed)
    checks = {
        "sorted K == exhaustive K (any covering assignment)": sum(t.sorted_is_optimal for t in trials),
        "sorted K == exhaustive K (same block shape)": sum(t.sorted_is_block_optimal for t in trials),
        "online max cost == sorted K": sum(t.online_matches_sorted for t in trials),
        "online max cost == exhaustive K": sum(t.online_matches_opt for t in trials),
        "online max cost <= sorted K": sum(t.online_max <= t.K_sorted for t in trials),
    }
    for name, hits in checks.items():
        print(f"{hits:4d}/{len(trials)}  {name}")
    bad = next((t for t in trials if not t.sorted_is_optimal), None)
    if bad is not None:
        print(f"first instance where the sorted strategy is beaten: cmp={bad.cmp} "
              f"sizes={tuple(round(s, 4) for s in bad.sizes)} K_sorted={bad.K_sorted:.6g} K_opt={bad.K_opt:.6g}")
    return EXIT_OK if all(t.online_max <= t.K_sorted for t in trials) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedraa", description="Resource-adaptive asynchronous FL simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", action="append", required=True, help="key=start:stop:step or key=a,b,c (repeatable)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="out/sweep")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="compare gre_raa, random, mp and sync")
    a.add_argument("--config", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--out", default="out/ablation")
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify-theorem2", help="compare online and offline delay bounds on random instances")
    v.add_argument("--n", type=int, default=6)
    v.add_argument("--m", type=int, default=3)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FedRAAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
