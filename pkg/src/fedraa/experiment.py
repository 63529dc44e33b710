"""Build simulations from configs, run them and write result files."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from . import engine
from .config import ExperimentConfig
from .data import Dataset, check_paths, gen_synthetic, read_idx, shard_iid
from .model import ModelSpec, partition_model
from .scheduler import (
    ClientProfile,
    CostModel,
    minimal_valid_K,
    offline_sorted_assignment,
    validate_delay_bound,
)

log = logging.getLogger(__name__)

SUMMARY_FIELDS = (
    "mode", "scheduler", "seed", "N", "M", "beta", "K", "merges", "reached_target",
    "ticks_to_target", "target_accuracy", "ticks_to_target_accuracy", "final_loss",
    "final_accuracy", "max_staleness", "max_duration", "I_min", "I_max", "q",
)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "synthetic":
        train = gen_synthetic(cfg.classes, cfg.dim, cfg.per_class, cfg.separation, [cfg.seed, 1], "synthetic-train")
        test = gen_synthetic(cfg.classes, cfg.dim, cfg.test_per_class, cfg.separation, [cfg.seed, 2], "synthetic-test")
        return train, test
    check_paths(cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels)
    train = read_idx(cfg.train_images, cfg.train_labels, cfg.train_limit, "idx-train")
    test = read_idx(cfg.test_images, cfg.test_labels, cfg.test_limit, "idx-test")
    return train, test


def resolve_K(cfg: ExperimentConfig, profiles, sizes, ratio_sizes) -> float:
    if cfg.K != "auto":
        return float(cfg.K)
    if cfg.cost_mode == CostModel.SIZE_OVER_CAPABILITY.value:
        return offline_sorted_assignment(profiles, ratio_sizes)[1]
    return minimal_valid_K(profiles, sizes, CostModel(cfg.cost_mode))


def build_setup(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None) -> engine.SimSetup:
    """Resolve a config into a ready-to-run simulation."""
    train, test = data if data is not None else load_data(cfg)
    spec = ModelSpec(train.meta.input_dim, cfg.hidden_dim, train.meta.class_count, cfg.activation)
    fragments = partition_model(spec, cfg.M, cfg.ratios)
    shards = shard_iid(train, cfg.N, [cfg.seed, 3])

    caps = cfg.client_capabilities()
    profiles = [
        ClientProfile(n, caps[n], cfg.com_up, cfg.com_down, len(shards[n])) for n in range(cfg.N)
    ]
    ratio_sizes = [f.ratio for f in fragments]
    if cfg.cost_mode == CostModel.SIZE_OVER_CAPABILITY.value:
        sizes = ratio_sizes
    else:
        sizes = [float(f.size) for f in fragments]
    K = resolve_K(cfg, profiles, sizes, ratio_sizes)
    assign = "gre_raa" if cfg.scheduler == "sync" else cfg.scheduler
    if assign != "mp":
        validate_delay_bound(profiles, sizes, K, CostModel(cfg.cost_mode))

    if cfg.local_iterations is None:
        iters = [cfg.local_epochs * math.ceil(len(s) / cfg.batch_size) for s in shards]
    elif isinstance(cfg.local_iterations, list):
        iters = [int(i) for i in cfg.local_iterations]
    else:
        iters = [int(cfg.local_iterations)] * cfg.N

    return engine.SimSetup(
        profiles=profiles,
        fragment_sizes=sizes,
        assign=assign,
        cost_mode=CostModel(cfg.cost_mode),
        K=K,
        T_target=cfg.T_target,
        tick_budget=cfg.tick_budget,
        alpha=cfg.alpha,
        staleness=engine.StalenessMode(cfg.staleness, cfg.staleness_a),
        seed=cfg.seed,
        model=spec,
        fragments=fragments,
        shards=shards,
        test=test,
        gamma=cfg.gamma,
        rho=cfg.rho,
        batch_size=cfg.batch_size,
        local_iterations=iters,
        checkpoint_interval=cfg.checkpoint_interval,
        idle_delay=cfg.idle_delay,
        jitter_sigma=cfg.jitter_sigma,
        config=cfg.to_dict(),
    )


def simulate(cfg: ExperimentConfig, data=None) -> engine.RunLog:
    setup = build_setup(cfg, data)
    return engine.run(setup, "sync" if cfg.scheduler == "sync" else "async")


def summarize(cfg: ExperimentConfig, runlog: engine.RunLog) -> dict:
    m = runlog.meta
    final = runlog.checkpoints[-1] if runlog.checkpoints else None
    hit = next(
        (cp.tick for cp in runlog.checkpoints if not math.isnan(cp.accuracy) and cp.accuracy >= cfg.target_accuracy),
        None,
    )
    return {
        "mode": runlog.mode,
        "scheduler": cfg.scheduler,
        "seed": cfg.seed,
        "N": cfg.N,
        "M": cfg.M,
        "beta": cfg.beta,
        "K": m["K"],
        "merges": m["merges"],
        "reached_target": m["reached_target"],
        "ticks_to_target": m["ticks_to_target"],
        "target_accuracy": cfg.target_accuracy,
        "ticks_to_target_accuracy": hit,
        "final_loss": final.loss if final else None,
        "final_accuracy": final.accuracy if final else None,
        "max_staleness": m["max_staleness"],
        "max_duration": m["max_duration"],
        "I_min": m["I_min"],
        "I_max": m["I_max"],
        "q": ";".join(map(str, m["q"])),
    }


def _write_rows(path: Path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([engine._fmt(row.get(k)) for k in fields])


def write_curves(path: Path, runlog: engine.RunLog) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# tick epoch loss accuracy\n")
        for cp in runlog.checkpoints:
            f.write(f"{cp.tick:.9g} {cp.epoch} {cp.loss:.9g} {cp.accuracy:.9g}\n")


def _atomic_dir(out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))


def _publish(tmp: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for p in tmp.iterdir():
        os.replace(p, out / p.name)
    shutil.rmtree(tmp, ignore_errors=True)


def run_experiment(cfg: ExperimentConfig, out_dir, data=None) -> tuple[engine.RunLog, dict]:
    """Run one configuration and write runlog.csv, summary.csv, curves.dat and config_echo.json."""
    out = Path(out_dir)
    runlog = simulate(cfg, data)
    summary = summarize(cfg, runlog)
    tmp = _atomic_dir(out)
    try:
        runlog.write_csv(tmp / "runlog.csv")
        _write_rows(tmp / "summary.csv", SUMMARY_FIELDS, [summary])
        write_curves(tmp / "curves.dat", runlog)
        (tmp / "config_echo.json").write_text(json.dumps(runlog.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        _publish(tmp, out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return runlog, summary


# -- sweeps ---------------------------------------------------------------

def parse_grid(spec: str) -> tuple[str, list]:
    """``key=start:stop:step`` (inclusive) or ``key=v1,v2,...``."""
    if "=" not in spec:
        raise ValueError(f"grid spec {spec!r} is not key=values")
    key, values = spec.split("=", 1)
    key = key.strip()

    def num(s):
        s = s.strip()
        try:
            return int(s)
        except ValueError:
            return float(s)

    if ":" in values:
        parts = [num(p) for p in values.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"range {values!r} must be start:stop:step with step > 0")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        out = [round(start + k * step, 10) for k in range(count)]
        if all(isinstance(p, int) for p in parts):
            out = [int(v) for v in out]
        return key, out
    return key, [num(v) for v in values.split(",") if v.strip()]


def sweep(cfg: ExperimentConfig, grids: Sequence[str], out_dir) -> list[dict]:
    """Run the cartesian product of the grids; one summary row per cell."""
    axes = [parse_grid(g) for g in grids]
    out = Path(out_dir)
    rows = []
    for k, combo in enumerate(itertools.product(*[vals for _, vals in axes])):
        changes = {key: val for (key, _), val in zip(axes, combo)}
        cell = cfg.replace(**changes)
        label = "_".join(f"{key}={val}" for key, val in changes.items())
        _, summary = run_experiment(cell, out / f"cell_{k:03d}_{label}")
        row = dict(changes)
        row.update(summary)
        rows.append(row)
    fields = [key for key, _ in axes] + [f for f in SUMMARY_FIELDS if f not in dict(axes)]
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "summary.csv", fields, rows)
    return rows


# -- ablation -------------------------------------------------------------

ABLATION_MODES = ("gre_raa", "random", "mp", "sync")
ABLATION_FIELDS = ("mode", "final_accuracy", "ticks_to_target", "ticks_to_target_accuracy", "merges", "max_duration", "shard_hash")


def run_ablation_suite(cfg: ExperimentConfig, out_dir=None) -> list[dict]:
    """Run the four assignment/aggregation variants on one shared data instance."""
    data = load_data(cfg)
    rows = []
    for mode in ABLATION_MODES:
        cell = cfg.replace(scheduler=mode)
        setup = build_setup(cell, data)
        digest = _shard_digest(setup.shards)
        if out_dir is not None:
            runlog, summary = run_experiment(cell, Path(out_dir) / mode, data)
        else:
            runlog = engine.run(setup, "sync" if mode == "sync" else "async")
            summary = summarize(cell, runlog)
        row = {k: summary.get(k) for k in ABLATION_FIELDS}
        row["mode"] = mode
        row["shard_hash"] = digest
        rows.append(row)
    if out_dir is not None:
        _write_rows(Path(out_dir) / "ablation.csv", ABLATION_FIELDS, rows)
    return rows


def _shard_digest(shards) -> str:
    h = hashlib.sha256()
    for s in shards:
        h.update(s.digest().encode())
    return h.hexdigest()[:16]


def format_table(rows: Sequence[dict], fields: Sequence[str]) -> str:
    def cell(v):
        return format(v, ".6g") if isinstance(v, float) else engine._fmt(v)

    cells = [[cell(r.get(f)) for f in fields] for r in rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
