"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also collected into the terminal summary.
"""

import csv
import io
import time
from pathlib import Path

import numpy as np
import pytest

from fedraa.config import config_from_dict, load_config
from fedraa.engine import SimSetup, run_async, run_sync
from fedraa.experiment import run_experiment, simulate
from fedraa.model import (
    DEFAULT_RATIOS,
    Fragment,
    FragmentSpec,
    ModelSpec,
    g_value,
    grad_g,
    init_params,
    merge_fragment,
)
from fedraa.scheduler import (
    ClientProfile,
    CostModel,
    cost,
    minimal_valid_K,
    offline_sorted_assignment,
)
from fedraa.bound_check import run_trial

SOC = CostModel.SIZE_OVER_CAPABILITY
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def report(record_property):
    def _report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        record_property("criterion", (n, bool(ok), detail))
        assert ok, line
    return _report


def q_after_each_merge(log, M):
    q = [0] * M
    for task in sorted(log.merges, key=lambda t: t.applied_epoch):
        q[task.fragment] += 1
        yield q


# 1 ---------------------------------------------------------------------------

def test_criterion_1_gradient(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    spec = ModelSpec(784, 64, 10)
    params = init_params(spec, 1)
    anchor = params + 0.05 * rng.standard_normal(spec.n_params)
    X = rng.uniform(0, 1, size=(32, 784))
    y = rng.integers(0, 10, size=32)
    rho, h = 0.1, 1e-5
    grad = grad_g(params, anchor, spec, X, y, rho)
    worst = 0.0
    for k in rng.choice(spec.n_params, size=100, replace=False):
        e = np.zeros(spec.n_params)
        e[k] = h
        fd = (g_value(params + e, anchor, spec, X, y, rho) - g_value(params - e, anchor, spec, X, y, rho)) / (2 * h)
        worst = max(worst, abs(grad[k] - fd) / max(abs(grad[k]), abs(fd), 1e-12))
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-4 and elapsed < 5, f"max relative error {worst:.2e} (< 1e-4), {elapsed:.2f} s (< 5 s)")


# 2 ---------------------------------------------------------------------------

def test_criterion_2_merge(report):
    g = np.array([1.0, 1.0])
    merge_fragment(g, FragmentSpec(0, np.array([0, 1]), range(0)), Fragment(0, 0, np.array([5.0, 9.0])), 0.25)
    exact = g.tolist() == [2.0, 3.0]

    rng = np.random.default_rng(7)
    clean = 0
    for _ in range(1000):
        d = int(rng.integers(2, 200))
        owned = np.sort(rng.choice(d, size=int(rng.integers(1, d)), replace=False))
        params = rng.standard_normal(d)
        before = params.copy()
        alpha = float(rng.uniform(1e-6, 1.0))
        merge_fragment(params, FragmentSpec(0, owned, range(0)), Fragment(0, 0, rng.standard_normal(owned.size)), alpha)
        others = np.setdiff1d(np.arange(d), owned)
        clean += before[others].tobytes() == params[others].tobytes()
    report(2, exact and clean == 1000, f"(1,1)+0.25*((5,9)-(1,1)) = {tuple(g.tolist())}; untouched entries bit-identical in {clean}/1000")


# 3 ---------------------------------------------------------------------------

def test_criterion_3_delay_bound(report):
    rng = np.random.default_rng(3)
    tasks = violations = 0
    for k in range(200):
        N, M = int(rng.integers(2, 11)), int(rng.integers(1, 6))
        full = k % 2 == 1
        profiles = [
            ClientProfile(i, float(rng.uniform(0.5, 5)), float(rng.uniform(0, 0.2)) if full else 0.0,
                          float(rng.uniform(0, 0.2)) if full else 0.0, int(rng.integers(1, 50)))
            for i in range(N)
        ]
        sizes = list(DEFAULT_RATIOS[M])
        mode = CostModel.FULL if full else SOC
        K = minimal_valid_K(profiles, sizes, mode) * float(rng.uniform(1.0, 1.5))
        log = run_async(SimSetup(profiles, sizes, cost_mode=mode, K=K, T_target=30 * M, seed=k))
        tasks += len(log.tasks)
        violations += sum(t.duration > K for t in log.tasks)
    report(3, violations == 0, f"{violations} of {tasks} tasks over K across 200 runs")


# 4 ---------------------------------------------------------------------------

def test_criterion_4_offline_bound(report):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    pairs = [(N, M) for N in range(2, 9) for M in range(1, 5) if N >= M and N % M == 0]
    trials = []
    for k in range(100):
        N, M = pairs[k % len(pairs)]
        profiles = [ClientProfile(i, float(rng.integers(1, 10))) for i in range(N)]
        sizes = [float(s) for s in rng.dirichlet(np.ones(M))]
        trials.append(run_trial(profiles, sizes, seed=k))
    elapsed = time.perf_counter() - start
    sorted_opt = sum(t.K_sorted == t.K_opt for t in trials)
    online_opt = sum(t.online_max == t.K_opt for t in trials)
    ok = sorted_opt == online_opt == 100 and elapsed < 60
    detail = (f"K_sorted == K_opt in {sorted_opt}/100, online max == K_opt in {online_opt}/100, "
              f"online max == K_sorted in {sum(t.online_matches_sorted for t in trials)}/100, "
              f"K_sorted == block-shaped optimum in {sum(t.sorted_is_block_optimal for t in trials)}/100, "
              f"{elapsed:.1f} s")
    bad = next((t for t in trials if t.K_sorted != t.K_opt), None)
    if bad is not None:
        detail += f"; e.g. cmp={bad.cmp} sizes={tuple(round(s, 3) for s in bad.sizes)} K_sorted={bad.K_sorted:.4g} K_opt={bad.K_opt:.4g}"
    report(4, ok, detail)


# 5 ---------------------------------------------------------------------------

def test_criterion_5_fairness(report):
    rng = np.random.default_rng(5)
    drift_bad = 0
    for k in range(200):
        N, M = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        cmps = rng.uniform(0.5, 5, size=N)
        sizes = list(rng.dirichlet(np.ones(M)))
        K = max(sizes) / float(cmps.min())  # every fragment feasible for every client
        profiles = [ClientProfile(i, float(c)) for i, c in enumerate(cmps)]
        log = run_async(SimSetup(profiles, sizes, cost_mode=SOC, K=K, T_target=25 * M, seed=k))
        drift_bad += any(max(q) - min(q) > N for q in q_after_each_merge(log, M))

    end_bad, example = 0, None
    for k in range(200):
        N, M, Q = int(rng.integers(1, 11)), int(rng.integers(1, 6)), int(rng.integers(5, 60))
        c = float(rng.uniform(1, 3))
        log = run_async(SimSetup([ClientProfile(i, c) for i in range(N)], list(DEFAULT_RATIOS[M]),
                                 cost_mode=SOC, T_target=Q * M, seed=k))
        if any(abs(qj - Q) > 1 for qj in log.meta["q"]):
            end_bad += 1
            example = example or (N, M, Q, log.meta["q"])
    detail = f"drift > N in {drift_bad}/200 runs; end state outside Q+-1 in {end_bad}/200 homogeneous runs"
    if example:
        detail += f" (e.g. N={example[0]} M={example[1]} Q={example[2]} q={example[3]})"
    report(5, drift_bad == 0 and end_bad == 0, detail)


# 6 ---------------------------------------------------------------------------

def test_criterion_6_straggler(report):
    rng = np.random.default_rng(6)
    wins = 0
    for k in range(50):
        N, M = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        fast = float(rng.uniform(3, 6))
        cmps = [1.0, fast] + [float(rng.uniform(1, fast)) for _ in range(N - 2)]
        profiles = [ClientProfile(i, c) for i, c in enumerate(cmps)]
        sizes = list(rng.dirichlet(np.ones(M)))
        K = offline_sorted_assignment(profiles, sizes)[1]
        durations = [cost(p, s, SOC) for p in profiles for s in sizes if cost(p, s, SOC) <= K]
        assert max(durations) / min(durations) >= 3
        setup = dict(cost_mode=SOC, K=K, T_target=20 * M, seed=k)
        a = run_async(SimSetup(profiles, sizes, **setup)).meta["ticks_to_target"]
        s = run_sync(SimSetup(profiles, sizes, **setup)).meta["ticks_to_target"]
        wins += a < s
    report(6, wins >= 48, f"async reached T_target first in {wins}/50 instances (need >= 95%)")


# 7 ---------------------------------------------------------------------------

SYNTHETIC = dict(dataset="synthetic", classes=2, separation=6.0, N=4, M=2, beta=0.5,
                 gamma=0.05, Q=100, tick_budget=2e4, checkpoint_interval=0.5)


def _learning_outcome(cfg):
    log = simulate(cfg)
    first, last = log.checkpoints[0], log.checkpoints[-1]
    return first.loss, last.loss, last.accuracy, log.meta["stop_tick"]


@pytest.mark.slow
def test_criterion_7_learning(report, mnist_paths):
    synthetic = [_learning_outcome(config_from_dict(dict(SYNTHETIC, seed=s))) for s in range(5)]
    synth_ok = all(last < 0.1 * first and acc >= 0.95 and tick <= 2e4 for first, last, acc, tick in synthetic)

    start = time.perf_counter()
    mnist_cfg = dict(dataset="idx", M=4, hidden_dim=64, train_limit=2000, test_limit=1000, beta=0.3,
                     gamma=0.05, Q=400, tick_budget=1e5, checkpoint_interval=10.0, **mnist_paths)
    accs = [_learning_outcome(config_from_dict(dict(mnist_cfg, seed=s)))[2] for s in range(3)]
    elapsed = time.perf_counter() - start
    mean = float(np.mean(accs))
    mnist_ok = min(accs) >= 0.85 and max(abs(a - mean) for a in accs) <= 0.03 and elapsed < 600

    report(7, synth_ok and mnist_ok,
           "synthetic loss ratio " + ", ".join(f"{last / first:.3f}" for first, last, _, _ in synthetic)
           + " acc " + ", ".join(f"{acc:.3f}" for _, _, acc, _ in synthetic)
           + f"; MNIST acc {', '.join(f'{a:.3f}' for a in accs)} in {elapsed:.0f} s")


# 8 ---------------------------------------------------------------------------

def test_criterion_8_determinism(report, tmp_path):
    cfg = load_config(GOLDEN / "reference.json")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    produced = (tmp_path / "a" / "runlog.csv").read_bytes()
    same_run = produced == (tmp_path / "b" / "runlog.csv").read_bytes()
    golden = produced == (GOLDEN / "runlog.csv").read_bytes()
    report(8, same_run and golden, f"repeat identical: {same_run}; matches golden file: {golden}")


# 9 ---------------------------------------------------------------------------

def test_criterion_9_staleness_weight(report, tmp_path):
    cfg = load_config(GOLDEN / "reference.json")
    assert cfg.staleness == "polynomial" and cfg.staleness_a == 0.5
    log, _ = run_experiment(cfg, tmp_path)
    rows = [r for r in csv.DictReader(io.StringIO((tmp_path / "runlog.csv").read_text())) if r["event"] == "merge"]
    merges = sorted(log.merges, key=lambda t: t.applied_epoch)
    worst = 0.0
    for row, task in zip(rows, merges):
        staleness = task.applied_epoch - task.dispatch_epoch
        assert int(row["staleness"]) == staleness
        worst = max(worst, abs(float(row["alpha_t"]) - cfg.alpha * (1 + staleness) ** -0.5))
    stale = sum(int(r["staleness"]) > 0 for r in rows)
    ok = len(rows) == len(merges) > 0 and stale > 0 and worst <= 1e-12
    report(9, ok, f"max |alpha_t - alpha(1+s)^-0.5| = {worst:.1e} over {len(rows)} merge rows ({stale} stale)")
