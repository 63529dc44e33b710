"""Discrete-event simulation of asynchronous fragment training.

Simulated time is measured in ticks; a task occupies its client for exactly
its cost (optionally scaled by seeded log-normal jitter). Events at equal
ticks are processed in insertion order, which makes every run a pure
function of its setup and seed.
"""

from __future__ import annotations

import copy
import csv
import enum
import heapq
import io
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .data import Dataset, concat
from .errors import ConfigError, FedRAAError
from .scheduler import (
    ASSIGNERS,
    ClientProfile,
    CostModel,
    SchedulerState,
    cost,
    validate_delay_bound,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("tick", "epoch", "event", "client", "fragment", "q_j", "staleness", "alpha_t", "loss", "accuracy")


@dataclass(frozen=True)
class StalenessMode:
    kind: str = "polynomial"  # "constant" | "polynomial"
    a: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ConfigError(f"unknown staleness mode {self.kind!r}", "staleness")
        if self.a < 0:
            raise ConfigError(f"exponent must be >= 0, got {self.a!r}", "staleness_a")


def staleness_weight(mode: StalenessMode, t_minus_tau: int) -> float:
    """Damping factor in (0, 1]: 1 for ``constant``, ``(1 + s) ** -a`` for ``polynomial``."""
    if t_minus_tau < 0:
        raise ValueError(f"negative staleness {t_minus_tau}")
    if mode.kind == "constant":
        return 1.0
    return (1.0 + t_minus_tau) ** (-mode.a)


class EventKind(enum.IntEnum):
    CLIENT_IDLE = 0
    TASK_COMPLETE = 1
    CHECKPOINT = 2


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: int = field(compare=False, default=-1)


@dataclass
class TaskRecord:
    task_id: int
    client: int
    fragment: int
    dispatch_epoch: int
    dispatch_tick: float
    cost: float
    duration: float
    completion_tick: float
    merge_tick: float | None = None
    applied_epoch: int | None = None
    staleness: int | None = None
    alpha_t: float | None = None


@dataclass
class CheckpointRow:
    tick: float
    epoch: int
    loss: float
    accuracy: float
    q: tuple[int, ...]
    final: bool = False


@dataclass
class ServerState:
    global_params: np.ndarray
    fragments: list[mdl.FragmentSpec]
    alpha: float
    staleness: StalenessMode = field(default_factory=StalenessMode)
    t: int = 0

    @property
    def q(self) -> list[int]:
        return [f.update_count for f in self.fragments]

    def check(self) -> None:
        assert self.t == sum(self.q), f"epoch {self.t} != sum(q) {sum(self.q)}"


def apply_update(server: ServerState, task: TaskRecord, trained: mdl.Fragment, synchronous: bool = False) -> float:
    """Merge a returned fragment with staleness-damped weight; returns alpha_t."""
    staleness = 0 if synchronous else server.t - task.dispatch_epoch
    if synchronous:
        alpha_t = server.alpha
    else:
        alpha_t = server.alpha * staleness_weight(server.staleness, staleness)
    alpha_t = min(alpha_t, 1.0)
    if not alpha_t > 0:
        raise ConfigError(f"staleness weighting drove alpha_t to {alpha_t!r}", "staleness_a")
    spec = server.fragments[task.fragment]
    mdl.merge_fragment(server.global_params, spec, trained, alpha_t)
    task.applied_epoch = server.t
    task.staleness = staleness
    task.alpha_t = alpha_t
    server.t += 1
    return alpha_t


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest string that round-trips
    return str(x)


@dataclass
class RunLog:
    mode: str
    seed: int
    config: dict = field(default_factory=dict)
    tasks: list[TaskRecord] = field(default_factory=list)
    checkpoints: list[CheckpointRow] = field(default_factory=list)
    rows: list[tuple] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def merges(self) -> list[TaskRecord]:
        return [t for t in self.tasks if t.applied_epoch is not None]

    def _merge_row(self, task: TaskRecord, q_j: int):
        self.rows.append((task.merge_tick, task.applied_epoch + 1, "merge", task.client,
                          task.fragment, q_j, task.staleness, task.alpha_t, None, None))

    def _checkpoint_row(self, cp: CheckpointRow):
        self.checkpoints.append(cp)
        self.rows.append((cp.tick, cp.epoch, "final" if cp.final else "checkpoint", None, None,
                          ";".join(map(str, cp.q)), None, None, cp.loss, cp.accuracy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())


@dataclass
class SimSetup:
    """Everything a run needs, fully resolved.

    With ``model=None`` no training happens: returned fragments equal the
    dispatched ones and no checkpoints are evaluated. Scheduling behaviour
    is unchanged, which keeps large property sweeps cheap.
    """

    profiles: list[ClientProfile]
    fragment_sizes: list[float]
    assign: str = "gre_raa"
    cost_mode: CostModel = CostModel.FULL
    K: float = math.inf
    T_target: int = 10
    tick_budget: float = math.inf
    alpha: float = 0.5
    staleness: StalenessMode = field(default_factory=StalenessMode)
    seed: int = 0
    model: mdl.ModelSpec | None = None
    fragments: list[mdl.FragmentSpec] | None = None
    init_params: np.ndarray | None = None
    shards: list[Dataset] | None = None
    test: Dataset | None = None
    gamma: float = 0.005
    rho: float = 0.1
    batch_size: int = 128
    local_iterations: list[int] | None = None
    checkpoint_interval: float | None = None
    idle_delay: float = 0.0
    jitter_sigma: float = 0.0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        N, M = len(self.profiles), len(self.fragment_sizes)
        if N < 1 or M < 1:
            raise ConfigError("need at least one client and one fragment", "N")
        if self.assign not in ASSIGNERS:
            raise ConfigError(f"unknown assignment rule {self.assign!r}", "scheduler")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha!r}", "alpha")
        if self.T_target < 1:
            raise ConfigError("must be >= 1", "T_target")
        if not self.tick_budget > 0:
            raise ConfigError("must be positive", "tick_budget")
        if self.idle_delay < 0 or self.jitter_sigma < 0:
            raise ConfigError("idle_delay and jitter_sigma must be >= 0", "idle_delay")
        self.cost_mode = CostModel(self.cost_mode)
        if self.model is not None:
            if self.fragments is None or len(self.fragments) != M:
                raise ConfigError("fragments must match fragment_sizes", "M")
            if self.shards is None or len(self.shards) != N:
                raise ConfigError("one shard per client required", "N")
            if self.checkpoint_interval is not None and not self.checkpoint_interval > 0:
                raise ConfigError("must be positive", "checkpoint_interval")
            if self.test is not None and len(self.test) == 0:
                raise ConfigError("test set is empty", "test")
            if self.local_iterations is None:
                self.local_iterations = [1] * N
            if len(self.local_iterations) != N or min(self.local_iterations) < 1:
                raise ConfigError("one positive iteration count per client", "local_iterations")

    @property
    def filtered(self) -> bool:
        return self.assign in ("gre_raa", "random")


class _Runner:
    """State shared by the asynchronous and synchronous loops."""

    def __init__(self, setup: SimSetup, mode: str):
        self.setup = setup
        ss = np.random.SeedSequence(setup.seed)
        init_ss, sched_ss, jitter_ss = ss.spawn(3)
        if setup.filtered:
            validate_delay_bound(setup.profiles, setup.fragment_sizes, setup.K, setup.cost_mode)

        if setup.model is not None:
            fragments = copy.deepcopy(setup.fragments)
            for f in fragments:
                f.update_count = 0
            params = (setup.init_params.copy() if setup.init_params is not None
                      else mdl.init_params(setup.model, init_ss))
            self.train_all = concat(setup.shards)
        else:
            fragments = [mdl.FragmentSpec(j, np.zeros(0, dtype=np.int64), range(0)) for j in range(len(setup.fragment_sizes))]
            params = np.zeros(0)
            self.train_all = None

        self.server = ServerState(params, fragments, setup.alpha, setup.staleness)
        self.sched = SchedulerState.create(len(fragments), setup.K, sched_ss)
        self.jitter_rng = np.random.default_rng(jitter_ss)
        self.assigner = ASSIGNERS[setup.assign]
        self.by_id = {p.id: p for p in setup.profiles}
        self.log = RunLog(mode=mode, seed=setup.seed, config=dict(setup.config))
        its = setup.local_iterations or [0]
        self.log.meta.update(I_min=min(its), I_max=max(its), K=setup.K)
        self.checkpoint_count = 0
        self.pending: dict[int, mdl.Fragment] = {}
        self.task_ids = itertools.count()

    # -- dispatch / merge -------------------------------------------------
    def dispatch(self, profile: ClientProfile, tick: float) -> TaskRecord:
        s = self.setup
        j = self.assigner(self.sched, profile, s.fragment_sizes, s.cost_mode)
        c = cost(profile, s.fragment_sizes[j], s.cost_mode)
        if s.filtered and c > s.K:
            raise AssertionError(f"client {profile.id} got fragment {j} with cost {c} > K={s.K}")
        duration = c
        if s.jitter_sigma > 0:
            duration = c * float(self.jitter_rng.lognormal(0.0, s.jitter_sigma))
        task = TaskRecord(next(self.task_ids), profile.id, j, self.server.t, tick, c, duration, tick + duration)
        self.log.tasks.append(task)

        frag_spec = self.server.fragments[j]
        sent = mdl.extract_fragment(self.server.global_params, frag_spec)
        if s.model is None:
            self.pending[task.task_id] = sent
        else:
            k = self._client_index(profile.id)
            shard = s.shards[k]
            try:
                self.pending[task.task_id] = mdl.local_train(
                    sent, self.server.global_params, frag_spec, s.model, shard.X, shard.y,
                    s.local_iterations[k], s.gamma, s.rho, s.batch_size, [s.seed, task.task_id],
                )
            except FedRAAError as exc:
                raise type(exc)(f"task {task.task_id} (client {profile.id}, fragment {j}): {exc}") from exc
        return task

    def _client_index(self, cid: int) -> int:
        for k, p in enumerate(self.setup.profiles):
            if p.id == cid:
                return k
        raise KeyError(cid)

    def merge(self, task: TaskRecord, tick: float, synchronous: bool = False) -> None:
        task.merge_tick = tick
        trained = self.pending.pop(task.task_id)
        apply_update(self.server, task, trained, synchronous)
        self.sched.q[task.fragment] += 1
        self.sched.release(task.client)
        self.server.check()
        assert self.sched.q == self.server.q
        self.log._merge_row(task, self.sched.q[task.fragment])

    # -- evaluation --------------------------------------------------------
    def evaluate(self) -> tuple[float, float]:
        return evaluate_checkpoint(self.server, self.setup.model, self.train_all, self.setup.test)

    def checkpoints_before(self, tick: float, inclusive: bool = False) -> None:
        iv = self.setup.checkpoint_interval
        if self.setup.model is None or iv is None:
            return
        while True:
            at = self.checkpoint_count * iv
            if at > tick or (at == tick and not inclusive):
                return
            loss, acc = self.evaluate()
            self.log._checkpoint_row(CheckpointRow(at, self.server.t, loss, acc, tuple(self.sched.q)))
            self.checkpoint_count += 1

    def finish(self, stop_tick: float, reached: bool) -> RunLog:
        if math.isfinite(stop_tick):
            self.checkpoints_before(stop_tick, inclusive=True)
        if self.setup.model is not None:
            loss, acc = self.evaluate()
            self.log._checkpoint_row(CheckpointRow(stop_tick, self.server.t, loss, acc, tuple(self.sched.q), final=True))
        merges = self.log.merges
        self.log.meta.update(
            stop_tick=stop_tick,
            reached_target=reached,
            ticks_to_target=stop_tick if reached else None,
            merges=len(merges),
            q=tuple(self.sched.q),
            max_staleness=max((m.staleness for m in merges), default=0),
            max_duration=max((t.duration for t in self.log.tasks), default=0.0),
            max_cost=max((t.cost for t in self.log.tasks), default=0.0),
        )
        return self.log


def evaluate_checkpoint(server: ServerState, spec: mdl.ModelSpec, train: Dataset, test: Dataset | None) -> tuple[float, float]:
    """Mean loss over the union of client shards and top-1 accuracy on ``test``.

    Accuracy is NaN when no test set is configured.
    """
    loss = mdl.forward_loss(server.global_params, spec, train.X, train.y)
    if test is None:
        return loss, float("nan")
    if len(test) == 0:
        raise ConfigError("test set is empty", "test")
    acc = float(np.mean(mdl.predict(server.global_params, spec, test.X) == test.y))
    return loss, acc


def run_async(setup: SimSetup) -> RunLog:
    """Event loop: completions merge on arrival and requeue their client.

    A finished client re-enters as an idle event at the same tick (plus
    ``idle_delay``), so every completion sharing that tick merges before
    any of those clients is reassigned.
    """
    r = _Runner(setup, "async")
    heap: list[Event] = []
    seq = itertools.count()
    for p in setup.profiles:
        heapq.heappush(heap, Event(0.0, next(seq), EventKind.CLIENT_IDLE, p.id))
    running: dict[int, TaskRecord] = {}

    while heap:
        ev = heapq.heappop(heap)
        if ev.time > setup.tick_budget:
            return r.finish(setup.tick_budget, False)
        r.checkpoints_before(ev.time)
        if ev.kind is EventKind.CLIENT_IDLE:
            task = r.dispatch(r.by_id[ev.payload], ev.time)
            running[task.task_id] = task
            heapq.heappush(heap, Event(task.completion_tick, next(seq), EventKind.TASK_COMPLETE, task.task_id))
        else:
            task = running.pop(ev.payload)
            r.merge(task, ev.time)
            if r.server.t >= setup.T_target:
                return r.finish(ev.time, True)
            heapq.heappush(heap, Event(ev.time + setup.idle_delay, next(seq), EventKind.CLIENT_IDLE, task.client))
    raise AssertionError("event queue drained before termination")


def run_sync(setup: SimSetup) -> RunLog:
    """Barrier rounds: every client trains from the same snapshot, merges land
    together at the slowest task's completion in client-id order with the
    undamped weight."""
    r = _Runner(setup, "sync")
    order = sorted(setup.profiles, key=lambda p: p.id)
    tick = 0.0
    while True:
        tasks = [r.dispatch(p, tick) for p in order]
        barrier = max(t.completion_tick for t in tasks)
        if barrier > setup.tick_budget:
            return r.finish(setup.tick_budget, False)
        r.checkpoints_before(barrier)
        for t in tasks:
            r.merge(t, barrier, synchronous=True)
            if r.server.t >= setup.T_target:
                return r.finish(barrier, True)
        tick = barrier + setup.idle_delay


def run(setup: SimSetup, mode: str = "async") -> RunLog:
    if mode == "sync":
        return run_sync(setup)
    if mode == "async":
        return run_async(setup)
    raise ConfigError(f"unknown run mode {mode!r}", "mode")
