"""Fragment assignment: cost model, delay-bound filtering and assignment rules."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, GuardError, InfeasibleError


class CostModel(str, enum.Enum):
    FULL = "full"
    SIZE_OVER_CAPABILITY = "size_over_capability"


@dataclass(frozen=True)
class ClientProfile:
    id: int
    cmp: float
    com_up: float = 0.0
    com_down: float = 0.0
    shard_size: int = 1

    def __post_init__(self):
        if not self.cmp > 0 or not math.isfinite(self.cmp):
            raise ConfigError(f"client {self.id}: cmp must be positive, got {self.cmp!r}", "cmp")
        if self.com_up < 0 or self.com_down < 0:
            raise ConfigError(f"client {self.id}: communication costs must be >= 0", "com")
        if self.shard_size < 1:
            raise ConfigError(f"client {self.id}: shard_size must be >= 1", "shard_size")


def cost(profile: ClientProfile, fragment_size: float, model: CostModel = CostModel.FULL) -> float:
    """Ticks needed by ``profile`` to train a fragment of ``fragment_size``.

    ``FULL``: size * shard / cmp + (com_up + com_down) * size.
    ``SIZE_OVER_CAPABILITY``: size / cmp.
    """
    if CostModel(model) is CostModel.SIZE_OVER_CAPABILITY:
        return fragment_size / profile.cmp
    return (
        fragment_size * profile.shard_size / profile.cmp
        + (profile.com_up + profile.com_down) * fragment_size
    )


def cost_matrix(profiles: Sequence[ClientProfile], sizes: Sequence[float], model=CostModel.FULL) -> np.ndarray:
    return np.array([[cost(p, s, model) for s in sizes] for p in profiles], dtype=np.float64)


def feasible_set(profile: ClientProfile, sizes: Sequence[float], K: float, model=CostModel.FULL) -> list[int]:
    if not K > 0:
        raise ConfigError(f"K must be positive, got {K!r}", "K")
    return [j for j, s in enumerate(sizes) if cost(profile, s, model) <= K]


def validate_delay_bound(profiles: Sequence[ClientProfile], sizes: Sequence[float], K: float, model=CostModel.FULL) -> None:
    """Refuse bounds under which some client or some fragment is stranded."""
    covered = set()
    for p in profiles:
        S = feasible_set(p, sizes, K, model)
        if not S:
            raise InfeasibleError(f"K too small for client {p.id}: K={K!r}")
        covered.update(S)
    missing = sorted(set(range(len(sizes))) - covered)
    if missing:
        raise InfeasibleError(f"K too small: fragment(s) {missing} feasible for no client (K={K!r})")


def minimal_valid_K(profiles: Sequence[ClientProfile], sizes: Sequence[float], model=CostModel.FULL) -> float:
    """Smallest K passing :func:`validate_delay_bound`."""
    C = cost_matrix(profiles, sizes, model)
    return float(max(C.min(axis=1).max(), C.min(axis=0).max()))


@dataclass
class SchedulerState:
    q: list[int]
    K: float
    rng: np.random.Generator
    in_flight: dict[int, int] = field(default_factory=dict)

    @classmethod
    def create(cls, M: int, K: float, seed) -> "SchedulerState":
        return cls(q=[0] * M, K=K, rng=np.random.default_rng(seed))

    def inflight_count(self, j: int) -> int:
        return sum(1 for f in self.in_flight.values() if f == j)

    def _record(self, client: int, j: int) -> int:
        if client in self.in_flight:
            raise AssertionError(f"client {client} already has a task in flight")
        self.in_flight[client] = j
        return j

    def release(self, client: int) -> None:
        del self.in_flight[client]


def gre_raa_assign(state: SchedulerState, profile: ClientProfile, sizes: Sequence[float], model=CostModel.FULL) -> int:
    """Least-updated fragment among those within the delay bound.

    Ties on ``q`` prefer fragments with fewer tasks in flight, then break
    uniformly at random.
    """
    S = feasible_set(profile, sizes, state.K, model)
    if not S:
        raise InfeasibleError(f"K too small for client {profile.id}: K={state.K!r}")
    qmin = min(state.q[j] for j in S)
    tied = [j for j in S if state.q[j] == qmin]
    if len(tied) > 1:
        load = {j: state.inflight_count(j) for j in tied}
        lmin = min(load.values())
        tied = [j for j in tied if load[j] == lmin]
    choice = tied[int(state.rng.integers(len(tied)))] if len(tied) > 1 else tied[0]

    assert cost(profile, sizes[choice], model) <= state.K
    assert state.q[choice] == qmin
    return state._record(profile.id, choice)


def random_assign(state: SchedulerState, profile: ClientProfile, sizes: Sequence[float], model=CostModel.FULL) -> int:
    S = feasible_set(profile, sizes, state.K, model)
    if not S:
        raise InfeasibleError(f"K too small for client {profile.id}: K={state.K!r}")
    return state._record(profile.id, S[int(state.rng.integers(len(S)))])


def mp_assign(state: SchedulerState, profile: ClientProfile, sizes: Sequence[float], model=CostModel.FULL) -> int:
    """Globally least-updated fragment, ignoring the delay bound; lowest index wins ties."""
    return state._record(profile.id, int(np.argmin(state.q)))


Assigner = Callable[[SchedulerState, ClientProfile, Sequence[float], CostModel], int]

ASSIGNERS: dict[str, Assigner] = {
    "gre_raa": gre_raa_assign,
    "random": random_assign,
    "mp": mp_assign,
}


def _sorted_order(profiles, sizes):
    clients = sorted(range(len(profiles)), key=lambda i: (-profiles[i].cmp, i))
    frags = sorted(range(len(sizes)), key=lambda j: (-sizes[j], j))
    return clients, frags


def offline_sorted_assignment(profiles: Sequence[ClientProfile], sizes: Sequence[float]) -> tuple[dict[int, list[int]], float]:
    """Static assignment pairing size-sorted fragments with capability-sorted client blocks.

    Returns ``({fragment: [client ids]}, K)`` where K is the largest
    size/cmp over assigned pairs. With fewer clients than fragments each
    client cycles through a fixed fragment set (round robin).
    """
    N, M = len(profiles), len(sizes)
    if N == 0 or M == 0:
        raise ConfigError("need at least one client and one fragment", "profiles")
    clients, frags = _sorted_order(profiles, sizes)
    assignment: dict[int, list[int]] = {j: [] for j in range(M)}
    if N >= M:
        block = N // M
        for r, j in enumerate(frags):
            stop = N if r == M - 1 else (r + 1) * block
            assignment[j] = [profiles[i].id for i in clients[r * block : stop]]
    else:
        for r, j in enumerate(frags):
            assignment[j] = [profiles[clients[r % N]].id]

    by_id = {p.id: p for p in profiles}
    K = max(
        cost(by_id[c], sizes[j], CostModel.SIZE_OVER_CAPABILITY)
        for j, cs in assignment.items()
        for c in cs
    )
    return assignment, K


def _enumerate_K(profiles, sizes, accept, max_n=8, max_m=4) -> float:
    N, M = len(profiles), len(sizes)
    if N == 0 or M == 0:
        raise ConfigError("need at least one client and one fragment", "profiles")
    if N > max_n or M > max_m:
        raise GuardError(f"enumeration guard: N={N} > {max_n} or M={M} > {max_m}")
    if N < M:
        raise GuardError(f"no covering assignment exists with N={N} < M={M}")
    C = cost_matrix(profiles, sizes, CostModel.SIZE_OVER_CAPABILITY)
    best = math.inf
    for assign in itertools.product(range(M), repeat=N):
        if not accept(assign):
            continue
        k = max(C[i, j] for i, j in enumerate(assign))
        best = min(best, k)
    return float(best)


def brute_force_offline_K(profiles: Sequence[ClientProfile], sizes: Sequence[float]) -> float:
    """Exhaustive minimum over covering assignments of the worst size/cmp.

    Every client gets exactly one fragment and every fragment at least one
    client. Limited to N <= 8, M <= 4.
    """
    M = len(sizes)
    return _enumerate_K(profiles, sizes, lambda a: len(set(a)) == M)


def brute_force_balanced_K(profiles: Sequence[ClientProfile], sizes: Sequence[float]) -> float:
    """As :func:`brute_force_offline_K`, restricted to the block shape of the sorted strategy.

    Each fragment receives ``N // M`` clients and the last-ranked (smallest)
    fragment also takes the ``N % M`` leftovers.
    """
    N, M = len(profiles), len(sizes)
    if N < M:
        raise GuardError(f"no covering assignment exists with N={N} < M={M}")
    _, frags = _sorted_order(profiles, sizes)
    block = N // M
    want = {j: block for j in frags}
    want[frags[-1]] += N % M

    def accept(a):
        counts = [0] * M
        for j in a:
            counts[j] += 1
        return all(counts[j] == want[j] for j in range(M))

    return _enumerate_K(profiles, sizes, accept)
