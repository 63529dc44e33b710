"""Randomized check of the online assignment against offline delay bounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SimSetup, run_async
from .scheduler import (
    ClientProfile,
    CostModel,
    brute_force_balanced_K,
    brute_force_offline_K,
    offline_sorted_assignment,
)


@dataclass
class Trial:
    N: int
    M: int
    cmp: tuple[float, ...]
    sizes: tuple[float, ...]
    K_sorted: float
    K_opt: float
    K_balanced: float
    online_max: float

    @property
    def sorted_is_optimal(self) -> bool:
        return self.K_sorted == self.K_opt

    @property
    def sorted_is_block_optimal(self) -> bool:
        return self.K_sorted == self.K_balanced

    @property
    def online_matches_opt(self) -> bool:
        return self.online_max == self.K_opt

    @property
    def online_matches_sorted(self) -> bool:
        return self.online_max == self.K_sorted


def random_instance(rng: np.random.Generator, N: int, M: int):
    """Integer capabilities in [1, 9] and fragment sizes drawn from a flat Dirichlet."""
    profiles = [ClientProfile(i, float(rng.integers(1, 10))) for i in range(N)]
    sizes = [float(s) for s in rng.dirichlet(np.ones(M))]
    return profiles, sizes


def run_trial(profiles, sizes, seed: int = 0, rounds_per_fragment: int = 100) -> Trial:
    """Offline K values plus the worst cost Gre-RAA actually dispatches with K = K_sorted."""
    N, M = len(profiles), len(sizes)
    _, K_sorted = offline_sorted_assignment(profiles, sizes)
    log = run_async(SimSetup(
        profiles, sizes, assign="gre_raa", cost_mode=CostModel.SIZE_OVER_CAPABILITY,
        K=K_sorted, T_target=rounds_per_fragment * M, seed=seed,
    ))
    return Trial(
        N, M, tuple(p.cmp for p in profiles), tuple(sizes), K_sorted,
        brute_force_offline_K(profiles, sizes), brute_force_balanced_K(profiles, sizes),
        max(t.cost for t in log.tasks),
    )


def verify(n: int, m: int, trials: int, seed: int = 0) -> list[Trial]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(trials):
        profiles, sizes = random_instance(rng, n, m)
        out.append(run_trial(profiles, sizes, seed=k))
    return out
