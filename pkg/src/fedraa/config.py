"""Experiment configuration: a flat JSON object of scalars and arrays."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import ACTIVATIONS, DEFAULT_RATIOS, validate_ratios

SCHEDULERS = ("gre_raa", "random", "mp", "sync")
COST_MODES = ("size_over_capability", "full")
STALENESS_MODES = ("polynomial", "constant")


@dataclass
class ExperimentConfig:
    dataset: str
    M: int
    ratios: list[float] | None = None
    # model
    hidden_dim: int = 64
    activation: str = "relu"
    # synthetic data
    classes: int = 2
    dim: int = 10
    per_class: int = 200
    test_per_class: int = 200
    separation: float = 6.0
    # IDX data
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_limit: int = 2000
    test_limit: int = 1000
    # clients
    N: int = 10
    capabilities: list[float] | None = None
    beta: float | None = None
    cap_low: float = 1.0
    cap_high: float = 3.0
    com_up: float = 0.0
    com_down: float = 0.0
    # scheduling
    scheduler: str = "gre_raa"
    cost_mode: str = "size_over_capability"
    K: float | str = "auto"
    # aggregation and local training
    alpha: float = 0.5
    staleness: str = "polynomial"
    staleness_a: float = 0.5
    gamma: float = 0.005
    rho: float = 0.1
    batch_size: int = 128
    local_epochs: int = 5
    local_iterations: int | list[int] | None = None
    # termination and reporting
    Q: int = 50
    T_target: int | None = None
    tick_budget: float = 1e5
    checkpoint_interval: float = 1.0
    target_accuracy: float = 0.9
    idle_delay: float = 0.0
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if self.dataset not in ("synthetic", "idx"):
            raise ConfigError(f"unknown dataset {self.dataset!r}", "dataset")
        if not isinstance(self.M, int) or self.M < 1:
            raise ConfigError(f"must be a positive integer, got {self.M!r}", "M")
        if self.ratios is None:
            if self.M not in DEFAULT_RATIOS:
                raise ConfigError(f"no default ratios for M={self.M}; give them explicitly", "ratios")
            self.ratios = list(DEFAULT_RATIOS[self.M])
        self.ratios = list(validate_ratios(self.ratios, self.M))
        if self.hidden_dim < 0:
            raise ConfigError("must be >= 0", "hidden_dim")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")
        if self.dataset == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self, key):
                    raise ConfigError("required for dataset 'idx'", key)
        for key in ("classes", "dim", "per_class", "test_per_class", "train_limit", "test_limit",
                    "N", "batch_size", "local_epochs", "Q"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, key)!r}", key)
        for key in ("separation", "alpha", "tick_budget", "checkpoint_interval", "cap_low", "cap_high"):
            if not float(getattr(self, key)) > 0:
                raise ConfigError(f"must be positive, got {getattr(self, key)!r}", key)
        if self.alpha > 1:
            raise ConfigError(f"must lie in (0, 1], got {self.alpha!r}", "alpha")
        for key in ("gamma", "rho", "com_up", "com_down", "staleness_a", "idle_delay", "jitter_sigma"):
            if float(getattr(self, key)) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, key)!r}", key)
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}; one of {SCHEDULERS}", "scheduler")
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"unknown cost mode {self.cost_mode!r}", "cost_mode")
        if self.staleness not in STALENESS_MODES:
            raise ConfigError(f"unknown staleness mode {self.staleness!r}", "staleness")
        if isinstance(self.K, str):
            if self.K != "auto":
                raise ConfigError(f"must be a positive number or 'auto', got {self.K!r}", "K")
        elif not (float(self.K) > 0 and math.isfinite(float(self.K))):
            raise ConfigError(f"must be positive, got {self.K!r}", "K")
        if self.capabilities is not None and self.beta is not None:
            raise ConfigError("give either capabilities or beta, not both", "capabilities")
        if self.capabilities is not None:
            if len(self.capabilities) != self.N:
                raise ConfigError(f"expected {self.N} entries, got {len(self.capabilities)}", "capabilities")
            if any(not float(c) > 0 for c in self.capabilities):
                raise ConfigError("capabilities must be positive", "capabilities")
        if self.beta is not None and not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {self.beta!r}", "beta")
        if self.local_iterations is not None:
            its = self.local_iterations if isinstance(self.local_iterations, list) else [self.local_iterations]
            if isinstance(self.local_iterations, list) and len(its) != self.N:
                raise ConfigError(f"expected {self.N} entries", "local_iterations")
            if any(int(i) < 1 for i in its):
                raise ConfigError("iteration counts must be >= 1", "local_iterations")
        if self.T_target is None:
            self.T_target = self.Q * self.M
        if self.T_target < 1:
            raise ConfigError("must be >= 1", "T_target")
        if self.dataset == "synthetic" and self.N > self.classes * self.per_class:
            raise ConfigError(f"{self.N} clients for {self.classes * self.per_class} samples", "N")

    # ------------------------------------------------------------------
    def client_capabilities(self) -> list[float]:
        """Per-client compute capability; ``beta`` marks the first round(beta*N) clients as the weak tier."""
        if self.capabilities is not None:
            return [float(c) for c in self.capabilities]
        if self.beta is not None:
            n_low = int(math.floor(self.beta * self.N + 0.5))
            return [self.cap_low] * n_low + [self.cap_high] * (self.N - n_low)
        return [self.cap_high] * self.N

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        if "M" in changes and "ratios" not in changes:
            d["ratios"] = None
            d["T_target"] = None
        if "Q" in changes and "T_target" not in changes:
            d["T_target"] = None
        if "N" in changes and "capabilities" not in changes:
            d["capabilities"] = None
        if "beta" in changes:
            d["capabilities"] = None
        d.update(changes)
        return config_from_dict(d)


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
REQUIRED = ("dataset", "M")


def config_from_dict(d: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", unknown[0])
    for key in REQUIRED:
        if key not in d:
            raise ConfigError("missing required key", key)
    for key, value in d.items():
        if isinstance(value, (dict,)):
            raise ConfigError("nested objects are not allowed", key)
    try:
        return ExperimentConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels")


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; relative data paths are taken relative to the file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(d, dict):
        for key in PATH_KEYS:
            if isinstance(d.get(key), str) and not Path(d[key]).is_absolute():
                d[key] = str(path.parent / d[key])
    return config_from_dict(d)
