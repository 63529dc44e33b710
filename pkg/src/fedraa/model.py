"""Flat-parameter MLP, fragment partitioning and the proximal local solver.

Parameters live in one float64 vector. For ``hidden_dim > 0`` the layout is::

    [ W1 (hidden x input) | b1 (hidden) | W2 (output x hidden) | b2 (output) ]

and for ``hidden_dim == 0`` (multinomial logistic regression)::

    [ W (output x input) | b (output) ]

All matrices are row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InfeasiblePartitionError, NumericError

ACTIVATIONS = ("relu", "identity")

# Partition ratios per fragment count, smallest fragment first.
DEFAULT_RATIOS: dict[int, tuple[float, ...]] = {
    1: (1.0,),
    2: (0.40, 0.60),
    3: (0.20, 0.30, 0.50),
    4: (0.10, 0.20, 0.30, 0.40),
    5: (0.05, 0.10, 0.20, 0.30, 0.35),
}


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError("must be >= 1", "input_dim")
        if self.output_dim < 1:
            raise ConfigError("must be >= 1", "output_dim")
        if self.hidden_dim < 0:
            raise ConfigError("must be >= 0", "hidden_dim")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")

    @property
    def n_params(self) -> int:
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        if h == 0:
            return o * i + o
        return h * i + h + o * h + o

    def unpack(self, params: np.ndarray):
        """Views of the weight blocks; no copies."""
        i, h, o = self.input_dim, self.hidden_dim, self.output_dim
        if h == 0:
            W = params[: o * i].reshape(o, i)
            b = params[o * i : o * i + o]
            return W, b
        p = 0
        W1 = params[p : p + h * i].reshape(h, i)
        p += h * i
        b1 = params[p : p + h]
        p += h
        W2 = params[p : p + o * h].reshape(o, h)
        p += o * h
        b2 = params[p : p + o]
        return W1, b1, W2, b2


@dataclass
class FragmentSpec:
    """Which parameters belong to fragment ``index`` and how often it was merged."""

    index: int
    param_indices: np.ndarray
    hidden_unit_range: range
    ratio: float = 1.0
    update_count: int = 0

    @property
    def size(self) -> int:
        return int(self.param_indices.size)


@dataclass
class Fragment:
    spec_index: int
    version: int
    values: np.ndarray = field(repr=False)


def init_params(spec: ModelSpec, seed) -> np.ndarray:
    """Uniform(-s, s) with s = 1/sqrt(fan_in) per layer, biases included."""
    rng = np.random.default_rng(seed)
    params = np.empty(spec.n_params, dtype=np.float64)
    blocks = spec.unpack(params)
    if spec.hidden_dim == 0:
        fans = (spec.input_dim, spec.input_dim)
    else:
        fans = (spec.input_dim, spec.input_dim, spec.hidden_dim, spec.hidden_dim)
    for block, fan_in in zip(blocks, fans):
        s = 1.0 / math.sqrt(fan_in)
        block[...] = rng.uniform(-s, s, size=block.shape)
    return params


def _unit_counts(total: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * total for r in ratios]
    counts = [math.floor(x + 1e-9) for x in raw]
    remainder = total - sum(counts)
    # largest remainder; ties go to the lower index
    order = sorted(range(len(raw)), key=lambda j: (-(raw[j] - counts[j]), j))
    for j in order[:remainder]:
        counts[j] += 1
    return counts


def validate_ratios(ratios: Sequence[float], M: int) -> tuple[float, ...]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != M:
        raise ConfigError(f"expected {M} ratios, got {len(ratios)}", "ratios")
    if any(not r > 0 for r in ratios):
        raise ConfigError("ratios must be positive", "ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios sum to {sum(ratios)!r}, not 1", "ratios")
    return ratios


def partition_model(spec: ModelSpec, M: int, ratios: Sequence[float] | None = None) -> list[FragmentSpec]:
    """Split the model into ``M`` fragments of contiguous hidden units.

    Each fragment owns its hidden units' input rows, biases and output
    columns. Output biases go to the last fragment. Logistic models
    (``hidden_dim == 0``) are split over output units instead, each unit
    carrying its weight row and bias.
    """
    if M < 1:
        raise ConfigError("must be >= 1", "M")
    if ratios is None:
        if M not in DEFAULT_RATIOS:
            raise ConfigError(f"no default ratios for M={M}", "ratios")
        ratios = DEFAULT_RATIOS[M]
    ratios = validate_ratios(ratios, M)

    i, h, o = spec.input_dim, spec.hidden_dim, spec.output_dim
    units = h if h > 0 else o
    counts = _unit_counts(units, ratios)
    if any(c == 0 for c in counts):
        raise InfeasiblePartitionError(
            f"unit counts {counts} leave a fragment empty ({units} units, M={M})", "M"
        )

    fragments = []
    start = 0
    for j, c in enumerate(counts):
        stop = start + c
        u = np.arange(start, stop)
        if h == 0:
            idx = [np.arange(start * i, stop * i), o * i + u]
        else:
            off_b1 = h * i
            off_W2 = off_b1 + h
            off_b2 = off_W2 + o * h
            idx = [
                np.arange(start * i, stop * i),
                off_b1 + u,
                (off_W2 + np.arange(o)[:, None] * h + u[None, :]).ravel(),
            ]
            if j == M - 1:
                idx.append(off_b2 + np.arange(o))
        param_indices = np.sort(np.concatenate(idx)).astype(np.int64)
        fragments.append(FragmentSpec(j, param_indices, range(start, stop), ratios[j]))
        start = stop

    _check_cover(fragments, spec.n_params)
    return fragments


def _check_cover(fragments: Sequence[FragmentSpec], d: int) -> None:
    allidx = np.concatenate([f.param_indices for f in fragments])
    if allidx.size != d or not np.array_equal(np.sort(allidx), np.arange(d)):
        raise AssertionError("fragments do not form an exact cover of the parameters")


def extract_fragment(global_params: np.ndarray, spec: FragmentSpec) -> Fragment:
    return Fragment(spec.index, spec.update_count, global_params[spec.param_indices].copy())


def merge_fragment(global_params: np.ndarray, spec: FragmentSpec, new: Fragment, alpha_t: float) -> None:
    """In place: ``global[k] <- (1 - alpha_t) * global[k] + alpha_t * new[k]`` over owned k."""
    if not 0.0 < alpha_t <= 1.0:
        raise ContractError(f"alpha_t must lie in (0, 1], got {alpha_t!r}")
    values = np.asarray(new.values, dtype=np.float64)
    if values.shape != spec.param_indices.shape:
        raise ContractError(
            f"fragment {spec.index}: got {values.size} values for {spec.param_indices.size} indices"
        )
    idx = spec.param_indices
    if alpha_t == 1.0:
        global_params[idx] = values
    else:
        # same convex combination, written so that new == old is an exact fixed point
        old = global_params[idx]
        global_params[idx] = old + alpha_t * (values - old)
    spec.update_count += 1


def _forward(params, spec: ModelSpec, X):
    if spec.hidden_dim == 0:
        W, b = spec.unpack(params)
        return X @ W.T + b, None
    W1, b1, W2, b2 = spec.unpack(params)
    z1 = X @ W1.T + b1
    a1 = np.maximum(z1, 0.0) if spec.activation == "relu" else z1
    return a1 @ W2.T + b2, (z1, a1)


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(X, y):
    if len(y) == 0:
        raise ContractError("batch is empty")


def forward_loss(params: np.ndarray, spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> float:
    """Mean softmax cross-entropy over the batch."""
    _check_batch(X, y)
    logits, _ = _forward(params, spec, X)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].mean())
    if not math.isfinite(loss):
        raise NumericError(f"loss is {loss} (max |param| = {np.nanmax(np.abs(params)):.3g})")
    return loss


def predict(params: np.ndarray, spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward(params, spec, X)
    return logits.argmax(axis=1)


def loss_grad(params: np.ndarray, spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of :func:`forward_loss` w.r.t. the flat parameter vector."""
    _check_batch(X, y)
    n = len(y)
    logits, cache = _forward(params, spec, X)
    probs = np.exp(_log_softmax(logits))
    probs[np.arange(n), y] -= 1.0
    dlogits = probs / n

    grad = np.empty_like(params)
    if spec.hidden_dim == 0:
        gW, gb = spec.unpack(grad)
        gW[...] = dlogits.T @ X
        gb[...] = dlogits.sum(axis=0)
    else:
        z1, a1 = cache
        _, _, W2, _ = spec.unpack(params)
        gW1, gb1, gW2, gb2 = spec.unpack(grad)
        gW2[...] = dlogits.T @ a1
        gb2[...] = dlogits.sum(axis=0)
        dz = dlogits @ W2
        if spec.activation == "relu":
            dz *= z1 > 0
        gW1[...] = dz.T @ X
        gb1[...] = dz.sum(axis=0)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return grad


def prox_grad(
    f_grad: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    anchor: np.ndarray,
    rho: float,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """``grad f(theta) + rho * (theta - anchor)``, zeroed outside ``mask``."""
    if rho < 0:
        raise ContractError(f"rho must be >= 0, got {rho!r}")
    if anchor.shape != params.shape:
        raise ContractError("anchor and params differ in length")
    g = f_grad(params) + rho * (params - anchor)
    if mask is not None:
        out = np.zeros_like(g)
        out[mask] = g[mask]
        return out
    return g


def grad_g(
    params: np.ndarray,
    anchor: np.ndarray,
    spec: ModelSpec,
    X: np.ndarray,
    y: np.ndarray,
    rho: float,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the proximal objective ``f + rho/2 * ||theta - anchor||^2``.

    ``mask`` (indices or boolean) restricts the result to one fragment.
    """
    return prox_grad(lambda p: loss_grad(p, spec, X, y), params, anchor, rho, mask)


def g_value(params, anchor, spec: ModelSpec, X, y, rho: float) -> float:
    diff = params - anchor
    return forward_loss(params, spec, X, y) + 0.5 * rho * float(diff @ diff)


def local_train(
    fragment: Fragment,
    full_params: np.ndarray,
    frag_spec: FragmentSpec,
    spec: ModelSpec,
    X: np.ndarray,
    y: np.ndarray,
    iterations: int,
    gamma: float,
    rho: float,
    batch_size: int,
    rng_seed,
) -> Fragment:
    """Run ``iterations`` SGD steps on the proximal objective, fragment only.

    The working copy starts from ``full_params`` with the fragment values
    written in; everything outside the fragment stays frozen. The anchor is
    the received fragment. Batches are drawn without replacement from the
    shard; a batch size >= shard size uses the whole shard in order.
    """
    if iterations < 1:
        raise ContractError(f"iterations must be >= 1, got {iterations}")
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    n = len(y)
    if n == 0:
        raise ContractError("shard is empty")
    idx = frag_spec.param_indices
    theta = np.array(full_params, dtype=np.float64, copy=True)
    theta[idx] = fragment.values
    anchor = theta.copy()
    rng = np.random.default_rng(rng_seed)
    full_batch = batch_size >= n

    for step in range(1, iterations + 1):
        if full_batch:
            Xb, yb = X, y
        else:
            sel = rng.choice(n, size=batch_size, replace=False)
            Xb, yb = X[sel], y[sel]
        try:
            g = grad_g(theta, anchor, spec, Xb, yb, rho, mask=idx)
        except NumericError as exc:
            raise NumericError(f"local step {step}: {exc}") from exc
        theta[idx] -= gamma * g[idx]
        if not np.all(np.isfinite(theta[idx])):
            raise NumericError(f"non-finite parameter after local step {step}")

    return Fragment(fragment.spec_index, fragment.version, theta[idx].copy())
