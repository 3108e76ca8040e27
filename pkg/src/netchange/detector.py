"""Statistic recursion, control-limit policies and the sequential test executor.

The statistic is ``Y_k = (Y_{k-1} + w(Y_{k-1})) * Lambda_k`` with ``Y_0 = 0``.
A run stops at the first ``k`` in ``1..N`` with ``Y_k >= limit(k)``; step
``N + 1`` has limit 0 and ``Y_{N+1} = Y_N``, so every run stops by ``N + 1``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np


def cusum_w(y):
    return np.maximum(1.0 - np.asarray(y, dtype=float), 0.0)


def unit_weight(y):
    return np.ones_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class WeightSpec:
    """Delay weight ``w`` and run-length weight ``v``, both functions of the previous statistic only."""

    w: Callable
    v: Callable
    name: str = "custom"

    def carry(self, y):
        return y + self.w(y)


CUSUM = WeightSpec(cusum_w, unit_weight, "cusum")
SHIRYAEV_ROBERTS = WeightSpec(unit_weight, unit_weight, "shiryaev-roberts")
WEIGHTS = {"cusum": CUSUM, "shiryaev-roberts": SHIRYAEV_ROBERTS, "sr": SHIRYAEV_ROBERTS}


def step_statistic(y_prev: float, weights: WeightSpec, log_lambda: float) -> float:
    if y_prev < 0:
        raise ValueError(f"statistic must be nonnegative, got {y_prev}")
    w = float(weights.w(y_prev))
    if w < 0:
        raise ValueError(f"weight w({y_prev}) = {w} is negative")
    if log_lambda == -np.inf:
        return 0.0
    return (y_prev + w) * float(np.exp(log_lambda))


def _step_batch(y, weights, log_lambda):
    with np.errstate(over="ignore", invalid="ignore"):
        out = weights.carry(y) * np.exp(log_lambda)
    return np.where(np.isneginf(log_lambda), 0.0, out)


# --- control-limit policies ---------------------------------------------------


@dataclass(frozen=True)
class Constant:
    c: float

    family = "constant"

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("control limit must be nonnegative")

    def threshold(self, k, y, s=None):
        return np.full(np.shape(y), float(self.c))

    def with_c(self, c):
        return dataclasses.replace(self, c=c)


@dataclass(frozen=True)
class LinearDecrease:
    """C(k) = c + slope * (N + 1 - k)."""

    c: float
    slope: float
    N: int

    family = "decrease"

    def __post_init__(self):
        if min(self.c + self.slope * (self.N + 1 - k) for k in (1, self.N)) < 0:
            raise ValueError("control limit must be nonnegative on 1..N")

    def threshold(self, k, y, s=None):
        return np.full(np.shape(y), self.c + self.slope * (self.N + 1 - k))

    def with_c(self, c):
        return dataclasses.replace(self, c=c)


@dataclass(frozen=True)
class LinearIncrease:
    """C(k) = c + slope * (k + 1)."""

    c: float
    slope: float
    N: int

    family = "increase"

    def __post_init__(self):
        if min(self.c + self.slope * (k + 1) for k in (1, self.N)) < 0:
            raise ValueError("control limit must be nonnegative on 1..N")

    def threshold(self, k, y, s=None):
        return np.full(np.shape(y), self.c + self.slope * (k + 1))

    def with_c(self, c):
        return dataclasses.replace(self, c=c)


@dataclass(frozen=True)
class OptimalDynamic:
    """Limits read from a solved :class:`~netchange.solver.LimitTable`."""

    table: object

    family = "optimal"

    @property
    def c(self):
        return self.table.c

    def threshold(self, k, y, s=None):
        return self.table.evaluate(k, y, s if self.table.markov_order else None)


@dataclass
class RunResult:
    T: int
    y_path: np.ndarray
    cum_y: float
    cum_v: float


@dataclass
class Batch:
    """Per-replication results of a vectorised simulation."""

    T: np.ndarray
    cum_y: np.ndarray
    cum_v: np.ndarray

    @classmethod
    def concat(cls, parts):
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("T", "cum_y", "cum_v")))

    def __len__(self):
        return len(self.T)


def run_test(model, policy, weights: WeightSpec, N: int, rng, change_point=None) -> RunResult:
    """One run of the test on freshly sampled networks.

    Networks are drawn from the pre-change law unless ``change_point`` is
    given, in which case steps ``k >= change_point`` use the post-change law.
    """
    if N < 2:
        raise ValueError("horizon N must be at least 2")
    rng = np.random.default_rng(rng)
    stream = model.observations(rng, change_point)
    y = 0.0
    path = []
    cum_y = cum_v = 0.0
    for k in range(1, N + 1):
        log_lambda, stat = next(stream)
        cum_y += y
        cum_v += float(weights.v(y))
        y = step_statistic(y, weights, log_lambda)
        path.append(y)
        s = None if stat is None else int(stat[0])
        if y >= float(policy.threshold(k, np.float64(y), s)):
            return RunResult(k, np.array(path), cum_y, cum_v)
    cum_y += y
    cum_v += float(weights.v(y))
    path.append(y)
    return RunResult(N + 1, np.array(path), cum_y, cum_v)


def simulate_batch(model, policy, weights: WeightSpec, N: int, reps: int, rng, change_point=None) -> Batch:
    """Vectorised runs driven by edge counts drawn from their exact binomial law.

    The edge-count path of every replication is drawn in full, independent of
    the policy, so two policies fed the same generator state see the same
    observations.
    """
    if N < 2:
        raise ValueError("horizon N must be at least 2")
    rng = np.random.default_rng(rng)
    s = model.draw_initial_stats(rng, reps)
    y = np.zeros(reps)
    T = np.full(reps, N + 1, dtype=np.int64)
    alive = np.ones(reps, dtype=bool)
    cum_y = np.zeros(reps)
    cum_v = np.zeros(reps)
    for k in range(1, N + 1):
        post = change_point is not None and k >= change_point
        e = model.draw_stats(s, rng, post=post)
        log_lambda = model.log_ratio_stats(e, s)
        cum_y += np.where(alive, y, 0.0)
        cum_v += np.where(alive, weights.v(y), 0.0)
        y = np.where(alive, _step_batch(y, weights, log_lambda), 0.0)
        stop = alive & (y >= policy.threshold(k, y, e))
        T[stop] = k
        alive &= ~stop
        s = e
    cum_y += np.where(alive, y, 0.0)
    cum_v += np.where(alive, weights.v(y), 0.0)
    return Batch(T, cum_y, cum_v)
