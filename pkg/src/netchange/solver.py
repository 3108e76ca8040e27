"""Backward induction for the optimal dynamic control limits.

For a horizon ``N`` and adjustment coefficient ``c``::

    l_{N+1} = 0,   l_N(y) = c v(y)
    l_k(y[, s]) = c v(y) + E_0[ (l_{k+1}(Y', s') - Y')^+ | Y_k = y[, s] ]

with ``Y' = (y + w(y)) Lambda(s', s)`` and ``s'`` the next edge count. The
limits live on a y-grid (one row per previous edge count ``s`` for first-order
models) and are read back by linear interpolation in ``y``. The grid is
uniform up to ``y_linear`` and geometric beyond it, so it can reach far enough
right for every limit to drop below ``y`` without thinning out where the
statistic spends its time.

The conditional expectation is a sum over the next edge count. With
``inner="exact"`` its binomial pmf is used directly; with ``inner="mc"`` the
pmf is replaced by the empirical distribution of ``inner_samples`` draws per
(step, s), shared by every grid node.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridConfig:
    y_points: int = 256
    y_max: float | None = None  # None: grow until the grid dominates the limits
    y_linear: float | None = None  # end of the uniform part; None: max(4, 2c)
    inner: str = "exact"
    inner_samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.y_points < 16:
            raise ValueError("y_points must be at least 16")
        if self.y_max is not None and self.y_max <= 1:
            raise ValueError("y_max must exceed 1")
        if self.inner not in ("exact", "mc"):
            raise ValueError(f"inner must be 'exact' or 'mc', got {self.inner!r}")
        if self.inner == "mc" and self.inner_samples < 1000:
            raise ValueError("inner_samples must be at least 1000")


@dataclass(frozen=True)
class YGrid:
    """Nodes ``h*j`` for j <= n_lin, then ``h*n_lin*ratio**i`` (geometric tail)."""

    h: float
    n_lin: int
    ratio: float
    size: int

    @classmethod
    def build(cls, y_linear: float, y_max: float, size: int) -> "YGrid":
        y_max = max(y_max, y_linear)
        n_tail = 0 if y_max <= y_linear * 1.000001 else size // 2
        n_lin = size - 1 - n_tail
        per_unit = math.floor(n_lin / y_linear)
        h = 1.0 / per_unit if per_unit >= 1 else y_linear / n_lin  # keeps y = 1 on a node
        y_lin = h * n_lin
        ratio = (y_max / y_lin) ** (1.0 / n_tail) if n_tail and y_max > y_lin else 1.0
        if ratio <= 1.0:
            n_tail, n_lin, ratio = 0, size - 1, 1.0
        return cls(h, n_lin, ratio, size)

    @property
    def nodes(self) -> np.ndarray:
        lin = np.arange(self.n_lin + 1) * self.h
        tail = lin[-1] * self.ratio ** np.arange(1, self.size - self.n_lin)
        return np.concatenate([lin, tail])

    def locate(self, y):
        """Left node index and linear weight for each ``y``; clamped to the grid ends."""
        y = np.asarray(y, dtype=float)
        nodes = self.nodes
        y_lin = self.h * self.n_lin
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(
                y <= y_lin,
                y / self.h,
                self.n_lin + np.log(np.maximum(y, y_lin) / y_lin) / np.log(self.ratio),
            )
        u = np.clip(np.nan_to_num(u, nan=0.0, posinf=self.size), 0.0, self.size - 1)
        i0 = np.minimum(u.astype(np.int64), self.size - 2)
        # float rounding near a node can land one cell off
        i0 = np.where(y < nodes[i0], np.maximum(i0 - 1, 0), i0)
        i0 = np.where((i0 < self.size - 2) & (y >= nodes[np.minimum(i0 + 1, self.size - 1)]), i0 + 1, i0)
        lo, hi = nodes[i0], nodes[i0 + 1]
        frac = np.clip((np.minimum(y, nodes[-1]) - lo) / (hi - lo), 0.0, 1.0)
        return i0, frac

    def to_dict(self):
        return {"h": self.h, "n_lin": self.n_lin, "ratio": self.ratio, "size": self.size}


@dataclass
class LimitTable:
    """Limits ``l_k(c, y[, s])`` for k = 0..N on a y-grid."""

    N: int
    c: float
    markov_order: int
    grid: YGrid
    values: np.ndarray  # (N + 1, ny) or (N + 1, n_s, ny)
    meta: dict = field(default_factory=dict)

    @property
    def y_grid(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def y_max(self) -> float:
        return float(self.grid.nodes[-1])

    def evaluate(self, k, y, s=None):
        """Limit at step ``k``; 0 at ``k = N + 1``, linear in ``y``, clamped past the grid."""
        if not 0 <= k <= self.N + 1:
            raise ValueError(f"step {k} outside 0..{self.N + 1}")
        if (s is None) != (self.markov_order == 0):
            raise ValueError("statistic s must be given exactly when the model is first order")
        y = np.asarray(y, dtype=float)
        if k == self.N + 1:
            return np.zeros(y.shape)
        rows = self.values[k]
        i0, frac = self.grid.locate(y)
        if self.markov_order:
            s = np.broadcast_to(np.asarray(s), y.shape)
            if np.any((s < 0) | (s >= rows.shape[0])):
                raise ValueError("statistic outside the table")
            lo, hi = rows[s, i0], rows[s, i0 + 1]
        else:
            lo, hi = rows[i0], rows[i0 + 1]
        return lo + (hi - lo) * frac

    def save(self, path) -> None:
        header = {
            "N": self.N,
            "c": self.c,
            "markov_order": self.markov_order,
            "grid": self.grid.to_dict(),
            "meta": self.meta,
        }
        payload = {"header": np.array(json.dumps(header)), "values": self.values}
        _atomic_write(path, lambda fh: np.savez(fh, **payload))

    @classmethod
    def load(cls, path) -> "LimitTable":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            return cls(
                N=header["N"],
                c=header["c"],
                markov_order=header["markov_order"],
                grid=YGrid(**header["grid"]),
                values=data["values"].copy(),
                meta=header.get("meta", {}),
            )


def _atomic_write(path, writer) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def evaluate_limit(table: LimitTable, k: int, y, s=None):
    return table.evaluate(k, y, s)


_PMF_FLOOR = 1e-18  # transitions below this mass are dropped from the sums


def _transitions(model, markov_order, grid, N):
    """Per-step pmf of the next edge count, shape (N, n_s, n_e), and log-ratios (n_s, n_e)."""
    m = model.n_slots
    s = np.arange(m + 1) if markov_order else np.array([0])
    e = np.arange(m + 1)
    log_lam = model.log_ratio_stats(e[None, :], s[:, None])
    if grid.inner == "exact":
        pmf = np.broadcast_to(model.stat_pmf(s), (N,) + (len(s), m + 1))
        return pmf, log_lam
    pmf = np.empty((N, len(s), m + 1))
    for k in range(N):
        for i, si in enumerate(s):
            rng = np.random.default_rng(np.random.SeedSequence(grid.seed, spawn_key=(k, int(si))))
            draws = model.draw_stats(np.full(grid.inner_samples, si), rng)
            pmf[k, i] = np.bincount(draws, minlength=m + 1) / grid.inner_samples
    return pmf, log_lam


def _backward(model, weights, c, N, pmf, log_lam, ygrid):
    order = model.markov_order
    y_nodes = ygrid.nodes
    cv = c * weights.v(y_nodes)
    carry = weights.carry(y_nodes)
    n_s, n_e = log_lam.shape

    # (s, e) pairs that carry mass at some step, sorted by s for the segment sums
    s_idx, e_idx = np.nonzero((pmf > _PMF_FLOOR).any(axis=0))
    with np.errstate(over="ignore", invalid="ignore"):
        y_next = carry[None, :] * np.exp(log_lam[s_idx, e_idx])[:, None]  # (pairs, ny)
    y_next = np.where(np.isneginf(log_lam[s_idx, e_idx])[:, None], 0.0, y_next)
    i0, frac = ygrid.locate(y_next)
    starts = np.searchsorted(s_idx, np.arange(n_s))
    present = np.isin(np.arange(n_s), s_idx)

    values = np.empty((N + 1, n_s, len(y_nodes)))
    values[N] = cv
    for k in range(N - 1, -1, -1):
        nxt = values[k + 1]
        rows = nxt[e_idx] if order else nxt[np.zeros_like(e_idx)]
        lo = np.take_along_axis(rows, i0, axis=1)
        hi = np.take_along_axis(rows, i0 + 1, axis=1)
        with np.errstate(invalid="ignore"):
            gain = np.maximum(lo + (hi - lo) * frac - y_next, 0.0)
        w = pmf[k, s_idx, e_idx]
        gain = np.where(w[:, None] > 0, gain * w[:, None], 0.0)
        expect = np.zeros((n_s, len(y_nodes)))
        expect[present] = np.add.reduceat(gain, starts[present], axis=0)
        values[k] = cv[None, :] + expect
    return values if order else values[:, 0, :]


def solve_limits(model, weights, c: float, N: int, grid: GridConfig | None = None,
                 y_start: float | None = None) -> LimitTable:
    """Optimal dynamic limits for ``model`` under ``weights`` at coefficient ``c``.

    ``y_start`` is a first guess for the automatic grid reach (e.g. the
    ``y_max`` of a neighbouring solve); it only saves retries.
    """
    grid = grid or GridConfig()
    if c < 0:
        raise ValueError("c must be nonnegative")
    if N < 2:
        raise ValueError("horizon N must be at least 2")
    if model.markov_order not in (0, 1):
        raise ValueError(f"Markov order {model.markov_order} is not supported (only 0 or 1)")
    # Every limit must fall below y at the grid end: then [l - Y]^+ vanishes
    # beyond y_max and clamping there is harmless.
    y_linear = grid.y_linear or max(4.0, 2.0 * c)
    fixed = grid.y_max is not None
    target = grid.y_max if fixed else max(y_linear, y_start or 0.0)
    pmf, log_lam = _transitions(model, model.markov_order, grid, N)
    for _ in range(60):
        ygrid = YGrid.build(y_linear, target, grid.y_points)
        values = _backward(model, weights, c, N, pmf, log_lam, ygrid)
        top = float(values[..., -1].max())
        y_end = float(ygrid.nodes[-1])
        if top < y_end:
            break
        if fixed:
            raise ValueError(
                f"y_max={y_end:.4g} does not dominate the limits at the grid end "
                f"(max {top:.4g}); raise y_max"
            )
        target = 1.5 * top
    else:
        raise RuntimeError("could not find a y-grid dominating the limit table")
    meta = {"model": model.describe(), "weights": weights.name, "inner": grid.inner,
            "inner_samples": grid.inner_samples, "seed": grid.seed}
    return LimitTable(N=N, c=float(c), markov_order=model.markov_order, grid=ygrid,
                      values=values, meta=meta)
