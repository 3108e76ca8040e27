"""Exhaustive-enumeration ground truth on tiny instances.

Everything here sums over every network path ``X_0..X_N``, so it is exact up
to floating point and only feasible for a handful of nodes and steps. Masses
may be normalised (a probability law) or the raw measure densities; in the
latter case a path's mass is the product of raw densities, and conditional
expectations given a history are ratios of full-path masses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .detector import Constant, LinearDecrease, LinearIncrease
from .network import all_networks, edges

PATH_BUDGET = 10**6
RULE_BUDGET = 5 * 10**6


class BudgetExceeded(ValueError):
    pass


class EnumeratedSpace:
    """All networks on ``d`` nodes with one-step masses and measure ratios.

    ``trans[i, j]`` is the mass of network ``j`` given previous network ``i``
    (rows identical for independent models), ``init`` the mass of ``X_0``
    and ``lam[i, j]`` the post/pre density ratio, taken from the density
    difference rather than the model's own ratio routine.
    """

    def __init__(self, model, normalized: bool = True):
        self.model = model
        self.normalized = normalized
        self.networks = all_networks(model.d, model.directed)
        e = np.array([edges(x) for x in self.networks])
        self.edges = e
        s = e if model.markov_order else np.zeros_like(e)
        shape = (len(e), len(e))
        log_pre = np.broadcast_to(model.log_density_stats(e[None, :], s[:, None], post=False), shape).astype(float)
        log_post = np.broadcast_to(model.log_density_stats(e[None, :], s[:, None], post=True), shape).astype(float)
        log_init = np.asarray(model.log_initial_density_stats(e), dtype=float) * np.ones(len(e))
        trans = np.exp(log_pre)
        init = np.exp(log_init)
        if normalized:
            trans = trans / trans.sum(axis=1, keepdims=True)
            init = init / init.sum()
        with np.errstate(invalid="ignore"):
            lam = np.exp(log_post - log_pre)
        lam = np.where(np.isneginf(log_post), 0.0, lam)
        lam = np.where(np.isneginf(log_pre) & np.isfinite(log_post), np.inf, lam)
        self.trans, self.init, self.lam = trans, init, lam
        both = np.isfinite(log_pre) & np.isfinite(log_post)
        if not np.all(lam[both] > 0):
            raise ValueError("measure ratio must be positive where both measures are")
        if normalized and not np.allclose(trans.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("normalised transition masses do not sum to one")

    @property
    def size(self) -> int:
        return len(self.networks)

    @property
    def constant_normaliser(self) -> bool:
        """True when every conditioning value has the same total mass."""
        z = self.trans.sum(axis=1)
        return bool(np.allclose(z, z[0], rtol=1e-12, atol=0))

    def remaining(self, N: int) -> np.ndarray:
        """``R[k, g]``: total mass of all continuations X_{k+1}..X_N after X_k = g."""
        R = np.ones((N + 1, self.size))
        for k in range(N - 1, -1, -1):
            R[k] = self.trans @ R[k + 1]
        return R


# --- path enumeration ---------------------------------------------------------------


@dataclass
class PathSet:
    """Every positive-mass path with its statistic trajectory and stopping time."""

    graph: np.ndarray  # (P, N + 1) network indices X_0..X_N
    mass: np.ndarray  # (P,)
    lam: np.ndarray  # (P, N + 1); column 0 unused
    Y: np.ndarray  # (P, N + 1) Y_0..Y_N
    T: np.ndarray  # (P,)
    N: int
    weights: object

    def cum_y(self):
        """sum_{m=1}^{T} Y_{m-1}, with Y_N counted at T = N + 1."""
        steps = np.arange(self.N + 1)
        return np.where(steps[None, :] < self.T[:, None], self.Y, 0.0).sum(axis=1)

    def cum_v(self):
        steps = np.arange(self.N + 1)
        return np.where(steps[None, :] < self.T[:, None], self.weights.v(self.Y), 0.0).sum(axis=1)


def _check_paths(space, N, budget):
    count = space.size ** (N + 1)
    if count > budget:
        raise BudgetExceeded(f"{space.size}**{N + 1} = {count} paths exceed the budget of {budget}")


def enumerate_paths(space: EnumeratedSpace, policy, weights, N: int, budget: int = PATH_BUDGET) -> PathSet:
    _check_paths(space, N, budget)
    G = space.size
    graph = np.array(list(itertools.product(range(G), repeat=N + 1)), dtype=np.int64).reshape(-1, N + 1)
    mass = space.init[graph[:, 0]].copy()
    for j in range(1, N + 1):
        mass *= space.trans[graph[:, j - 1], graph[:, j]]
    keep = mass > 0
    graph, mass = graph[keep], mass[keep]
    P = len(graph)
    lam = np.ones((P, N + 1))
    Y = np.zeros((P, N + 1))
    T = np.full(P, N + 1, dtype=np.int64)
    alive = np.ones(P, dtype=bool)
    by_graph = getattr(policy, "by_graph", False)
    for k in range(1, N + 1):
        lam[:, k] = space.lam[graph[:, k - 1], graph[:, k]]
        Y[:, k] = weights.carry(Y[:, k - 1]) * lam[:, k]
        state = graph[:, k] if by_graph else space.edges[graph[:, k]]
        stop = alive & (Y[:, k] >= policy.threshold(k, Y[:, k], state))
        T[stop] = k
        alive &= ~stop
    return PathSet(graph, mass, lam, Y, T, N, weights)


def exact_expectation(space, functional, policy, weights, N, change_point=None, horizon=None,
                      budget: int = PATH_BUDGET) -> float:
    """Sum over paths of functional x path mass (x prod_{j=k}^{n} Lambda_j with a change at k)."""
    paths = enumerate_paths(space, policy, weights, N, budget)
    vals = np.asarray(functional(paths), dtype=float) * np.ones(len(paths.mass))
    w = paths.mass
    if change_point is not None:
        n = N if horizon is None else horizon
        w = w * paths.lam[:, change_point:n + 1].prod(axis=1)
    return float(np.sum(vals * w))


def exact_arl0(space, policy, weights, N, budget=PATH_BUDGET) -> float:
    paths = enumerate_paths(space, policy, weights, N, budget)
    return float(np.sum(paths.mass * paths.T) / paths.mass.sum())


def exact_jn(space, policy, weights, N, budget=PATH_BUDGET) -> float:
    paths = enumerate_paths(space, policy, weights, N, budget)
    den = np.sum(paths.mass * paths.cum_v())
    return float(np.sum(paths.mass * paths.cum_y()) / den)


# --- exact limits ---------------------------------------------------------------------


class ExactLimits:
    """l_k(c, y, X_k) by direct recursion over the one-step law, memoised.

    Conditioning is on the network itself; for independent models every
    network shares one row and the limit depends on ``y`` only.
    """

    by_graph = True

    def __init__(self, space: EnumeratedSpace, weights, c: float, N: int):
        if c < 0:
            raise ValueError("c must be nonnegative")
        self.space, self.weights, self.c, self.N = space, weights, float(c), N
        self._R = space.remaining(N)
        self._order = space.model.markov_order
        self.value = lru_cache(maxsize=None)(self._value)

    def _value(self, k: int, y: float, g: int) -> float:
        if k == self.N + 1:
            return 0.0
        base = self.c * float(self.weights.v(y))
        if k == self.N:
            return base
        sp = self.space
        carry = float(self.weights.carry(y))
        total, norm = 0.0, 0.0
        for g2 in range(sp.size):
            m = sp.trans[g, g2] * self._R[k + 1, g2]
            if m <= 0:
                continue
            y2 = carry * sp.lam[g, g2]
            total += m * max(self.value(k + 1, y2, self._key(g2)) - y2, 0.0)
            norm += m
        return base + total / norm

    def _key(self, g):
        return int(g) if self._order else 0

    def __call__(self, k, y, g=0):
        return self.value(int(k), float(y), self._key(g))

    def threshold(self, k, y, g):
        y = np.asarray(y, dtype=float)
        g = np.broadcast_to(np.asarray(g), y.shape)
        out = [self(k, yi, gi) for yi, gi in zip(y.ravel(), g.ravel())]
        return np.array(out).reshape(y.shape)

    def reachable(self, budget=PATH_BUDGET):
        """(k, y, g) triples visited by the pre-change law for k = 0..N."""
        _check_paths(self.space, self.N, budget)
        out = {(0, 0.0, g) for g in range(self.space.size) if self.space.init[g] > 0}
        frontier = out
        for k in range(1, self.N + 1):
            nxt = set()
            for _, y, g in frontier:
                carry = float(self.weights.carry(y))
                for g2 in range(self.space.size):
                    if self.space.trans[g, g2] > 0:
                        nxt.add((k, carry * self.space.lam[g, g2], g2))
            out |= nxt
            frontier = nxt
        return sorted(out)


def exact_limits(space, weights, c, N) -> ExactLimits:
    return ExactLimits(space, weights, c, N)


def compare_with_table(exact: ExactLimits, table) -> float:
    """Max-abs gap between a solved table and the exact limits on the reachable set."""
    worst = 0.0
    for k, y, g in exact.reachable():
        s = int(exact.space.edges[g]) if table.markov_order else None
        worst = max(worst, abs(float(table.evaluate(k, y, s)) - exact(k, y, g)))
    return worst


# --- identity between the two J_N numerators ------------------------------------------


@dataclass
class IdentityReport:
    direct: float
    via_y: float
    residual: float
    passed: bool


def verify_identity_a1(space, policy, weights, N, tol=1e-10, budget=PATH_BUDGET) -> IdentityReport:
    """sum_k ME_k(w_k (T-k)^+) against ME_0(sum_{m<=T} Y_{m-1}).

    The direct side writes (T-k)^+ as sum_{n=k}^{N} 1{T > n}; each term is
    F_n-measurable and changes measure with prod_{j=k}^{n} Lambda_j.
    """
    paths = enumerate_paths(space, policy, weights, N, budget)
    direct = 0.0
    for k in range(1, N + 1):
        wk = weights.w(paths.Y[:, k - 1])
        prod = np.ones(len(paths.mass))
        for n in range(k, N + 1):
            prod = prod * paths.lam[:, n]
            direct += float(np.sum(paths.mass * wk * (paths.T > n) * prod))
    via_y = float(np.sum(paths.mass * paths.cum_y()))
    scale = max(abs(direct), abs(via_y))
    residual = abs(direct - via_y) / scale if scale > 0 else 0.0
    return IdentityReport(direct, via_y, residual, residual <= tol)


# --- optimality over all adapted stopping times ----------------------------------------


@dataclass
class Step1Report:
    c: float
    n_rules: int
    value_star: float
    value_min: float
    n_deviating: int  # rules differing from T* on positive mass
    n_strict: int  # ... of which some deviation sits where Y_k != l_k
    n_tie_only: int  # ... of which every deviation sits on a tie Y_k == l_k
    min_strict_gap: float
    max_tie_gap: float
    passed: bool

    @property
    def verbatim_strict(self) -> bool:
        """Every positive-mass deviation is strictly worse (no tie-only deviations)."""
        return self.passed and self.n_tie_only == 0


def count_stopping_times(space, N) -> int:
    """Number of adapted stopping times in [1, N + 1] on the enumerated space."""
    f = 2  # at step N: stop, or run on to the forced stop at N + 1
    for _ in range(N - 1):
        f = 1 + f ** space.size
    return (f ** space.size) ** space.size


def verify_step1_inequality(space, weights, c, N, tie_tol=1e-12, budget=RULE_BUDGET) -> Step1Report:
    """Enumerate every adapted stopping time and compare ME_0(xi_T) with T*.

    ``xi_n = sum_{k=1}^{n} (Y_{k-1} - c v_k)``. Each node of the history tree
    contributes ``0`` (stop) or its continuation term plus the Minkowski sum
    of its children's value sets, so all rules are evaluated at once.
    """
    n_rules = count_stopping_times(space, N)
    if n_rules > budget:
        raise BudgetExceeded(f"{n_rules} stopping rules exceed the budget of {budget}")
    limits = ExactLimits(space, weights, c, N)
    R = space.remaining(N)
    G = space.size
    v = lambda y: float(weights.v(y))

    def node(k, mu, y, g):
        """Value sets with flags (positive-mass deviation, strict deviation)."""
        full = mu * R[k, g]
        cont_term = full * (y - c * v(y))
        if k == N:
            vals, dev, strict = np.array([cont_term]), np.array([False]), np.array([False])
        else:
            vals, dev, strict = np.array([cont_term]), np.array([False]), np.array([False])
            carry = float(weights.carry(y))
            for g2 in range(G):
                m = mu * space.trans[g, g2]
                if m <= 0:
                    continue
                cv, cd, cs = node(k + 1, m, carry * space.lam[g, g2], g2)
                vals = (vals[:, None] + cv[None, :]).ravel()
                dev = (dev[:, None] | cd[None, :]).ravel()
                strict = (strict[:, None] | cs[None, :]).ravel()
        lk = limits(k, y, g)
        stop_star = y >= lk
        positive = full > 0
        tie = abs(y - lk) <= tie_tol * max(1.0, abs(lk))
        if stop_star:
            dev = dev | positive
            strict = strict | (positive and not tie)
            stop_flags = (False, False)
        else:
            stop_flags = (positive, positive and not tie)
        return (np.concatenate([[0.0], vals]), np.concatenate([[stop_flags[0]], dev]),
                np.concatenate([[stop_flags[1]], strict]))

    total = float(space.init @ R[0])
    vals, dev, strict = np.array([-c * v(0.0) * total]), np.array([False]), np.array([False])
    for g0 in range(G):
        if space.init[g0] <= 0:
            continue
        for g1 in range(G):
            m = space.init[g0] * space.trans[g0, g1]
            if m <= 0:
                continue
            cv, cd, cs = node(1, m, float(weights.carry(0.0)) * space.lam[g0, g1], g1)
            vals = (vals[:, None] + cv[None, :]).ravel()
            dev = (dev[:, None] | cd[None, :]).ravel()
            strict = (strict[:, None] | cs[None, :]).ravel()

    xi_star = lambda p: _xi(p, c)
    value_star = exact_expectation(space, xi_star, limits, weights, N)
    value_min = float(vals.min())
    atol = 1e-12 * max(1.0, abs(value_star))
    tie_only = dev & ~strict
    gaps = vals - value_star
    min_strict_gap = float(gaps[strict].min()) if strict.any() else math.inf
    max_tie_gap = float(np.abs(gaps[tie_only]).max()) if tie_only.any() else 0.0
    passed = (
        value_min >= value_star - atol
        and bool(np.all(np.abs(gaps[~dev]) <= atol))
        and min_strict_gap > 0
        and max_tie_gap <= atol
    )
    return Step1Report(float(c), len(vals), value_star, value_min, int(dev.sum()), int(strict.sum()),
                       int(tie_only.sum()), min_strict_gap, max_tie_gap, passed)


def _xi(paths: PathSet, c: float):
    """xi_T = sum_{k=1}^{T} (Y_{k-1} - c v_k)."""
    return paths.cum_y() - c * paths.cum_v()


def example_policies(c: float, N: int, slope: float = 0.05):
    """One policy of each fixed shape plus nothing else; exact limits are added by callers."""
    return [Constant(c), LinearDecrease(c, slope, N), LinearIncrease(c, slope, N)]


# --- verification suite used by the CLI -------------------------------------------------


def run_verification(models, weights, N=3, cs=(0.1, 0.2, 0.5, 1.0), include_step1=False, step1_N=(2,),
                     path_budget=PATH_BUDGET, rule_budget=RULE_BUDGET):
    """Yield ``(name, passed, detail)`` for every oracle check on every model."""
    for model in models:
        tag = f"{model.kind}(d={model.d})"
        for normalized in (True, False):
            space = EnumeratedSpace(model, normalized)
            if not normalized and not space.constant_normaliser:
                continue
            mode = "" if normalized else " raw"
            for c in cs:
                exact = ExactLimits(space, weights, c, N)
                for pol in example_policies(c, N) + [exact]:
                    rep = verify_identity_a1(space, pol, weights, N, budget=path_budget)
                    name = type(pol).__name__
                    yield f"identity {tag}{mode} {name} c={c}", rep.passed, f"residual {rep.residual:.2e}"
                if normalized:
                    ok = all(exact(k, y, g) >= c * float(weights.v(y)) - 1e-15 for k, y, g in exact.reachable())
                    yield f"limits >= c v {tag} c={c}", ok, ""
            if include_step1 and model.d == 2:
                for n in step1_N:
                    for c in cs:
                        rep = verify_step1_inequality(space, weights, c, n, budget=rule_budget)
                        detail = (f"{rep.n_rules} rules, {rep.n_strict} strict, {rep.n_tie_only} tie-only, "
                                  f"min gap {rep.min_strict_gap:.3g}")
                        yield f"step-I {tag}{mode} N={n} c={c}", rep.passed, detail
