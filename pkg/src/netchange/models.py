"""Pre/post-change measure densities on networks and the measure-ratio statistic.

Every built-in density factorises over edge slots, so the normalised law of a
network is independent Bernoulli per slot and the edge count is the only
statistic that the ratio and the transition law read. Densities are handled
in the log domain; ``log_const`` is a common log-constant carried by both the
pre- and post-change densities and never enters a ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import binom

from .network import Network, edges, n_slots, sample_bernoulli_graph


def bernoulli_log_mass(e, m, p):
    """log of p**e * (1-p)**(m-e) with 0*log(0) = 0; -inf where impossible."""
    e = np.asarray(e, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        on = np.where(e > 0, e * np.log(p), 0.0)
        off = np.where(m - e > 0, (m - e) * np.log1p(-p), 0.0)
    return on + off


def _as_stat(prev_stat, dim=1):
    s = np.atleast_1d(np.asarray(prev_stat))
    if s.shape != (dim,):
        raise ValueError(f"sufficient statistic must have shape ({dim},), got {s.shape}")
    return s[0]


class MeasureModel:
    """Base class: subclasses supply edge probabilities and log densities per edge count.

    Scalar methods take ``Network`` objects; the ``*_stats`` methods are the
    vectorised forms on edge counts used by the batch simulator and the
    limit solver.
    """

    kind: str = "abstract"
    markov_order: int = 0
    stat_dim: int = 1

    d: int
    directed: bool
    log_const: float

    @property
    def n_slots(self) -> int:
        return n_slots(self.d, self.directed)

    # --- per-kind hooks (vectorised over edge counts) ------------------
    def edge_prob_pre(self, s):
        raise NotImplementedError

    def edge_prob_post(self, s):
        raise NotImplementedError

    def edge_prob_initial(self) -> float:
        return float(self.edge_prob_pre(0))

    def log_density_stats(self, e, s, post=False):
        """Unnormalised conditional log measure density of a network with ``e`` edges."""
        raise NotImplementedError

    def log_initial_density_stats(self, e):
        return self.log_density_stats(e, 0, post=False)

    def log_ratio_stats(self, e, s):
        raise NotImplementedError

    # --- network-level interface -------------------------------------
    def _prev(self, prev_stat):
        if prev_stat is None:
            if self.markov_order == 0:
                return 0
            raise ValueError(f"{self.kind} needs the previous network's statistic")
        s = _as_stat(prev_stat, self.stat_dim)
        return 0 if self.markov_order == 0 else s

    def sufficient_stat(self, x: Network) -> np.ndarray:
        return np.array([edges(x)])

    def log_measure_pre(self, x: Network, prev_stat=None) -> float:
        return float(self.log_density_stats(edges(x), self._prev(prev_stat), post=False))

    def log_measure_post(self, x: Network, prev_stat=None) -> float:
        return float(self.log_density_stats(edges(x), self._prev(prev_stat), post=True))

    def log_measure_initial(self, x: Network) -> float:
        return float(self.log_initial_density_stats(edges(x)))

    def log_ratio(self, x: Network, prev_stat=None) -> float:
        """log of the post/pre measure ratio; -inf when the post-change measure is zero."""
        return float(self.log_ratio_stats(edges(x), self._prev(prev_stat)))

    def sample_initial(self, rng: np.random.Generator) -> Network:
        return sample_bernoulli_graph(self.d, self.directed, self.edge_prob_initial(), rng)

    def sample_pre_change(self, prev_stat, rng: np.random.Generator) -> Network:
        p = float(self.edge_prob_pre(self._prev(prev_stat)))
        return sample_bernoulli_graph(self.d, self.directed, p, rng)

    def sample_post_change(self, prev_stat, rng: np.random.Generator) -> Network:
        p = float(self.edge_prob_post(self._prev(prev_stat)))
        return sample_bernoulli_graph(self.d, self.directed, p, rng)

    def observations(self, rng: np.random.Generator, change_point=None):
        """Endless stream of ``(log Lambda_k, stat_k)`` for k = 1, 2, ... from sampled networks."""
        x = self.sample_initial(rng)
        s = self.sufficient_stat(x)
        k = 1
        while True:
            if change_point is not None and k >= change_point:
                x = self.sample_post_change(s, rng)
            else:
                x = self.sample_pre_change(s, rng)
            yield self.log_ratio(x, s), self.sufficient_stat(x)
            s = self.sufficient_stat(x)
            k += 1

    # --- edge-count level ----------------------------------------------
    def draw_initial_stats(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.binomial(self.n_slots, self.edge_prob_initial(), size)

    def draw_stats(self, s, rng: np.random.Generator, post=False) -> np.ndarray:
        """Edge counts of the next networks given previous counts ``s`` (array)."""
        s = np.asarray(s)
        p = self.edge_prob_post(s) if post else self.edge_prob_pre(s)
        return rng.binomial(self.n_slots, np.broadcast_to(p, s.shape))

    def stat_pmf(self, s, post=False) -> np.ndarray:
        """pmf of the next edge count over 0..n_slots, one row per entry of ``s``."""
        s = np.atleast_1d(np.asarray(s))
        p = self.edge_prob_post(s) if post else self.edge_prob_pre(s)
        p = np.broadcast_to(np.asarray(p, dtype=float), s.shape)
        e = np.arange(self.n_slots + 1)
        return binom.pmf(e[None, :], self.n_slots, p[:, None])

    def describe(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "directed": self.directed}
        out.update(self._params())
        return out

    def _params(self) -> dict:
        return {}


@dataclass(frozen=True)
class IndepErgmEdges(MeasureModel):
    """Independent networks with density exp(theta * edges(x))."""

    theta0: float = -2.0
    theta1: float = -2.2
    d: int = 10
    directed: bool = False
    log_const: float = 0.0

    kind = "indep_ergm_edges"
    markov_order = 0

    def __post_init__(self):
        if self.theta0 == self.theta1:
            raise ValueError("theta0 and theta1 must differ, otherwise no change exists")

    def edge_prob_pre(self, s):
        return np.broadcast_to(expit(self.theta0), np.shape(s))

    def edge_prob_post(self, s):
        return np.broadcast_to(expit(self.theta1), np.shape(s))

    def log_density_stats(self, e, s, post=False):
        theta = self.theta1 if post else self.theta0
        return theta * np.asarray(e, dtype=float) + self.log_const

    def log_ratio_stats(self, e, s):
        return (self.theta1 - self.theta0) * np.asarray(e, dtype=float)

    def _params(self):
        return {"theta0": self.theta0, "theta1": self.theta1}


@dataclass(frozen=True)
class MarkovErgmEdgesCross(MeasureModel):
    """First-order chain with density exp(theta * edges(x_prev) * edges(x)); X_0 uniform."""

    theta0: float = -0.08
    theta1: float = -0.10
    d: int = 10
    directed: bool = False
    log_const: float = 0.0

    kind = "markov_ergm_cross"
    markov_order = 1

    def __post_init__(self):
        if self.theta0 == self.theta1:
            raise ValueError("theta0 and theta1 must differ, otherwise no change exists")

    def edge_prob_pre(self, s):
        return expit(self.theta0 * np.asarray(s, dtype=float))

    def edge_prob_post(self, s):
        return expit(self.theta1 * np.asarray(s, dtype=float))

    def edge_prob_initial(self) -> float:
        return 0.5

    def log_density_stats(self, e, s, post=False):
        theta = self.theta1 if post else self.theta0
        return theta * np.asarray(s, dtype=float) * np.asarray(e, dtype=float) + self.log_const

    def log_initial_density_stats(self, e):
        return np.zeros(np.shape(e)) + self.log_const

    def log_ratio_stats(self, e, s):
        return (self.theta1 - self.theta0) * np.asarray(s, dtype=float) * np.asarray(e, dtype=float)

    def _params(self):
        return {"theta0": self.theta0, "theta1": self.theta1}


@dataclass(frozen=True)
class IndepER(MeasureModel):
    """Independent Erdos-Renyi networks, link probability p0 before and p1 after the change."""

    p0: float = 0.5
    p1: float = 0.6
    d: int = 10
    directed: bool = False
    log_const: float = 0.0

    kind = "indep_er"
    markov_order = 0

    def __post_init__(self):
        for name in ("p0", "p1"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {p}")
        if self.p0 == self.p1:
            raise ValueError("p0 and p1 must differ, otherwise no change exists")

    def edge_prob_pre(self, s):
        return np.broadcast_to(self.p0, np.shape(s))

    def edge_prob_post(self, s):
        return np.broadcast_to(self.p1, np.shape(s))

    def log_density_stats(self, e, s, post=False):
        p = self.p1 if post else self.p0
        return bernoulli_log_mass(e, self.n_slots, p) + self.log_const

    def log_ratio_stats(self, e, s):
        e = np.asarray(e, dtype=float)
        m = self.n_slots
        return e * np.log(self.p1 / self.p0) + (m - e) * np.log((1 - self.p1) / (1 - self.p0))

    def _params(self):
        return {"p0": self.p0, "p1": self.p1}


@dataclass(frozen=True)
class MarkovER(MeasureModel):
    """First-order Erdos-Renyi chain: link probability edges(x_prev) / denom.

    Pre-change uses ``denom_pre`` (default: the slot count), post-change
    ``denom_post`` (default: twice that). X_0 is Erdos-Renyi(p_init).
    """

    p_init: float = 0.2
    d: int = 10
    directed: bool = False
    denom_pre: float | None = None
    denom_post: float | None = None
    log_const: float = 0.0

    kind = "markov_er"
    markov_order = 1

    def __post_init__(self):
        if not 0.0 <= self.p_init <= 1.0:
            raise ValueError(f"p_init must lie in [0, 1], got {self.p_init}")
        m = n_slots(self.d, self.directed)
        if self.denom_pre is None:
            object.__setattr__(self, "denom_pre", float(m))
        if self.denom_post is None:
            object.__setattr__(self, "denom_post", 2.0 * m)
        if self.denom_pre < m or self.denom_post < m:
            raise ValueError("denominators below the slot count give probabilities above 1")
        if self.denom_pre == self.denom_post:
            raise ValueError("denom_pre and denom_post must differ, otherwise no change exists")

    def edge_prob_pre(self, s):
        return np.asarray(s, dtype=float) / self.denom_pre

    def edge_prob_post(self, s):
        return np.asarray(s, dtype=float) / self.denom_post

    def edge_prob_initial(self) -> float:
        return self.p_init

    def log_density_stats(self, e, s, post=False):
        p = self.edge_prob_post(s) if post else self.edge_prob_pre(s)
        return bernoulli_log_mass(e, self.n_slots, p) + self.log_const

    def log_initial_density_stats(self, e):
        return bernoulli_log_mass(e, self.n_slots, self.p_init) + self.log_const

    def log_ratio_stats(self, e, s):
        # Deterministic laws: pre-impossible x gets +inf, post-impossible x gets -inf.
        m = self.n_slots
        pre = bernoulli_log_mass(e, m, self.edge_prob_pre(s))
        post = bernoulli_log_mass(e, m, self.edge_prob_post(s))
        with np.errstate(invalid="ignore"):
            out = post - pre
        out = np.where(np.isneginf(post), -np.inf, out)
        return np.where(np.isneginf(pre) & np.isfinite(post), np.inf, out)

    def _params(self):
        return {"p_init": self.p_init, "denom_pre": self.denom_pre, "denom_post": self.denom_post}


class ScriptedModel:
    """Test stub that replays a fixed sequence of log-ratios instead of sampling networks."""

    kind = "scripted"
    markov_order = 0

    def __init__(self, log_lambdas):
        self.log_lambdas = tuple(float(v) for v in log_lambdas)

    @classmethod
    def from_ratios(cls, ratios):
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(ratios, dtype=float)))

    def observations(self, rng=None, change_point=None):
        for ll in self.log_lambdas:
            yield ll, None
        raise ValueError("scripted sequence exhausted before the horizon")


MODEL_KINDS = {
    cls.kind: cls for cls in (IndepErgmEdges, MarkovErgmEdgesCross, IndepER, MarkovER)
}


def build_model(spec: dict) -> MeasureModel:
    """Construct a model from a ``{"kind": ..., **params}`` mapping."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind](**spec)
