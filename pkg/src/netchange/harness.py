"""Monte Carlo estimation of ARL0 and J_N, calibration of c, and scenario runs.

Seeding: every simulation is split into fixed-size chunks and chunk ``i`` of
purpose ``p`` draws from ``SeedSequence(seed, spawn_key=(p, i))``. Results
therefore do not depend on the number of workers, and two calls with the same
seed and purpose see the same observations (common random numbers).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binom

from .detector import CUSUM, Batch, Constant, LinearDecrease, LinearIncrease, OptimalDynamic, WeightSpec, simulate_batch
from .solver import GridConfig, LimitTable, _atomic_write, solve_limits

log = logging.getLogger(__name__)

CHUNK = 20_000
MIN_REPS = 100
FAMILIES = ("constant", "decrease", "increase", "optimal")
LABELS = {"constant": "T_cons", "decrease": "T_de", "increase": "T_in", "optimal": "T*"}
CSV_HEADER = ("policy", "c_gamma", "arl0", "arl0_se", "jn", "jn_se")

# stream tags for SeedSequence spawn keys
PURPOSE = {"calibration": 1, "final": 2, "pilot": 3, "direct": 4}


def default_workers() -> int:
    return max(1, int(os.environ.get("NETCHANGE_WORKERS", "1")))


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def __iter__(self):
        return iter((self.value, self.se))

    def __str__(self):
        digits = 4 if self.se >= 1e-3 or self.se != self.se else 6
        return f"{self.value:.{digits}f} ± {self.se:.{digits}f}"


@dataclass(frozen=True)
class PolicySpec:
    family: str
    slope: float = 0.0
    c_bracket: tuple[float, float] = (0.0, 1.0)
    gamma: float | None = None  # overrides the scenario target for this policy

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown policy family {self.family!r}; expected one of {FAMILIES}")
        lo, hi = self.c_bracket
        if not 0 <= lo < hi:
            raise ValueError(f"c bracket must satisfy 0 <= c_lo < c_hi, got {self.c_bracket}")

    @property
    def label(self) -> str:
        return LABELS[self.family]


@dataclass(frozen=True)
class ExperimentConfig:
    model: object
    N: int = 60
    weights: WeightSpec = CUSUM
    policies: tuple[PolicySpec, ...] = tuple(PolicySpec(f) for f in FAMILIES)
    gamma: float = 40.0
    reps_calibration: int = 10_000
    reps_final: int = 10_000
    epsilon_arl: float = 0.5
    grid: GridConfig = field(default_factory=GridConfig)
    seed: int = 0
    workers: int | None = None
    max_iter: int = 60

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("horizon N must be at least 2")
        if min(self.reps_calibration, self.reps_final) < MIN_REPS:
            raise ValueError(f"replication counts must be at least {MIN_REPS}")
        if self.epsilon_arl <= 0:
            raise ValueError("epsilon_arl must be positive")
        for g in [self.gamma] + [p.gamma for p in self.policies if p.gamma is not None]:
            # with v = 1: ME0(v_1) = 1 < gamma < N + 1 = ME0(sum of v_k up to N+1)
            if not 1.0 < g < self.N + 1:
                raise ValueError(f"gamma={g} must lie strictly between 1 and N + 1 = {self.N + 1}")

    def gamma_for(self, spec: PolicySpec) -> float:
        return self.gamma if spec.gamma is None else spec.gamma


# --- simulation ----------------------------------------------------------------


def _chunk_job(args):
    model, policy, weights, N, n, seed, purpose, index, change_point = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, index)))
    return simulate_batch(model, policy, weights, N, n, rng, change_point)


def simulate(model, policy, weights, N, reps, seed, purpose="final", change_point=None, workers=None) -> Batch:
    """``reps`` runs in seeded chunks, optionally fanned out to a process pool."""
    tag = PURPOSE[purpose] if isinstance(purpose, str) else int(purpose)
    sizes = [CHUNK] * (reps // CHUNK) + ([reps % CHUNK] if reps % CHUNK else [])
    jobs = [(model, policy, weights, N, n, seed, tag, i, change_point) for i, n in enumerate(sizes)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    return Batch.concat(parts)


def _mean_se(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0)


def ratio_estimate(num, den) -> Estimate:
    """Ratio of means with a delta-method standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = len(num)
    mx, my = num.mean(), den.mean()
    r = mx / my
    if n < 2:
        return Estimate(float(r), 0.0)
    resid = num - r * den
    return Estimate(float(r), float(resid.std(ddof=1) / (math.sqrt(n) * abs(my))))


def _check_reps(reps):
    if reps < MIN_REPS:
        raise ValueError(f"reps must be at least {MIN_REPS}, got {reps}")


def estimate_arl0(model, policy, weights, N, reps, seed, purpose="final", workers=None) -> Estimate:
    _check_reps(reps)
    return _mean_se(simulate(model, policy, weights, N, reps, seed, purpose, workers=workers).T)


def estimate_jn(model, policy, weights, N, reps, seed, purpose="final", workers=None) -> Estimate:
    _check_reps(reps)
    b = simulate(model, policy, weights, N, reps, seed, purpose, workers=workers)
    return ratio_estimate(b.cum_y, b.cum_v)


def estimate_both(model, policy, weights, N, reps, seed, purpose="final", workers=None):
    """ARL0 and J_N from the same runs."""
    _check_reps(reps)
    b = simulate(model, policy, weights, N, reps, seed, purpose, workers=workers)
    return _mean_se(b.T), ratio_estimate(b.cum_y, b.cum_v)


def _direct_terms(model, policy, weights, N, k, reps, rng) -> np.ndarray:
    """Per-run ``w_k * sum_{n=k}^{T-1} prod_{j=k}^{n} rho_j`` with the change at step k.

    Runs are drawn with the post-change law from step k on. ``rho_j`` is
    ``Lambda_j`` times the pre/post pmf ratio of the drawn edge count, which
    turns the post-change sample into an estimate of the change-of-measure
    expectation ME_k (zero where the pre-change law cannot produce the draw).
    """
    m = model.n_slots
    s = model.draw_initial_stats(rng, reps)
    y = np.zeros(reps)
    alive = np.ones(reps, dtype=bool)
    wk = np.zeros(reps)
    prod = np.ones(reps)
    total = np.zeros(reps)
    for j in range(1, N + 1):
        post = j >= k
        e = model.draw_stats(s, rng, post=post)
        log_lam = model.log_ratio_stats(e, s)
        if j == k:
            wk = np.where(alive, weights.w(y), 0.0)
        if post:
            lp0 = binom.logpmf(e, m, model.edge_prob_pre(s))
            lp1 = binom.logpmf(e, m, model.edge_prob_post(s))
            with np.errstate(invalid="ignore", over="ignore"):
                rho = np.where(np.isfinite(lp0), np.exp(np.where(np.isfinite(lp0), log_lam + lp0 - lp1, 0.0)), 0.0)
            prod = prod * rho
        with np.errstate(over="ignore", invalid="ignore"):
            y_new = (y + weights.w(y)) * np.exp(log_lam)
        y = np.where(alive, np.where(np.isneginf(log_lam), 0.0, y_new), 0.0)
        stop = alive & (y >= policy.threshold(j, y, e))
        alive &= ~stop
        # T > j for survivors: term n = j contributes
        if post:
            total += np.where(alive, prod, 0.0)
        s = e
    return wk * total


def estimate_direct_numerator(model, policy, weights, N, reps, seed, workers=None) -> Estimate:
    """Monte Carlo estimate of sum_k ME_k(w_k (T - k)^+) from change-point batches."""
    _check_reps(reps)
    value, var = 0.0, 0.0
    for k in range(1, N + 1):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(PURPOSE["direct"], k)))
        est = _mean_se(_direct_terms(model, policy, weights, N, k, reps, rng))
        value += est.value
        var += est.se ** 2
    return Estimate(value, math.sqrt(var))


# --- calibration ---------------------------------------------------------------


@dataclass
class CalibrationResult:
    c_gamma: float
    arl0: Estimate
    iterations: int
    converged: bool
    table: LimitTable | None = None
    history: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def achieved_arl0(self) -> float:
        return self.arl0.value


class _PolicyFactory:
    """Builds the policy of a family at a trial c, caching solved limit tables."""

    def __init__(self, spec: PolicySpec, config: ExperimentConfig):
        self.spec = spec
        self.config = config
        self.tables: dict[float, LimitTable] = {}
        self._y_hint = None

    def __call__(self, c):
        f, cfg = self.spec.family, self.config
        if f == "constant":
            return Constant(c)
        if f == "decrease":
            return LinearDecrease(c, self.spec.slope, cfg.N)
        if f == "increase":
            return LinearIncrease(c, self.spec.slope, cfg.N)
        if c not in self.tables:
            table = solve_limits(cfg.model, cfg.weights, c, cfg.N, cfg.grid, y_start=self._y_hint)
            self._y_hint = table.y_max
            self.tables[c] = table
        return OptimalDynamic(self.tables[c])


def calibrate(config: ExperimentConfig, spec: PolicySpec | None = None) -> CalibrationResult:
    """Bisection on c with common random numbers until |ARL0 - gamma| <= epsilon.

    ARL0(c) is nondecreasing but can jump (edge counts are discrete). When the
    bracket collapses around a jump the result is flagged ``converged=False``
    and the side whose ARL0 lies closer to gamma is returned.
    """
    spec = spec or config.policies[0]
    gamma = config.gamma_for(spec)
    make = _PolicyFactory(spec, config)
    history = []

    def arl(c):
        est = estimate_arl0(config.model, make(c), config.weights, config.N,
                            config.reps_calibration, config.seed, "calibration", config.workers)
        history.append((c, est.value, est.se))
        log.debug("%s c=%.6g ARL0=%.4f", spec.label, c, est.value)
        return est

    lo, hi = spec.c_bracket
    a_lo, a_hi = arl(lo), arl(hi)
    for _ in range(40):
        if a_hi.value >= gamma:
            break
        lo, a_lo = hi, a_hi
        hi = 2 * hi
        a_hi = arl(hi)
    else:
        raise RuntimeError(f"{spec.label}: could not find c with ARL0 >= {gamma}")
    for _ in range(60):
        if a_lo.value < gamma or lo == 0.0:
            break
        hi, a_hi = lo, a_lo
        lo = lo / 2 if lo > 1e-9 else 0.0
        a_lo = arl(lo)
    if a_lo.value >= gamma:
        raise RuntimeError(f"{spec.label}: ARL0 >= {gamma} even at c = 0")

    eps = config.epsilon_arl
    best = None
    for it in range(config.max_iter):
        for c, a in ((lo, a_lo), (hi, a_hi)):
            if abs(a.value - gamma) <= eps:
                best = (c, a, True)
        if best:
            break
        if hi - lo <= 1e-9 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        a_mid = arl(mid)
        if a_mid.value < gamma:
            lo, a_lo = mid, a_mid
        else:
            hi, a_hi = mid, a_mid
    if best is None:
        c, a = (lo, a_lo) if gamma - a_lo.value < a_hi.value - gamma else (hi, a_hi)
        best = (c, a, False)
        log.warning("%s: ARL0 jumps across gamma=%g between c=%.8g (%.3f) and c=%.8g (%.3f)",
                    spec.label, gamma, lo, a_lo.value, hi, a_hi.value)

    diagnostics = []
    pts = sorted(history)
    for (c0, a0, _), (c1, a1, _) in zip(pts, pts[1:]):
        if a1 < a0 - 1e-12:
            diagnostics.append(f"non-monotone CRN estimate: ARL0({c0:.6g})={a0:.4f} > ARL0({c1:.6g})={a1:.4f}")
    c, a, ok = best
    table = make.tables.get(c) if spec.family == "optimal" else None
    return CalibrationResult(c, a, len(history), ok, table, history, diagnostics)


# --- scenarios -------------------------------------------------------------------


@dataclass
class ScenarioRow:
    policy: str
    c_gamma: float
    arl0: Estimate
    jn: Estimate
    converged: bool = True
    error: str | None = None

    def as_csv(self):
        if self.error:
            return [self.policy, "", "", "", "", ""]
        return [self.policy, f"{self.c_gamma:.6g}", f"{self.arl0.value:.4f}", f"{self.arl0.se:.4f}",
                f"{self.jn.value:.6f}", f"{self.jn.se:.6f}"]


def policy_at(config: ExperimentConfig, spec: PolicySpec, c: float, table=None):
    if spec.family == "optimal" and table is not None:
        return OptimalDynamic(table)
    return _PolicyFactory(spec, config)(c)


def run_scenario(config: ExperimentConfig) -> list[ScenarioRow]:
    """Calibrate every policy, then estimate ARL0 and J_N on the fresh 'final' stream."""
    rows = []
    for spec in config.policies:
        try:
            cal = calibrate(config, spec)
            policy = policy_at(config, spec, cal.c_gamma, cal.table)
            arl, jn = estimate_both(config.model, policy, config.weights, config.N,
                                    config.reps_final, config.seed, "final", config.workers)
            rows.append(ScenarioRow(spec.label, cal.c_gamma, arl, jn, cal.converged))
            for msg in cal.diagnostics:
                log.warning("%s: %s", spec.label, msg)
        except Exception as exc:  # one failing policy must not sink the others
            log.error("%s failed: %s", spec.label, exc)
            rows.append(ScenarioRow(spec.label, math.nan, Estimate(math.nan, math.nan),
                                    Estimate(math.nan, math.nan), False, str(exc)))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    text = rows_to_csv(rows).encode()
    _atomic_write(path, lambda fh: fh.write(text))


def summary(rows) -> str:
    lines = [f"{'test':<8}{'c_gamma':>12}{'E0(T)':>18}{'J_N':>22}"]
    for r in rows:
        if r.error:
            lines.append(f"{r.policy:<8}  FAILED: {r.error}")
            continue
        flag = "" if r.converged else "  (ARL0 jumps at c_gamma)"
        lines.append(f"{r.policy:<8}{r.c_gamma:>12.6g}{str(r.arl0):>18}{str(r.jn):>22}{flag}")
    return "\n".join(lines)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(config, **kw)
