import dataclasses
import math

import numpy as np
import pytest

from netchange import harness as H
from netchange.detector import CUSUM, Constant, LinearDecrease, LinearIncrease, OptimalDynamic
from netchange.models import IndepER, IndepErgmEdges, MarkovER
from netchange.oracle import EnumeratedSpace, exact_arl0
from netchange.solver import solve_limits


def test_trivial_arl0():
    m = IndepER()
    assert tuple(H.estimate_arl0(m, Constant(0.0), CUSUM, 60, 200, 1)) == (1.0, 0.0)
    assert tuple(H.estimate_arl0(m, Constant(1e9), CUSUM, 60, 200, 1)) == (61.0, 0.0)


def test_trivial_jn():
    assert H.estimate_jn(IndepER(), Constant(0.0), CUSUM, 60, 200, 1).value == 0.0


def test_min_reps():
    with pytest.raises(ValueError):
        H.estimate_arl0(IndepER(), Constant(1.0), CUSUM, 60, 50, 1)
    with pytest.raises(ValueError):
        H.estimate_jn(IndepER(), Constant(1.0), CUSUM, 60, 99, 1)


def test_ratio_estimate_delta_method():
    rng = np.random.default_rng(0)
    den = rng.integers(1, 60, 5000).astype(float)
    num = 1.3 * den + rng.normal(0, 2, 5000)
    est = H.ratio_estimate(num, den)
    assert est.value == pytest.approx(num.mean() / den.mean())
    # compare with the bootstrap spread
    boots = []
    for _ in range(300):
        i = rng.integers(0, 5000, 5000)
        boots.append(num[i].mean() / den[i].mean())
    assert est.se == pytest.approx(np.std(boots), rel=0.2)


def test_seeded_chunks_independent_of_workers():
    m = IndepER()
    a = H.simulate(m, Constant(12.0), CUSUM, 60, 45_000, 7, workers=1)
    b = H.simulate(m, Constant(12.0), CUSUM, 60, 45_000, 7, workers=2)
    np.testing.assert_array_equal(a.T, b.T)
    np.testing.assert_array_equal(a.cum_y, b.cum_y)


def test_purposes_use_different_streams():
    m = IndepER()
    a = H.simulate(m, Constant(12.0), CUSUM, 60, 1000, 7, "calibration")
    b = H.simulate(m, Constant(12.0), CUSUM, 60, 1000, 7, "final")
    assert not np.array_equal(a.T, b.T)


def test_se_shrinks_like_root_n():
    m = IndepER()
    ns = [2_000, 4_000, 8_000, 16_000, 32_000]
    ses = [H.estimate_arl0(m, Constant(12.0), CUSUM, 60, n, 3).se for n in ns]
    slope = np.polyfit(np.log(ns), np.log(ses), 1)[0]
    assert abs(slope + 0.5) <= 0.15


def test_crn_arl_monotone_in_c():
    m = IndepErgmEdges(d=10, directed=True)
    for make in (Constant, lambda c: LinearDecrease(c, 0.005, 60), lambda c: LinearIncrease(c, 0.005, 60)):
        arls = [H.estimate_arl0(m, make(c), CUSUM, 60, 3000, 11).value for c in np.linspace(0.1, 0.6, 12)]
        assert all(b >= a for a, b in zip(arls, arls[1:]))


def test_jn_invariant_to_common_log_constant():
    for cls in (IndepER, MarkovER):
        a = H.estimate_both(cls(), Constant(5.0), CUSUM, 60, 3000, 2)
        b = H.estimate_both(cls(log_const=-12.5), Constant(5.0), CUSUM, 60, 3000, 2)
        assert a == b


def test_direct_numerator_agrees_with_identity_form():
    m = IndepErgmEdges(d=3)
    policy = Constant(0.9)
    b = H.simulate(m, policy, CUSUM, 3, 50_000, 5)
    lhs = H.ratio_estimate(b.cum_y, np.ones_like(b.cum_y))
    rhs = H.estimate_direct_numerator(m, policy, CUSUM, 3, 50_000, 6)
    assert abs(lhs.value - rhs.value) < 3 * math.hypot(lhs.se, rhs.se)


def test_config_validation():
    with pytest.raises(ValueError):
        H.ExperimentConfig(model=IndepER(), gamma=1.0)
    with pytest.raises(ValueError):
        H.ExperimentConfig(model=IndepER(), N=3, gamma=4.0)
    with pytest.raises(ValueError):
        H.ExperimentConfig(model=IndepER(), reps_final=10)
    with pytest.raises(ValueError):
        H.PolicySpec("quadratic")
    with pytest.raises(ValueError):
        H.PolicySpec("constant", c_bracket=(2.0, 1.0))
    with pytest.raises(ValueError):
        H.ExperimentConfig(model=IndepER(0.5, 0.5))


def toy_config(**kw):
    base = dict(model=IndepErgmEdges(d=2), N=3, gamma=2.5, reps_calibration=20_000, reps_final=20_000,
                epsilon_arl=0.05, seed=4, policies=(H.PolicySpec("constant", c_bracket=(0.5, 0.9)),))
    base.update(kw)
    return H.ExperimentConfig(**base)


def test_toy_calibration_against_exact_arl_curve():
    cfg = toy_config()
    res = H.calibrate(cfg)
    space = EnumeratedSpace(cfg.model)
    exact = exact_arl0(space, Constant(res.c_gamma), CUSUM, 3)
    # the estimate at c_gamma matches the exact curve, which crosses gamma there
    assert abs(res.arl0.value - exact) < 4 * res.arl0.se + 1e-12
    if res.converged:
        assert abs(exact - cfg.gamma) <= cfg.epsilon_arl + 4 * res.arl0.se
    else:
        lo = exact_arl0(space, Constant(res.c_gamma * (1 - 1e-6)), CUSUM, 3)
        hi = exact_arl0(space, Constant(res.c_gamma * (1 + 1e-6)), CUSUM, 3)
        assert min(lo, hi) <= cfg.gamma <= max(lo, hi) or abs(exact - cfg.gamma) <= cfg.epsilon_arl


@pytest.mark.parametrize("gamma", [30.0, 40.0])
def test_calibration_hits_gamma_or_straddles_a_jump(gamma):
    cfg = H.ExperimentConfig(model=IndepER(), gamma=gamma, reps_calibration=5000, reps_final=5000,
                             epsilon_arl=0.3, seed=1, policies=(H.PolicySpec("constant", c_bracket=(1.0, 2.0)),))
    res = H.calibrate(cfg)
    assert not res.diagnostics
    assert res.c_gamma > 2.0  # the bracket had to expand upwards
    if res.converged:
        assert abs(res.arl0.value - gamma) <= 0.3
    else:
        near = [(c, a) for c, a, _ in res.history if abs(c - res.c_gamma) <= 1e-8 * res.c_gamma]
        assert min(a for _, a in near) < gamma <= max(a for _, a in near)


def test_calibrate_optimal_family_returns_table():
    cfg = H.ExperimentConfig(model=IndepER(), gamma=40.0, reps_calibration=5000, reps_final=5000,
                             epsilon_arl=0.3, seed=1, policies=(H.PolicySpec("optimal", c_bracket=(1.0, 3.0)),))
    res = H.calibrate(cfg)
    assert res.table is not None and res.table.c == res.c_gamma
    est = H.estimate_arl0(cfg.model, OptimalDynamic(res.table), CUSUM, 60, 5000, 1, "calibration")
    assert est == res.arl0


def test_run_scenario_rows_and_determinism(tmp_path):
    cfg = H.ExperimentConfig(
        model=IndepER(), gamma=30.0, reps_calibration=2000, reps_final=2000, epsilon_arl=0.5, seed=9,
        policies=(H.PolicySpec("constant", c_bracket=(5, 15)), H.PolicySpec("decrease", 0.05, (5, 15)),
                  H.PolicySpec("increase", 0.05, (5, 15)), H.PolicySpec("optimal", 0.0, (0.5, 3))),
    )
    rows = H.run_scenario(cfg)
    again = H.run_scenario(cfg)
    assert [r.policy for r in rows] == ["T_cons", "T_de", "T_in", "T*"]
    assert H.rows_to_csv(rows) == H.rows_to_csv(again)
    path = tmp_path / "out.csv"
    H.write_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "policy,c_gamma,arl0,arl0_se,jn,jn_se" and len(lines) == 5


def test_run_scenario_reports_failures_per_policy():
    cfg = H.ExperimentConfig(
        model=IndepER(), gamma=30.0, reps_calibration=500, reps_final=500, seed=9, max_iter=2,
        policies=(H.PolicySpec("constant", c_bracket=(5, 15)), H.PolicySpec("optimal", 0.0, (0.5, 3))),
    )
    real = H.solve_limits

    def broken(*a, **k):
        raise RuntimeError("solver exploded")

    H.solve_limits = broken
    try:
        rows = H.run_scenario(cfg)
    finally:
        H.solve_limits = real
    assert rows[0].error is None and rows[1].error == "solver exploded"
    assert "FAILED" in H.summary(rows)
