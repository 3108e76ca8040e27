import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netchange.detector import (
    CUSUM,
    SHIRYAEV_ROBERTS,
    Constant,
    LinearDecrease,
    LinearIncrease,
    WeightSpec,
    run_test,
    simulate_batch,
    step_statistic,
)
from netchange.models import IndepER, IndepErgmEdges, MarkovER, MarkovErgmEdgesCross, ScriptedModel


@pytest.mark.parametrize("y, lam, expected", [(0.0, 0.5, 0.5), (2.0, 0.7, 1.4), (0.5, 2.0, 2.0)])
def test_step_statistic_examples(y, lam, expected):
    assert step_statistic(y, CUSUM, math.log(lam)) == pytest.approx(expected)


def test_step_statistic_signalled_zero_and_negative_input():
    assert step_statistic(3.0, CUSUM, -math.inf) == 0.0
    with pytest.raises(ValueError):
        step_statistic(-0.1, CUSUM, 0.0)
    bad = WeightSpec(lambda y: -1.0, lambda y: 1.0)
    with pytest.raises(ValueError):
        step_statistic(0.0, bad, 0.0)


def test_shiryaev_roberts_weights():
    assert step_statistic(2.0, SHIRYAEV_ROBERTS, math.log(0.5)) == pytest.approx(1.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_cusum_equals_max_form(log_lams):
    y = z = 0.0
    for ll in log_lams:
        y = step_statistic(y, CUSUM, ll)
        z = max(1.0, z) * float(np.exp(ll))
        assert y == z


def test_scripted_hand_trace():
    stub = ScriptedModel.from_ratios([0.5, 3.0, 1.0, 1.0])
    res = run_test(stub, Constant(1.2), CUSUM, 3, rng=0)
    assert res.T == 2
    np.testing.assert_allclose(res.y_path, [0.5, 3.0])
    assert res.cum_y == pytest.approx(0.5)
    assert res.cum_v == 2


def test_forced_stop_and_immediate_stop():
    m = IndepER()
    for seed in range(20):
        assert run_test(m, Constant(0.0), CUSUM, 60, seed).T == 1
        res = run_test(m, Constant(1e9), CUSUM, 60, seed)
        assert res.T == 61
        assert len(res.y_path) == 61 and res.y_path[-1] == res.y_path[-2]
        assert res.cum_v == 61


def test_policy_shapes():
    assert LinearDecrease(0.2, 0.005, 60).threshold(1, 0.0) == pytest.approx(0.2 + 0.005 * 60)
    assert LinearDecrease(0.2, 0.005, 60).threshold(60, 0.0) == pytest.approx(0.205)
    assert LinearIncrease(0.2, 0.005, 60).threshold(1, 0.0) == pytest.approx(0.21)
    assert Constant(3.0).threshold(7, np.zeros(4)).tolist() == [3.0] * 4
    with pytest.raises(ValueError):
        Constant(-1.0)
    with pytest.raises(ValueError):
        LinearDecrease(-1.0, 0.005, 60)


MODELS = [IndepErgmEdges(), MarkovErgmEdgesCross(), IndepER(), MarkovER()]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_run_invariants(model):
    rng = np.random.default_rng(1)
    for _ in range(30):
        res = run_test(model, Constant(0.5), CUSUM, 20, rng)
        assert 1 <= res.T <= 21
        assert np.all(res.y_path >= 0)
        assert res.cum_y >= 0 and res.cum_v == res.T


def test_run_test_is_pure_in_seed():
    a = run_test(MarkovER(), Constant(3.0), CUSUM, 30, 5)
    b = run_test(MarkovER(), Constant(3.0), CUSUM, 30, 5)
    assert a.T == b.T and np.array_equal(a.y_path, b.y_path)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_lower_limits_never_stop_later(model):
    lo = simulate_batch(model, Constant(0.3), CUSUM, 40, 2000, np.random.default_rng(3))
    hi = simulate_batch(model, Constant(0.6), CUSUM, 40, 2000, np.random.default_rng(3))
    assert np.all(lo.T <= hi.T)


def test_batch_and_scalar_executors_agree_in_law():
    m = IndepER()
    scalar = np.array([run_test(m, Constant(13.78), CUSUM, 60, s).T for s in range(3000)])
    batch = simulate_batch(m, Constant(13.78), CUSUM, 60, 30_000, np.random.default_rng(0)).T
    se = math.sqrt(scalar.var() / len(scalar) + batch.var() / len(batch))
    assert abs(scalar.mean() - batch.mean()) < 4 * se


def test_batch_accumulators():
    b = simulate_batch(IndepER(), Constant(10.0), CUSUM, 60, 5000, np.random.default_rng(2))
    assert np.all((b.T >= 1) & (b.T <= 61))
    np.testing.assert_array_equal(b.cum_v, b.T)
    assert np.all(b.cum_y >= 0)
