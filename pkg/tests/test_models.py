import math

import numpy as np
import pytest
from scipy.special import expit

from netchange.models import (
    IndepER,
    IndepErgmEdges,
    MarkovER,
    MarkovErgmEdgesCross,
    ScriptedModel,
    build_model,
)
from netchange.network import Network, all_networks, edges

ALL = [IndepErgmEdges(), MarkovErgmEdgesCross(), IndepER(), MarkovER()]


def graph_with(e, d=10, directed=False):
    m = d * (d - 1) // (1 if directed else 2)
    return Network.from_slots(d, directed, np.arange(m) < e)


def test_markov_order():
    assert [m.markov_order for m in ALL] == [0, 1, 0, 1]


def test_log_ratio_examples():
    assert IndepErgmEdges(-2, -2.2).log_ratio(graph_with(0)) == 0.0
    assert IndepErgmEdges(-2, -2.2).log_ratio(graph_with(5)) == pytest.approx(-1.0)
    assert MarkovErgmEdgesCross(-0.08, -0.10).log_ratio(graph_with(5), [10]) == pytest.approx(-1.0)
    assert IndepER(0.5, 0.6).log_ratio(graph_with(45)) == pytest.approx(45 * math.log(1.2))
    assert IndepER(0.5, 0.6).log_ratio(graph_with(45)) == pytest.approx(8.20447, abs=1e-5)


def test_markov_er_boundaries():
    m = MarkovER(0.2)
    # s = 45: pre-change forces the complete graph; the post mass of that graph remains
    assert m.log_ratio(graph_with(45), [45]) == pytest.approx(45 * math.log(0.5))
    # s = 0: both laws force the empty graph
    assert m.log_ratio(graph_with(0), [0]) == 0.0
    # a graph that the post-change law cannot produce signals -inf
    assert m.log_ratio_stats(np.array(3), np.array(0)) == -np.inf
    assert np.isfinite(m.log_ratio(graph_with(10), [20]))


def test_wrong_stat_dimension():
    with pytest.raises(ValueError):
        MarkovErgmEdgesCross().log_ratio(graph_with(3), [1, 2])
    with pytest.raises(ValueError):
        MarkovER().log_ratio(graph_with(3))


@pytest.mark.parametrize("factory", [
    lambda: IndepErgmEdges(-2, -2),
    lambda: MarkovErgmEdgesCross(-0.1, -0.1),
    lambda: IndepER(0.5, 0.5),
    lambda: IndepER(0.0, 0.6),
    lambda: IndepER(0.5, 1.0),
    lambda: MarkovER(1.2),
    lambda: MarkovER(0.2, denom_pre=10),
])
def test_degenerate_parameters_rejected(factory):
    with pytest.raises(ValueError):
        factory()


def test_sampler_means():
    rng = np.random.default_rng(4)
    n = 100_000
    cases = [
        (MarkovErgmEdgesCross().draw_initial_stats(rng, n), 22.5, 45 * 0.25),
        (MarkovER(0.2).draw_initial_stats(rng, n), 9.0, 45 * 0.16),
        (IndepErgmEdges().draw_stats(np.zeros(n, int), rng), 45 * expit(-2), 45 * expit(-2) * (1 - expit(-2))),
        (IndepER().draw_stats(np.zeros(n, int), rng, post=True), 27.0, 45 * 0.24),
    ]
    for draws, mean, var in cases:
        assert abs(draws.mean() - mean) < 4 * math.sqrt(var / n)
    assert abs(45 * expit(-2) - 5.364) < 1e-3


def test_network_samplers_match_edge_probabilities():
    rng = np.random.default_rng(5)
    m = IndepErgmEdges()
    counts = [edges(m.sample_pre_change(None, rng)) for _ in range(20_000)]
    p = expit(-2)
    assert abs(np.mean(counts) - 45 * p) < 4 * math.sqrt(45 * p * (1 - p) / 20_000)


def test_markov_er_full_graph_is_absorbing_pre_change():
    rng = np.random.default_rng(6)
    m = MarkovER(0.2)
    assert all(edges(m.sample_pre_change([45], rng)) == 45 for _ in range(20))
    assert all(edges(m.sample_pre_change([0], rng)) == 0 for _ in range(20))


@pytest.mark.parametrize("model", [
    IndepErgmEdges(d=3), MarkovErgmEdgesCross(d=3), IndepER(d=3), MarkovER(0.2, d=3),
])
def test_edge_factorisation_matches_enumeration(model):
    """The normalised density equals the product-Bernoulli mass on every graph."""
    nets = all_networks(3)
    e = np.array([edges(x) for x in nets])
    for s in (0, 1, 2, 3):
        for post in (False, True):
            dens = np.exp(model.log_density_stats(e, s, post=post))
            if dens.sum() == 0:
                continue
            law = dens / dens.sum()
            p = float(np.broadcast_to(model.edge_prob_post(s) if post else model.edge_prob_pre(s), ()))
            bern = p ** e * (1 - p) ** (3 - e)
            np.testing.assert_allclose(law, bern, atol=1e-15)


@pytest.mark.parametrize("model", [
    IndepErgmEdges(d=3), MarkovErgmEdgesCross(-0.5, -0.9, d=3), IndepER(0.3, 0.6, d=3), MarkovER(0.2, d=3),
])
def test_sampler_frequencies_match_enumerated_masses(model):
    rng = np.random.default_rng(7)
    nets = all_networks(3)
    e = np.array([edges(x) for x in nets])
    n = 1_000_000
    for s in (1, 2):
        p = float(np.broadcast_to(model.edge_prob_pre(s), ()))
        slots = rng.random((n, 3)) < p  # the network sampler's per-slot rule, vectorised
        idx = slots @ (1 << np.arange(3))
        freq = np.bincount(idx, minlength=8) / n
        mass = np.exp(model.log_density_stats(e, s))
        mass = mass / mass.sum()
        sigma = np.sqrt(mass * (1 - mass) / n)
        assert np.all(np.abs(freq - mass) <= 4 * sigma + 1e-12)
        # the network-level sampler agrees in mean
        draws = [edges(model.sample_pre_change([s] if model.markov_order else None, rng)) for _ in range(5000)]
        assert abs(np.mean(draws) - 3 * p) < 4 * math.sqrt(3 * p * (1 - p) / 5000) + 1e-12


def test_sufficient_stat_agrees_with_full_network():
    rng = np.random.default_rng(8)
    for model in ALL:
        for _ in range(1000 // len(ALL)):
            prev = model.sample_initial(rng)
            x = model.sample_pre_change(model.sufficient_stat(prev), rng)
            s = model.sufficient_stat(prev)
            assert s.shape == (1,) and s[0] == edges(prev)
            assert model.log_ratio(x, s) == model.log_ratio(x, [edges(prev)])


def test_common_log_constant_leaves_ratio_unchanged():
    rng = np.random.default_rng(9)
    for cls in (IndepErgmEdges, MarkovErgmEdgesCross, IndepER, MarkovER):
        a, b = cls(), cls(log_const=3.7)
        for _ in range(50):
            x = a.sample_initial(rng)
            s = a.sufficient_stat(x)
            y = a.sample_pre_change(s, rng)
            assert a.log_ratio(y, s) == b.log_ratio(y, s)
            assert b.log_measure_pre(y, s) == pytest.approx(a.log_measure_pre(y, s) + 3.7)


def test_log_ratio_finite_where_both_measures_positive():
    for model in ALL:
        s = np.arange(1, 45)[:, None]
        e = np.arange(46)[None, :]
        pre = model.log_density_stats(e, s)
        post = model.log_density_stats(e, s, post=True)
        ok = np.isfinite(pre) & np.isfinite(post)
        assert np.all(np.isfinite(np.broadcast_to(model.log_ratio_stats(e, s), ok.shape)[ok]))


def test_stat_pmf_rows_sum_to_one():
    for model in ALL:
        pmf = model.stat_pmf(np.arange(46))
        np.testing.assert_allclose(pmf.sum(axis=1), 1.0, atol=1e-12)


def test_build_model():
    assert build_model({"kind": "indep_er", "p0": 0.4, "p1": 0.7}) == IndepER(0.4, 0.7)
    with pytest.raises(ValueError):
        build_model({"kind": "triangles"})


def test_scripted_model():
    stub = ScriptedModel.from_ratios([0.5, 3.0])
    stream = stub.observations()
    assert next(stream) == (math.log(0.5), None)
    next(stream)
    with pytest.raises(ValueError):
        next(stream)
