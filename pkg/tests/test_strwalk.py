import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sstats

from conftest import DAY, T0, addr, tx
from oracles import interval_index as oracle_index
from oracles import step_distribution
from txscam.txgraph import UnknownNode, build_graph
from txscam.strwalk import (EmptyOrZeroWeights, EmptyTimestamps, NegativeOffset, SampledGraph, TemporalVariant,
                            WalkConfig, build_alias, interval_index, make_rng, read_sampled_graph,
                            slice_subgraph_sequence, step, strwalk, structure_sample, temporal_step_weights,
                            whole_neighborhood, write_sampled_graph)


def test_alias_two_weights():
    table = build_alias([1, 3])
    np.testing.assert_allclose(table.probabilities(), [0.25, 0.75], atol=1e-15)
    draws = table.sample(make_rng(0), 200_000)
    assert abs(np.mean(draws == 1) - 0.75) < 0.005


def test_alias_single_and_zero_entries():
    assert build_alias([5.0]).sample(make_rng(1)) == 0
    table = build_alias([0, 2, 0, 2])
    draws = table.sample(make_rng(2), 10_000)
    assert set(np.unique(draws)) == {1, 3}


@pytest.mark.parametrize("bad", [[], [0, 0], [1, -1], [np.nan, 1], [np.inf]])
def test_alias_rejects(bad):
    with pytest.raises(EmptyOrZeroWeights):
        build_alias(bad)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=64).filter(lambda w: sum(w) > 0))
def test_alias_table_encodes_exact_distribution(w):
    table = build_alias(w)
    np.testing.assert_allclose(table.probabilities(), np.asarray(w) / sum(w), atol=1e-12)
    assert np.all((table.prob >= 0) & (table.prob <= 1 + 1e-12))


def test_alias_chi_square():
    rng = np.random.default_rng(7)
    w = rng.random(20) + 0.05
    draws = build_alias(w).sample(make_rng(3), 100_000)
    counts = np.bincount(draws, minlength=20)
    assert sstats.chisquare(counts, 100_000 * w / w.sum()).pvalue > 0.01


def test_temporal_weights_reversal():
    np.testing.assert_allclose(temporal_step_weights([100, 200]), [1 / 102, 101 / 102])
    np.testing.assert_allclose(temporal_step_weights([100, 200], TemporalVariant.MAX_ANCHORED), [101 / 102, 1 / 102])
    np.testing.assert_allclose(temporal_step_weights([5, 5, 5]), [1 / 3] * 3)
    with pytest.raises(EmptyTimestamps):
        temporal_step_weights([])


@given(st.lists(st.integers(1, 10**9), min_size=1, max_size=30))
def test_temporal_weights_sum_and_order(ts):
    for variant in TemporalVariant:
        w = temporal_step_weights(ts, variant)
        assert abs(w.sum() - 1) < 1e-12 and np.all(w > 0)
    w = temporal_step_weights(ts)
    order = np.argsort(ts, kind="stable")
    assert np.all(np.diff(w[order]) >= -1e-15)


@given(st.integers(1, 2 * 10**9), st.integers(0, 10**9), st.integers(1, 400))
def test_interval_index_matches_oracle(t_first, off, k):
    assert interval_index(t_first + off, t_first, k) == oracle_index(t_first + off, t_first, k)


def test_interval_index_edges():
    assert interval_index(T0, T0, 7) == 0
    assert interval_index(T0 + 7 * DAY - 1, T0, 7) == 0
    assert interval_index(T0 + 7 * DAY, T0, 7) == 1
    with pytest.raises(NegativeOffset):
        interval_index(T0 - 1, T0, 7)


def test_step_matches_exact_distribution(five_node_graph):
    g = five_node_graph
    edges = [(e.sender, e.receiver, e.timestamp) for e in g.edges]
    rng = make_rng(11)
    for variant, name in ((TemporalVariant.MIN_ANCHORED, "min"), (TemporalVariant.MAX_ANCHORED, "max")):
        exact = step_distribution(edges, addr(0), name)
        n = 40_000
        counts = {}
        for _ in range(n):
            v = step(g, addr(0), variant, rng)
            counts[v] = counts.get(v, 0) + 1
        tv = 0.5 * sum(abs(counts.get(k, 0) / n - float(p)) for k, p in exact.items())
        assert tv < 0.01


def test_step_dead_end():
    g = build_graph([tx(1, 1, 2, T0)])
    assert step(g, addr(1), TemporalVariant.MIN_ANCHORED, make_rng(0)) == addr(2)


def test_structure_sample_takes_all_when_few(five_node_graph):
    nodes, edges = structure_sample(five_node_graph, addr(0), 10, 7, make_rng(0))
    # window [first, first + 7 days) holds edges to 1, 2 and 3
    assert nodes == {addr(1), addr(2), addr(3)}
    assert len(edges) == 3


def test_structure_sample_bounded_by_window():
    txs = [tx(i, 0, i, T0 + i * 60) for i in range(1, 50)]
    g = build_graph(txs)
    nodes, edges = structure_sample(g, addr(0), 5, 1, make_rng(4))
    assert 1 <= len(edges) <= 5
    assert len(nodes) == len(edges)


def test_strwalk_edges_carry_start_anchored_tau(five_node_graph):
    s = strwalk(five_node_graph, addr(0), WalkConfig(window=10, interval_days=7, walk_length=6))
    assert s.walk[0] == addr(0) and len(s.walk) <= 6
    assert s.t_first == T0 + 100
    for e, tau in s.edges:
        assert tau == oracle_index(e.timestamp, s.t_first, 7)
    assert all(e.timestamp >= s.t_first for e, _ in s.edges)


def test_strwalk_deterministic(five_node_graph):
    cfg = WalkConfig(window=2, walk_length=10, seed=5)
    a, b = strwalk(five_node_graph, addr(0), cfg), strwalk(five_node_graph, addr(0), cfg)
    assert a.walk == b.walk and a.edges == b.edges


def test_strwalk_unknown_start(five_node_graph):
    with pytest.raises(UnknownNode):
        strwalk(five_node_graph, addr(77), WalkConfig())


def test_walk_length_one_is_structure_sample_only(five_node_graph):
    s = strwalk(five_node_graph, addr(0), WalkConfig(walk_length=1))
    assert s.walk == [addr(0)] and len(s.edges) == 3


def test_slice_keeps_empty_gaps():
    txs = [tx(1, 0, 1, T0), tx(2, 0, 2, T0 + 15 * DAY)]
    g = build_graph(txs)
    seq = slice_subgraph_sequence(whole_neighborhood(g, addr(0), 7))
    assert len(seq) == 3
    assert [sub.empty for sub in seq.intervals] == [False, True, False]
    assert all(sub.center == addr(0) for sub in seq.intervals)


def test_slice_of_empty_sample():
    s = SampledGraph(addr(0), None, {addr(0)}, [], [addr(0)], WalkConfig())
    seq = slice_subgraph_sequence(s)
    assert len(seq) == 1 and seq.intervals[0].empty


def test_sampled_graph_roundtrip(five_node_graph):
    s = strwalk(five_node_graph, addr(0), WalkConfig(walk_length=8, seed=2))
    buf = io.StringIO()
    write_sampled_graph(s, buf)
    back = read_sampled_graph(io.StringIO(buf.getvalue()))
    assert back.start == s.start and back.t_first == s.t_first and back.walk == s.walk
    assert sorted(back.edges, key=lambda x: x[0].hash) == sorted(s.edges, key=lambda x: x[0].hash)


def test_make_rng_streams_independent_of_order():
    a = make_rng(1, addr(5)).random(3)
    make_rng(1, addr(6)).random(3)
    assert np.array_equal(a, make_rng(1, addr(5)).random(3))
    assert not np.array_equal(a, make_rng(2, addr(5)).random(3))
