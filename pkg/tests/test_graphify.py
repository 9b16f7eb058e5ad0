import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastisac.bqp import generate_qkp, generate_tsp, make_instance, tsp_to_bqp
from fastisac.graphify import InstanceGraph, build_dataset, sample_nodes, sample_size, to_graph


def complete_graph(n, label=0):
    e = np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64)
    x = np.column_stack([np.zeros(n), np.full(n, n - 1.0), np.zeros(n)])
    return InstanceGraph(x, e, np.linspace(-1, 1, len(e)), label, f"K{n}")


def test_hand_instance_features():
    inst = make_instance("h", 3, [(0, 0, -2.0), (1, 1, -4.0), (2, 2, -6.0), (0, 1, 3.0), (1, 2, -1.0)],
                         [(0, 0, 1.0), (0, 2, 2.0), (1, 2, 1.0)], [1.0, 1.0])
    g = to_graph(inst, label=2)
    # median |diag| = 4, so node 1 maps to tanh(-1)
    assert g.node_features[1, 0] == pytest.approx(-math.tanh(1.0))
    assert math.tanh(1.0) == pytest.approx(0.7616, abs=1e-4)
    assert g.node_features[:, 1].tolist() == [1.0, 2.0, 1.0]
    assert g.node_features[:, 2].tolist() == [1.0, 0.0, 2.0]
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    # median |offdiag| over {3, 1} = 2
    assert g.edge_attr.tolist() == pytest.approx([math.tanh(1.5), math.tanh(-0.5)])
    assert g.label == 2 and g.graph_id == "h"


def test_all_zero_diagonal_fallback():
    g = to_graph(make_instance("z", 2, [(0, 1, 5.0)]))
    assert g.node_features[:, 0].tolist() == [0.0, 0.0]
    assert g.edge_attr.tolist() == [pytest.approx(math.tanh(1.0))]


def test_edge_count_matches_offdiag():
    inst = generate_qkp(30, 0.4, 2)
    g = to_graph(inst)
    r, _, _ = inst.offdiag()
    assert len(g.edges) == len(r)
    assert np.all(g.edges[:, 0] < g.edges[:, 1])
    assert np.array_equal(g.node_features[:, 1], g.degrees())
    assert np.all(np.abs(g.node_features[:, 0]) < 1) and np.all(np.abs(g.edge_attr) < 1)


def test_tsp_constraint_participation():
    g = to_graph(tsp_to_bqp(generate_tsp(4, 0)))
    assert g.node_count == 16
    # one-hot constraints are folded into Q, so there are no explicit constraint rows
    assert np.all(g.node_features[:, 2] == 0)


def test_sample_k10_three_nodes():
    for s in range(5):
        sub = sample_nodes(complete_graph(10), rate=0.3, count=1, seed=s)[0]
        assert sub.node_count == 3 and len(sub.edges) == 3
        # degree keeps the parent value
        assert np.all(sub.node_features[:, 1] == 9)


def test_sample_rate_one_is_identity():
    g = to_graph(generate_qkp(12, 0.5, 4), label=1)
    for sub in sample_nodes(g, rate=1.0, count=3, seed=9):
        assert np.array_equal(sub.node_features, g.node_features)
        assert np.array_equal(sub.edges, g.edges)
        assert np.array_equal(sub.edge_attr, g.edge_attr)
        assert sub.label == 1 and sub.parent_id == g.graph_id


def test_sample_size_and_determinism():
    assert sample_size(60, 0.1) == 6
    assert sample_size(61, 0.1) == 7
    assert sample_size(3, 0.1) == 1
    g = complete_graph(30)
    a = sample_nodes(g, 0.1, 20, seed=5)
    b = sample_nodes(g, 0.1, 20, seed=5)
    assert len(a) == 20
    assert all(np.array_equal(x.kept_nodes, y.kept_nodes) for x, y in zip(a, b))
    c = sample_nodes(g, 0.1, 20, seed=6)
    assert any(not np.array_equal(x.kept_nodes, y.kept_nodes) for x, y in zip(a, c))


def test_sample_rejects_bad_input():
    with pytest.raises(ValueError):
        sample_nodes(complete_graph(5), rate=0.0)
    with pytest.raises(ValueError):
        sample_nodes(complete_graph(5), rate=1.5)
    empty = InstanceGraph(np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64), np.zeros(0))
    with pytest.raises(ValueError):
        sample_nodes(empty)


@given(st.integers(0, 2**31 - 1), st.integers(2, 40), st.floats(0.05, 1.0))
def test_sampled_edges_exactly_induced(seed, n, rate):
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
    e = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    g = InstanceGraph(rng.normal(size=(n, 3)), e, rng.normal(size=len(e)), 0, "p")
    sub = sample_nodes(g, rate, 1, seed)[0]
    kept = sub.kept_nodes
    expected = {(int(np.searchsorted(kept, i)), int(np.searchsorted(kept, j)))
                for i, j in pairs if i in set(kept) and j in set(kept)}
    assert {tuple(x) for x in sub.edges.tolist()} == expected
    assert np.array_equal(sub.node_features, g.node_features[kept])


def test_balance_cap():
    graphs = []
    for c, size in enumerate([100, 100, 100, 50]):
        graphs += [InstanceGraph(np.zeros((1, 3)), np.zeros((0, 2), dtype=np.int64), np.zeros(0), c, f"{c}_{i}")
                   for i in range(size)]
    train, val = build_dataset(graphs, balance_factor=1.2, split=0.9, seed=1)
    counts = np.bincount([g.label for g in train + val])
    assert counts.tolist() == [60, 60, 60, 50]
    assert len(train) == round(0.9 * 230)
    assert np.bincount([g.label for g in train]).tolist() == [54, 54, 54, 45]
    assert not {g.graph_id for g in train} & {g.graph_id for g in val}


def test_build_dataset_errors():
    g = InstanceGraph(np.zeros((1, 3)), np.zeros((0, 2), dtype=np.int64), np.zeros(0), None)
    with pytest.raises(ValueError):
        build_dataset([g])
    with pytest.raises(ValueError):
        build_dataset([])
    g2 = InstanceGraph(np.zeros((1, 3)), np.zeros((0, 2), dtype=np.int64), np.zeros(0), 2)
    with pytest.raises(ValueError, match="classes without graphs"):
        build_dataset([g2])


def test_json_roundtrip():
    g = to_graph(generate_qkp(15, 0.5, 3), label=1)
    back = InstanceGraph.from_json(g.to_json(), g.graph_id)
    assert np.array_equal(back.node_features, g.node_features)
    assert np.array_equal(back.edges, g.edges)
    assert np.array_equal(back.edge_attr, g.edge_attr)
    assert back.label == 1
