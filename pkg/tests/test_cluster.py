import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastisac.cluster import (
    ClusterConfig,
    core_distances,
    hdbscan,
    mst_total_weight,
    mutual_reachability,
    read_labels_csv,
    write_labels_csv,
)
from fastisac.embed import EmbeddingPoint


def ari(a, b):
    from math import comb

    a, b = np.asarray(a), np.asarray(b)
    ca, cb = np.unique(a), np.unique(b)
    table = np.array([[np.sum((a == i) & (b == j)) for j in cb] for i in ca])
    s = sum(comb(int(v), 2) for v in table.ravel())
    sa = sum(comb(int(v), 2) for v in table.sum(1))
    sb = sum(comb(int(v), 2) for v in table.sum(0))
    total = comb(len(a), 2)
    expected = sa * sb / total
    top = (sa + sb) / 2
    return 1.0 if top == expected else (s - expected) / (top - expected)


def blobs(k=3, per=60, dim=3, sep=10.0, seed=0):
    r = np.random.default_rng(seed)
    centers = np.eye(k, dim) * sep / np.sqrt(2)
    X = np.concatenate([c + r.normal(size=(per, dim)) for c in centers])
    return X, np.repeat(np.arange(k), per)


def kruskal_weight(X, min_samples):
    n = len(X)
    M = mutual_reachability(X, min_samples)
    edges = sorted((M[i, j], i, j) for i in range(n) for j in range(i + 1, n))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    total, used = 0.0, 0
    for w, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            total += w
            used += 1
    assert used == n - 1
    return total


def test_core_distance_counts_self():
    X = np.array([[0.0], [1.0], [3.0]])
    assert core_distances(X, 1).tolist() == [0.0, 0.0, 0.0]
    assert core_distances(X, 2).tolist() == [1.0, 1.0, 2.0]


def test_two_blobs_ari():
    X, y = blobs(k=2, per=50, sep=20.0, dim=2)
    m = hdbscan(X, ClusterConfig(5, 5))
    assert m.L == 2
    assert ari(m.labels, y) >= 0.99


def test_three_blobs_matches_sklearn():
    sk = pytest.importorskip("sklearn.cluster")
    X, y = blobs()
    m = hdbscan(X, ClusterConfig(5, 5))
    ref = sk.HDBSCAN(min_cluster_size=5, min_samples=5).fit(X).labels_
    assert ari(m.raw_labels, ref) == pytest.approx(1.0)
    assert ari(m.labels, y) >= 0.95


def test_identical_points_single_class():
    m = hdbscan(np.ones((20, 3)), ClusterConfig(5, 5))
    assert m.L == 1 and np.all(m.labels == 0)


def test_too_few_points():
    m = hdbscan(np.random.default_rng(0).normal(size=(3, 2)), ClusterConfig(5, 5))
    assert m.L == 1 and m.labels.tolist() == [0, 0, 0]


def test_model_invariants():
    X, _ = blobs(seed=3, sep=6.0)
    m = hdbscan([EmbeddingPoint(str(i), x) for i, x in enumerate(X)], ClusterConfig(8, 5))
    assert set(np.unique(m.labels)) == set(range(m.L))
    for c in range(m.L):
        assert m.labels[m.medoid_index[c]] == c
        assert np.array_equal(m.medoids[c], X[m.medoid_index[c]])
        assert np.sum(m.raw_labels == c) >= 8
    assert np.array_equal(m.noise_reassigned, m.raw_labels < 0)
    sizes = np.bincount(m.labels)
    assert np.all(np.diff(np.bincount(m.raw_labels[m.raw_labels >= 0])) <= 0) or sizes.size == 1


@given(st.integers(0, 10_000), st.integers(5, 40), st.integers(1, 6))
def test_mst_weight_matches_kruskal(seed, n, ms):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    assert mst_total_weight(X, ms) == pytest.approx(kruskal_weight(X, ms), abs=1e-9)


@given(st.integers(0, 10_000))
def test_mutual_reachability_dominates_distance(seed):
    X = np.random.default_rng(seed).normal(size=(15, 2))
    D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
    assert np.all(mutual_reachability(X, 4) >= D - 1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_order_invariance(seed):
    X, _ = blobs(seed=seed, sep=8.0)
    perm = np.random.default_rng(seed + 100).permutation(len(X))
    a = hdbscan(X, ClusterConfig(5, 5)).labels
    b = hdbscan(X[perm], ClusterConfig(5, 5)).labels
    assert ari(a[perm], b) == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ClusterConfig(min_cluster_size=1)
    with pytest.raises(ValueError):
        ClusterConfig(min_samples=0)
    with pytest.raises(ValueError):
        ClusterConfig(metric="manhattan")


def test_labels_csv(tmp_path):
    X, _ = blobs(per=10)
    m = hdbscan(X, ClusterConfig(5, 5))
    ids = [f"i{k}" for k in range(len(X))]
    p = tmp_path / "labels.csv"
    write_labels_csv(p, ids, m)
    assert p.read_text().splitlines()[0] == "instance_id,class,noise_reassigned"
    back_ids, labels, noise = read_labels_csv(p)
    assert back_ids == ids and np.array_equal(labels, m.labels) and np.array_equal(noise, m.noise_reassigned)
