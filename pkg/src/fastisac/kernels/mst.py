"""Prim's minimum spanning tree over mutual reachability, O(N^2) without a matrix."""

import numpy as np

from .._accel import USE_NUMBA, jit


@jit
def prim_mst_loop(X, core):
    n, dim = X.shape
    in_tree = np.zeros(n, dtype=np.bool_)
    best = np.full(n, np.inf)
    src = np.full(n, -1, dtype=np.int64)
    edges_a = np.empty(n - 1, dtype=np.int64)
    edges_b = np.empty(n - 1, dtype=np.int64)
    weights = np.empty(n - 1)
    cur = 0
    in_tree[0] = True
    for step in range(n - 1):
        nxt = -1
        nxt_d = np.inf
        for j in range(n):
            if in_tree[j]:
                continue
            s = 0.0
            for c in range(dim):
                diff = X[cur, c] - X[j, c]
                s += diff * diff
            d = np.sqrt(s)
            if core[cur] > d:
                d = core[cur]
            if core[j] > d:
                d = core[j]
            if d < best[j]:
                best[j] = d
                src[j] = cur
            if best[j] < nxt_d:
                nxt_d = best[j]
                nxt = j
        edges_a[step] = src[nxt]
        edges_b[step] = nxt
        weights[step] = nxt_d
        in_tree[nxt] = True
        cur = nxt
    return edges_a, edges_b, weights


def prim_mst_numpy(X, core):
    """Vectorized twin of :func:`prim_mst_loop` (one numpy pass per added vertex)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    src = np.full(n, -1, dtype=np.int64)
    edges_a = np.empty(n - 1, dtype=np.int64)
    edges_b = np.empty(n - 1, dtype=np.int64)
    weights = np.empty(n - 1)
    cur = 0
    in_tree[0] = True
    for step in range(n - 1):
        d = np.sqrt(((X[cur] - X) ** 2).sum(axis=1))
        d = np.maximum(np.maximum(d, core[cur]), core)
        better = (~in_tree) & (d < best)
        best[better] = d[better]
        src[better] = cur
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))
        edges_a[step] = src[nxt]
        edges_b[step] = nxt
        weights[step] = cand[nxt]
        in_tree[nxt] = True
        cur = nxt
    return edges_a, edges_b, weights


def prim_mst(X, core):
    X = np.ascontiguousarray(X, dtype=np.float64)
    core = np.ascontiguousarray(core, dtype=np.float64)
    if X.shape[0] < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    if USE_NUMBA:
        return prim_mst_loop(X, core)
    return prim_mst_numpy(X, core)
