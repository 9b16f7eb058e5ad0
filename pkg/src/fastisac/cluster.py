"""Density-based hierarchical clustering (HDBSCAN) of embedded instances."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embed import pairwise_distances
from .kernels.mst import prim_mst


@dataclass(frozen=True)
class ClusterConfig:
    min_cluster_size: int = 5
    min_samples: int = 5
    cluster_selection_epsilon: float = 0.0
    metric: str = "euclidean"

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be >= 2")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.metric != "euclidean":
            raise ValueError(f"unsupported metric {self.metric!r}")


@dataclass
class ClusterModel:
    labels: np.ndarray
    L: int
    medoids: np.ndarray
    noise_reassigned: np.ndarray
    raw_labels: np.ndarray
    medoid_index: np.ndarray


def core_distances(X: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, the point itself counted first."""
    D = pairwise_distances(X)
    k = min(min_samples, X.shape[0]) - 1
    return np.sort(D, axis=1)[:, k]


def mutual_reachability(X: np.ndarray, min_samples: int) -> np.ndarray:
    core = core_distances(X, min_samples)
    D = pairwise_distances(X)
    return np.maximum(D, np.maximum(core[:, None], core[None, :]))


def single_linkage(n: int, a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Merge MST edges by weight into a scipy-style linkage (left, right, dist, size)."""
    order = np.argsort(w, kind="stable")
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)
    out = np.zeros((n - 1, 4))

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for k, e in enumerate(order):
        ra, rb = find(a[e]), find(b[e])
        new = n + k
        parent[ra] = parent[rb] = new
        size[new] = size[ra] + size[rb]
        out[k] = (ra, rb, w[e], size[new])
    return out


def condense_tree(linkage: np.ndarray, min_cluster_size: int):
    """Return condensed-tree records as arrays (parent, child, lambda, child_size).

    Cluster ids start at ``n`` (the root); points keep their indices.
    """
    n = linkage.shape[0] + 1
    root = 2 * n - 2
    max_d = linkage[:, 2].max() if len(linkage) else 0.0
    floor = max_d * 1e-12 if max_d > 0 else 1e-12

    def kids(node):
        row = linkage[node - n]
        return int(row[0]), int(row[1]), float(row[2])

    def count(node):
        return 1 if node < n else int(linkage[node - n, 3])

    def leaves(node):
        stack, out = [node], []
        while stack:
            v = stack.pop()
            if v < n:
                out.append(v)
            else:
                l, r, _ = kids(v)
                stack.extend((l, r))
        return out

    relabel = {root: n}
    next_label = n + 1
    records = []
    queue = [root]
    while queue:
        node = queue.pop(0)
        if node < n:
            continue
        left, right, dist = kids(node)
        lam = 1.0 / max(dist, floor)
        lc, rc = count(left), count(right)
        me = relabel[node]
        if lc >= min_cluster_size and rc >= min_cluster_size:
            for child, cc in ((left, lc), (right, rc)):
                relabel[child] = next_label
                records.append((me, next_label, lam, cc))
                next_label += 1
                queue.append(child)
        elif lc < min_cluster_size and rc < min_cluster_size:
            for child in (left, right):
                for p in leaves(child):
                    records.append((me, p, lam, 1))
        else:
            small, big = (left, right) if lc < min_cluster_size else (right, left)
            for p in leaves(small):
                records.append((me, p, lam, 1))
            relabel[big] = me
            queue.append(big)
    rec = np.array(records, dtype=np.float64).reshape(-1, 4)
    return rec[:, 0].astype(np.int64), rec[:, 1].astype(np.int64), rec[:, 2], rec[:, 3].astype(np.int64)


def compute_stability(parent, child, lam, child_size, n: int) -> dict[int, float]:
    birth = {n: 0.0}
    for p, c, l in zip(parent, child, lam):
        if c >= n:
            birth[c] = l
    stab = {c: 0.0 for c in birth}
    for p, l, s in zip(parent, lam, child_size):
        stab[p] += (l - birth[p]) * s
    return stab


def select_clusters(parent, child, stability: dict[int, float], n: int) -> list[int]:
    """Excess-of-mass selection; the root is never selected."""
    children: dict[int, list[int]] = {}
    for p, c in zip(parent, child):
        if c >= n:
            children.setdefault(p, []).append(c)
    stab = dict(stability)
    selected = {c: True for c in stab if c != n}
    for node in sorted(selected, reverse=True):
        kids = children.get(node, [])
        sub = sum(stab[k] for k in kids)
        if sub > stab[node]:
            selected[node] = False
            stab[node] = sub
        else:
            stack = list(kids)
            while stack:
                k = stack.pop()
                selected[k] = False
                stack.extend(children.get(k, []))
    return sorted(c for c, on in selected.items() if on)


def _raw_labels(parent, child, selected: list[int], n: int) -> np.ndarray:
    up = {c: p for p, c in zip(parent, child) if c >= n}
    chosen = set(selected)
    owner: dict[int, int] = {}

    def resolve(c):
        path = []
        while c not in owner:
            if c in chosen:
                owner[c] = c
                break
            if c not in up:
                owner[c] = -1
                break
            path.append(c)
            c = up[c]
        res = owner[c]
        for q in path:
            owner[q] = res
        return res

    labels = np.full(n, -1, dtype=np.int64)
    for p, c in zip(parent, child):
        if c < n:
            labels[c] = resolve(int(p))
    return labels


def _single(X, n):
    D = pairwise_distances(X) if n else np.zeros((0, 0))
    m = int(np.argmin(D.sum(axis=1))) if n else 0
    return ClusterModel(
        labels=np.zeros(n, dtype=np.int64),
        L=1,
        medoids=X[m:m + 1].copy(),
        noise_reassigned=np.zeros(n, dtype=bool),
        raw_labels=np.zeros(n, dtype=np.int64),
        medoid_index=np.array([m], dtype=np.int64),
    )


def hdbscan(points, cfg: ClusterConfig = ClusterConfig()) -> ClusterModel:
    X = np.asarray([getattr(p, "coords", p) for p in points], dtype=np.float64)
    n = X.shape[0]
    if n < max(cfg.min_cluster_size, 2):
        return _single(X, n)
    core = core_distances(X, cfg.min_samples)
    a, b, w = prim_mst(X, core)
    if w.max() <= 0.0:
        return _single(X, n)
    link = single_linkage(n, a, b, w)
    parent, child, lam, csize = condense_tree(link, cfg.min_cluster_size)
    stab = compute_stability(parent, child, lam, csize, n)
    selected = select_clusters(parent, child, stab, n)
    raw = _raw_labels(parent, child, selected, n)
    if not selected or np.all(raw < 0):
        return _single(X, n)

    # Relabel by descending size, ties broken by smallest member index.
    groups = [np.flatnonzero(raw == c) for c in selected]
    groups = [g for g in groups if g.size]
    groups.sort(key=lambda g: (-g.size, g[0]))
    labels = np.full(n, -1, dtype=np.int64)
    for k, g in enumerate(groups):
        labels[g] = k
    raw_final = labels.copy()
    noise = labels < 0
    if noise.any():
        D = pairwise_distances(X)
        D[:, noise] = np.inf
        nearest = np.argmin(D[noise], axis=1)
        labels[noise] = labels[nearest]

    L = len(groups)
    D = pairwise_distances(X)
    medoid_index = np.empty(L, dtype=np.int64)
    for k in range(L):
        members = np.flatnonzero(labels == k)
        sub = D[np.ix_(members, members)].sum(axis=1)
        medoid_index[k] = members[int(np.argmin(sub))]
    return ClusterModel(
        labels=labels,
        L=L,
        medoids=X[medoid_index].copy(),
        noise_reassigned=noise,
        raw_labels=raw_final,
        medoid_index=medoid_index,
    )


def mst_total_weight(points, min_samples: int) -> float:
    X = np.asarray(points, dtype=np.float64)
    _, _, w = prim_mst(X, core_distances(X, min_samples))
    return float(w.sum())


def write_labels_csv(path, ids, model: ClusterModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "class", "noise_reassigned"])
        for iid, lab, nr in zip(ids, model.labels, model.noise_reassigned):
            w.writerow([iid, int(lab), int(bool(nr))])


def read_labels_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return ([r[0] for r in rows], np.array([int(r[1]) for r in rows], dtype=np.int64),
            np.array([r[2] == "1" for r in rows]))
