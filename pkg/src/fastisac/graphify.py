"""BQP instances as attributed graphs, plus node-sampling augmentation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bqp import BqpInstance


@dataclass
class InstanceGraph:
    """Node features are (tanh-scaled diagonal, degree, constraint count).

    ``edges`` holds each undirected pair once (i < j); ``edge_attr`` the
    tanh-scaled off-diagonal value.
    """

    node_features: np.ndarray
    edges: np.ndarray
    edge_attr: np.ndarray
    label: int | None = None
    graph_id: str = ""

    @property
    def node_count(self) -> int:
        return int(self.node_features.shape[0])

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def to_dict(self) -> dict:
        return {
            "nodes": [[float(v) for v in row] for row in self.node_features],
            "edges": [[int(i), int(j), float(w)] for (i, j), w in zip(self.edges, self.edge_attr)],
            "label": None if self.label is None else int(self.label),
        }

    @classmethod
    def from_dict(cls, d: dict, graph_id: str = "") -> "InstanceGraph":
        nodes = np.asarray(d["nodes"], dtype=np.float64).reshape(-1, 3)
        e = np.asarray(d.get("edges") or np.zeros((0, 3)), dtype=np.float64).reshape(-1, 3)
        return cls(nodes, e[:, :2].astype(np.int64), e[:, 2].copy(), d.get("label"), graph_id)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str, graph_id: str = "") -> "InstanceGraph":
        return cls.from_dict(json.loads(text), graph_id)


@dataclass
class SampledGraph(InstanceGraph):
    parent_id: str = ""
    kept_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _median_scale(values: np.ndarray) -> float:
    mags = np.abs(values[values != 0])
    return float(np.median(mags)) if mags.size else 1.0


def to_graph(instance: BqpInstance, label: int | None = None) -> InstanceGraph:
    diag = instance.diagonal()
    r, c, v = instance.offdiag()
    n = instance.n
    feats = np.empty((n, 3))
    feats[:, 0] = np.tanh(diag / _median_scale(diag))
    deg = np.bincount(r, minlength=n) + np.bincount(c, minlength=n)
    feats[:, 1] = deg
    nz = instance.a_val != 0
    feats[:, 2] = np.bincount(instance.a_col[nz], minlength=n)
    edges = np.stack([r, c], axis=1).astype(np.int64)
    edge_attr = np.tanh(v / _median_scale(v))
    return InstanceGraph(feats, edges, edge_attr, label, instance.id)


def sample_size(n: int, rate: float) -> int:
    return max(1, math.ceil(rate * n - 1e-9))


def sample_nodes(g: InstanceGraph, rate: float = 0.10, count: int = 20, seed: int = 0) -> list[SampledGraph]:
    """``count`` induced subgraphs on uniformly drawn node subsets.

    Node features are copied from the parent, so degree keeps its parent-graph
    value. An edge survives only when both endpoints are kept.
    """
    n = g.node_count
    if n == 0:
        raise ValueError("cannot sample an empty graph")
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    k = sample_size(n, rate)
    out = []
    pos = np.full(n, -1, dtype=np.int64)
    for s in range(count):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, s])
        kept = np.sort(rng.choice(n, size=k, replace=False))
        pos[:] = -1
        pos[kept] = np.arange(k)
        a, b = pos[g.edges[:, 0]], pos[g.edges[:, 1]]
        mask = (a >= 0) & (b >= 0)
        out.append(SampledGraph(
            node_features=g.node_features[kept].copy(),
            edges=np.stack([a[mask], b[mask]], axis=1),
            edge_attr=g.edge_attr[mask].copy(),
            label=g.label,
            graph_id=f"{g.graph_id}#{s}",
            parent_id=g.graph_id,
            kept_nodes=kept,
        ))
    return out


def _largest_remainder(sizes: list[int], frac: float) -> list[int]:
    total = int(math.floor(frac * sum(sizes) + 0.5))
    exact = [frac * s for s in sizes]
    alloc = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[: max(0, total - sum(alloc))]:
        alloc[i] += 1
    return alloc


def build_dataset(graphs: list[InstanceGraph], balance_factor: float = 1.2, split: float = 0.9,
                  seed: int = 0) -> tuple[list[InstanceGraph], list[InstanceGraph]]:
    """Cap each class at ``balance_factor`` x the smallest class, then split stratified."""
    if not graphs:
        raise ValueError("empty graph list")
    labels = np.array([g.label for g in graphs])
    if any(lab is None for lab in labels):
        raise ValueError("every graph needs a label")
    L = int(labels.max()) + 1
    by_class = [np.flatnonzero(labels == c) for c in range(L)]
    empty = [c for c, idx in enumerate(by_class) if idx.size == 0]
    if empty:
        raise ValueError(f"classes without graphs: {empty}")
    cap = int(math.floor(balance_factor * min(idx.size for idx in by_class) + 1e-9))
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xDA7A])
    chosen = []
    for idx in by_class:
        if idx.size > cap:
            idx = np.sort(rng.choice(idx, size=cap, replace=False))
        chosen.append(rng.permutation(idx))
    n_train = _largest_remainder([len(c) for c in chosen], split)
    train, val = [], []
    for idx, nt in zip(chosen, n_train):
        train.extend(graphs[i] for i in idx[:nt])
        val.extend(graphs[i] for i in idx[nt:])
    return train, val
