"""Low-dimensional embedding of standardized features via a fuzzy k-NN graph layout."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit

from .annealer import run_seed
from .kernels.layout import optimize_layout


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbedConfig:
    n_neighbors: int = 30
    min_dist: float = 0.0
    n_components: int = 3
    metric: str = "euclidean"
    epochs: int = 500
    learning_rate: float = 1.0
    negative_sample_rate: int = 5
    seed: int = 0


@dataclass
class EmbeddingPoint:
    instance_id: str
    coords: np.ndarray


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    D2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D2, 0.0, out=D2)
    np.fill_diagonal(D2, 0.0)
    return np.sqrt(D2)


def exact_knn(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k nearest other points per row: (indices, distances), ascending."""
    D = pairwise_distances(X)
    np.fill_diagonal(D, np.inf)
    idx = np.argsort(D, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(D, idx, axis=1)


def smooth_knn_dist(dists: np.ndarray, n_iter: int = 64, tol: float = 1e-5):
    """Per-row (rho, sigma) with sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)."""
    n, k = dists.shape
    target = math.log2(k)
    rho = dists[:, 0].copy()
    sigma = np.ones(n)
    for i in range(n):
        excess = np.maximum(dists[i] - rho[i], 0.0)
        lo, hi, mid = 0.0, math.inf, 1.0
        for _ in range(n_iter):
            psum = np.exp(-excess / mid).sum()
            if abs(psum - target) < tol:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == math.inf else (lo + hi) / 2.0
        sigma[i] = max(mid, 1e-12)
    return rho, sigma


def fuzzy_graph(X: np.ndarray, n_neighbors: int):
    """Symmetrized membership matrix w + w^T - w*w^T as CSR, plus (rho, sigma)."""
    n = X.shape[0]
    idx, dists = exact_knn(X, n_neighbors)
    rho, sigma = smooth_knn_dist(dists)
    w = np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None])
    rows = np.repeat(np.arange(n), n_neighbors)
    W = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    Wt = W.T.tocsr()
    S = (W + Wt - W.multiply(Wt)).tocsr()
    S.sort_indices()
    return S, rho, sigma


def find_ab_params(spread: float = 1.0, min_dist: float = 0.0) -> tuple[float, float]:
    """Fit 1 / (1 + a d^(2b)) to the target membership curve.

    ``min_dist = 0`` makes the fit singular; it is replaced by 1e-3.
    """
    md = max(min_dist, 1e-3)

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < md, 1.0, np.exp(-(xv - md) / spread))
    (a, b), _ = curve_fit(curve, xv, yv)
    return float(a), float(b)


def embed(corpus, cfg: EmbedConfig = EmbedConfig(), ids=None) -> list[EmbeddingPoint]:
    X = np.asarray(corpus, dtype=np.float64)
    n = X.shape[0]
    if cfg.metric != "euclidean":
        raise EmbeddingError(f"unsupported metric {cfg.metric!r}")
    if cfg.n_neighbors < 2:
        raise EmbeddingError("n_neighbors must be >= 2")
    if n <= cfg.n_neighbors:
        raise EmbeddingError(f"corpus of {n} rows too small for n_neighbors={cfg.n_neighbors}")
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]

    S, _, _ = fuzzy_graph(X, cfg.n_neighbors)
    coo = S.tocoo()
    keep = coo.data >= coo.data.max() / cfg.epochs
    head = coo.row[keep].astype(np.int64)
    tail = coo.col[keep].astype(np.int64)
    weights = coo.data[keep]
    order = np.lexsort((tail, head))
    head, tail, weights = head[order], tail[order], weights[order]
    epochs_per_sample = weights.max() / weights

    a, b = find_ab_params(1.0, cfg.min_dist)
    init_rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFF, 0xE3])
    Y = init_rng.uniform(-10.0, 10.0, size=(n, cfg.n_components))
    rng_state = np.array([run_seed(cfg.seed, 0xE3B)], dtype=np.int64)
    optimize_layout(head, tail, epochs_per_sample, Y, a, b, cfg.epochs, cfg.learning_rate,
                    float(cfg.negative_sample_rate), rng_state)
    if not np.all(np.isfinite(Y)):
        raise EmbeddingError("layout diverged to non-finite coordinates")
    return [EmbeddingPoint(ids[i], Y[i].copy()) for i in range(n)]


def trustworthiness(high, low, k: int) -> float:
    """Fraction-style penalty on low-dim neighbors that are far in the original space."""
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    n = high.shape[0]
    if low.shape[0] != n:
        raise ValueError("high and low must have the same number of rows")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the row count {n}")
    denom = n * k * (2.0 * n - 3.0 * k - 1.0)
    if denom <= 0:
        raise ValueError(f"k={k} too large for {n} rows")
    Dh = pairwise_distances(high)
    Dl = pairwise_distances(low)
    np.fill_diagonal(Dh, np.inf)
    np.fill_diagonal(Dl, np.inf)
    order_h = np.argsort(Dh, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    ranks[np.arange(n)[:, None], order_h] = np.arange(1, n + 1)
    nn_low = np.argsort(Dl, axis=1, kind="stable")[:, :k]
    r = ranks[np.arange(n)[:, None], nn_low]
    penalty = np.maximum(r - k, 0).sum()
    return float(1.0 - 2.0 / denom * penalty)


def write_embedding_csv(path, points: list[EmbeddingPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = len(points[0].coords) if points else 3
        w.writerow(["instance_id"] + ["x", "y", "z"][:dim] + [f"c{i}" for i in range(3, dim)])
        for p in points:
            w.writerow([p.instance_id] + [repr(float(v)) for v in p.coords])


def read_embedding_csv(path) -> list[EmbeddingPoint]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [EmbeddingPoint(r[0], np.array([float(v) for v in r[1:]])) for r in rows[1:]]
