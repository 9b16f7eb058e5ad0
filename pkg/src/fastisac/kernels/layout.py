"""Negative-sampling SGD for the neighbor-graph layout."""

import numpy as np

from .._accel import jit
from .annealing import xorshift32


@jit
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@jit
def optimize_layout(head, tail, epochs_per_sample, Y, a, b, n_epochs, initial_lr, neg_rate, rng):
    """Move ``Y`` in place. Edge ``e`` is visited about every
    ``epochs_per_sample[e]`` epochs, each visit followed by ``neg_rate``
    repulsive updates against uniformly drawn points."""
    n_edges = head.shape[0]
    n_pts, dim = Y.shape
    next_sample = epochs_per_sample.copy()
    neg_per_sample = epochs_per_sample / neg_rate
    next_neg = neg_per_sample.copy()
    for epoch in range(n_epochs):
        lr = initial_lr * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if next_sample[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            d2 = 0.0
            for c in range(dim):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            if d2 > 0.0:
                coef = -2.0 * a * b * d2 ** (b - 1.0) / (1.0 + a * d2**b)
            else:
                coef = 0.0
            for c in range(dim):
                g = _clip(coef * (Y[i, c] - Y[j, c]))
                Y[i, c] += g * lr
                Y[j, c] -= g * lr
            next_sample[e] += epochs_per_sample[e]

            n_neg = int((epoch - next_neg[e]) / neg_per_sample[e])
            for _ in range(n_neg):
                k = xorshift32(rng) % n_pts
                if k == i:
                    continue
                d2 = 0.0
                for c in range(dim):
                    diff = Y[i, c] - Y[k, c]
                    d2 += diff * diff
                if d2 > 0.0:
                    coef = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2**b))
                    for c in range(dim):
                        Y[i, c] += _clip(coef * (Y[i, c] - Y[k, c])) * lr
                else:
                    for c in range(dim):
                        Y[i, c] += 4.0 * lr
            next_neg[e] += n_neg * neg_per_sample[e]
    return Y
