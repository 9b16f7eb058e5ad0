"""Single-flip Metropolis kernel for one run over one epoch.

All randomness comes from a per-run xorshift32 stream held in a one-element
int64 array, so the jitted and interpreted paths draw identical numbers.
"""

import math

import numpy as np

from .._accel import jit

_MASK32 = 0xFFFFFFFF
_INV32 = 1.0 / 4294967296.0
FEAS_TOL = 1e-9


@jit
def xorshift32(state):
    x = state[0]
    x ^= (x << 13) & _MASK32
    x ^= x >> 17
    x ^= (x << 5) & _MASK32
    state[0] = x
    return x


@jit
def uniform01(state):
    return xorshift32(state) * _INV32


@jit
def _violation(lhs, b):
    v = 0.0
    for k in range(b.shape[0]):
        e = lhs[k] - b[k]
        if e > 0.0:
            v += e
    return v


@jit
def init_state(x, diag, indptr, indices, data, a_indptr, a_rows, a_vals, lhs, field):
    """Fill local fields and constraint sums for ``x``; return the objective (no offset)."""
    n = x.shape[0]
    for k in range(lhs.shape[0]):
        lhs[k] = 0.0
    energy = 0.0
    for i in range(n):
        f = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            if x[indices[p]]:
                f += data[p]
        field[i] = f
        if x[i]:
            energy += diag[i] + f
            for p in range(a_indptr[i], a_indptr[i + 1]):
                lhs[a_rows[p]] += a_vals[p]
    return energy


@jit
def flip_deltas(x, diag, indptr, indices, data, a_indptr, a_rows, a_vals, b, weight, out):
    """Penalized cost change of every single flip from ``x`` (used to pick T0)."""
    n = x.shape[0]
    lhs = np.zeros(b.shape[0])
    field = np.zeros(n)
    init_state(x, diag, indptr, indices, data, a_indptr, a_rows, a_vals, lhs, field)
    for i in range(n):
        d = 1.0 - 2.0 * x[i]
        dv = 0.0
        for p in range(a_indptr[i], a_indptr[i + 1]):
            k = a_rows[p]
            old = lhs[k] - b[k]
            new = old + d * a_vals[p]
            dv += max(new, 0.0) - max(old, 0.0)
        out[i] = d * (diag[i] + 2.0 * field[i]) + weight * dv


@jit
def run_epoch(
    diag, indptr, indices, data, a_indptr, a_rows, a_vals, b,
    weight, t0, max_iters, cutoff, rng, x, lhs, field, best_x,
    global_best, hist_cost, hist_iter,
):
    """Random restart followed by up to ``max_iters`` flip proposals.

    The epoch stops early after ``cutoff`` consecutive proposals that fail to
    lower the run's best penalized cost. ``best_x`` receives the lowest-cost
    feasible state seen. Every feasible cost below ``global_best`` is logged
    into ``hist_cost``/``hist_iter``.

    Returns (iterations, history_count, best_feasible_cost, found_feasible).
    """
    n = x.shape[0]
    for i in range(n):
        x[i] = 1 if uniform01(rng) < 0.5 else 0
    energy = init_state(x, diag, indptr, indices, data, a_indptr, a_rows, a_vals, lhs, field)
    viol = _violation(lhs, b)
    pen = energy + weight * viol
    run_best = pen
    best_feas = np.inf
    found = False
    n_hist = 0
    threshold = global_best
    if viol <= FEAS_TOL:
        found = True
        best_feas = energy
        for i in range(n):
            best_x[i] = x[i]
        if energy < threshold:
            hist_cost[n_hist] = energy
            hist_iter[n_hist] = 0
            n_hist += 1
            threshold = energy

    temp = t0
    stall = 0
    it = 0
    while it < max_iters:
        if it > 0 and it % n == 0:
            temp *= 0.95
        i = xorshift32(rng) % n
        d = 1.0 - 2.0 * x[i]
        de = d * (diag[i] + 2.0 * field[i])
        dv = 0.0
        for p in range(a_indptr[i], a_indptr[i + 1]):
            k = a_rows[p]
            old = lhs[k] - b[k]
            new = old + d * a_vals[p]
            dv += max(new, 0.0) - max(old, 0.0)
        df = de + weight * dv
        accept = df <= 0.0
        if not accept and temp > 0.0:
            accept = uniform01(rng) < math.exp(-df / temp)
        it += 1
        if accept:
            x[i] = 1 - x[i]
            energy += de
            viol += dv
            if viol < FEAS_TOL:
                viol = 0.0
            pen = energy + weight * viol
            for p in range(indptr[i], indptr[i + 1]):
                field[indices[p]] += d * data[p]
            for p in range(a_indptr[i], a_indptr[i + 1]):
                lhs[a_rows[p]] += d * a_vals[p]
            if viol <= FEAS_TOL and energy < best_feas:
                found = True
                best_feas = energy
                for j in range(n):
                    best_x[j] = x[j]
                if energy < threshold:
                    hist_cost[n_hist] = energy
                    hist_iter[n_hist] = it
                    n_hist += 1
                    threshold = energy
        if pen < run_best:
            run_best = pen
            stall = 0
        else:
            stall += 1
            if stall >= cutoff:
                break
    return it, n_hist, best_feas, found
