import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastisac.annealer import RunLog, SolverParams, solve
from fastisac.bqp import generate_qkp
from fastisac.features import (
    FEATURE_NAMES,
    N_FEATURES,
    FeatureVector,
    extract_features,
    read_feature_csv,
    standardize,
    write_feature_csv,
)


def make_log(pool, history, epochs=3, seed=0):
    pool = list(pool)
    if pool:
        px = np.array([x for x, _ in pool], dtype=np.int8)
        pc = np.array([c for _, c in pool], dtype=np.float64)
    else:
        px, pc = np.zeros((0, 0), dtype=np.int8), np.zeros(0)
    return RunLog(seed=seed, wall_limit_ms=100, update_history=list(history), pool_x=px, pool_cost=pc,
                  epochs_executed=epochs)


def f(fv, name):
    return fv.values[FEATURE_NAMES.index(name)]


def test_schema_length():
    assert N_FEATURES == 18
    assert len(set(FEATURE_NAMES)) == 18


def test_identical_pool():
    x = [1, 0, 1, 1]
    fv = extract_features([make_log([(x, -5.0)], [(-5.0, 1)]), make_log([(x, -5.0)], [(-5.0, 2)])])
    for name in ("hamming_max", "hamming_median", "hamming_q1", "hamming_q3"):
        assert f(fv, name) == 0.0
    assert f(fv, "identical_ratio") == 1.0


def test_empty_logs_defaults():
    fv = extract_features([make_log([], [], epochs=0)])
    expected = np.zeros(18)
    expected[FEATURE_NAMES.index("identical_ratio")] = 1.0
    assert np.array_equal(fv.values, expected)


def test_cost_quartiles_hand_example():
    pool = [([i & 1, i >> 1 & 1, i >> 2 & 1], float(c)) for i, c in zip(range(5), [1, 2, 3, 4, 5])]
    fv = extract_features([make_log(pool, [(5.0, 0), (1.0, 9)])])
    assert f(fv, "pool_count") == 5
    assert (f(fv, "pool_cost_max"), f(fv, "pool_cost_median"), f(fv, "pool_cost_q1"), f(fv, "pool_cost_q3")) == (5, 3, 2, 4)
    assert f(fv, "best_cost") == 1.0
    assert f(fv, "update_count") == 2 and f(fv, "update_time_max") == 9


def test_frozen_vector_from_solver():
    inst = generate_qkp(16, 0.5, 2)
    logs = [solve(inst, SolverParams(4, 2, 50), 5, s, clock="ticks") for s in range(2)]
    fv = extract_features(logs, inst.id)
    assert fv.instance_id == inst.id
    assert np.all(np.isfinite(fv.values))
    assert f(fv, "best_cost") == min(lg.best_cost for lg in logs)
    assert f(fv, "mean_epochs") == np.mean([lg.epochs_executed for lg in logs])


def naive_features(logs):
    costs, sols, times = [], [], []
    for lg in logs:
        for x, c in lg.pool:
            costs.append(c)
            sols.append(list(x))
        times += [t for _, t in lg.update_history]
    out = [0.0] * 18
    if costs:
        out[0] = len(costs)
        out[1] = max(costs)
        out[2], out[3], out[4] = (float(np.percentile(costs, q)) for q in (50, 25, 75))
        best = min(costs)
        ref = min((s for s, c in zip(sols, costs) if c == best), key=lambda s: bytes(s))
        ham = [sum(a != b for a, b in zip(s, ref)) for s in sols]
        out[5] = max(ham)
        out[6], out[7], out[8] = (float(np.percentile(ham, q)) for q in (50, 25, 75))
        out[9] = sum(all(s[j] == sols[0][j] for s in sols) for j in range(len(ref))) / len(ref)
        out[16] = best
    else:
        out[9] = 1.0
    if times:
        out[10] = len(times)
        out[11], out[12] = min(times), max(times)
        out[13], out[14], out[15] = (float(np.percentile(times, q)) for q in (50, 25, 75))
    out[17] = float(np.mean([lg.epochs_executed for lg in logs]))
    return np.array(out)


pool_entry = st.tuples(st.lists(st.integers(0, 1), min_size=5, max_size=5), st.integers(-20, 20).map(float))


@st.composite
def logs_strategy(draw):
    logs = []
    for _ in range(draw(st.integers(1, 4))):
        entries = draw(st.lists(pool_entry, max_size=6, unique_by=lambda e: tuple(e[0])))
        entries.sort(key=lambda e: e[1])
        hist_costs = sorted(set(draw(st.lists(st.integers(-20, 20), max_size=5))), reverse=True)
        times = sorted(draw(st.lists(st.integers(0, 100), min_size=len(hist_costs), max_size=len(hist_costs))))
        logs.append(make_log(entries, list(zip(map(float, hist_costs), times)), draw(st.integers(0, 50))))
    return logs


@given(logs_strategy(), st.randoms())
def test_matches_naive_oracle_and_order_invariant(logs, rnd):
    fv = extract_features(logs)
    np.testing.assert_allclose(fv.values, naive_features(logs), rtol=0, atol=1e-12)
    shuffled = list(logs)
    rnd.shuffle(shuffled)
    assert np.array_equal(extract_features(shuffled).values, fv.values)


def test_standardize_hand_and_constant():
    corpus = [FeatureVector("a", np.r_[0.0, 7.0, np.zeros(16)]), FeatureVector("b", np.r_[2.0, 7.0, np.zeros(16)])]
    z = standardize(corpus)
    assert z[0].values[0] == -1.0 and z[1].values[0] == 1.0
    assert z[0].values[1] == 0.0 and z[1].values[1] == 0.0
    assert all(v.standardized for v in z)


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=18, max_size=18), min_size=2, max_size=12))
def test_standardize_means_zero(rows):
    z = standardize([FeatureVector(str(i), np.array(r)) for i, r in enumerate(rows)])
    M = np.stack([v.values for v in z])
    assert np.all(np.isfinite(M))
    raw = np.array(rows)
    std = raw.std(axis=0)
    # cancellation bound: roundoff in the mean is amplified by max|x| / std
    cond = np.where(std > 0, np.abs(raw).max(axis=0) / np.where(std > 0, std, 1.0), 1.0)
    assert np.all(np.abs(M.mean(axis=0)) <= 1e-12 + 64 * np.finfo(float).eps * cond)


def test_standardize_needs_two():
    with pytest.raises(ValueError):
        standardize([FeatureVector("a", np.zeros(18))])
    with pytest.raises(ValueError):
        extract_features([])


def test_csv_roundtrip(tmp_path):
    corpus = [FeatureVector(f"i{k}", np.arange(18) * 0.1 + k) for k in range(3)]
    p = tmp_path / "f.csv"
    write_feature_csv(p, corpus)
    assert p.read_text().splitlines()[1].split(",")[1:] == list(FEATURE_NAMES)
    back = read_feature_csv(p)
    assert [b.instance_id for b in back] == ["i0", "i1", "i2"]
    assert all(np.array_equal(a.values, b.values) for a, b in zip(corpus, back))
    p.write_text(p.read_text().replace("fastisac-features/1", "other/9"))
    with pytest.raises(ValueError):
        read_feature_csv(p)
