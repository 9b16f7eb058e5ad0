import hashlib
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastisac.bqp import (
    InstanceError,
    check_feasibility,
    evaluate_objective,
    generate_qkp,
    generate_tsp,
    load_instance,
    make_instance,
    make_solution,
    qkp_profit,
    save_instance,
    tour_length,
    tour_to_x,
    tsp_to_bqp,
)


def naive_objective(inst, x):
    Q = np.zeros((inst.n, inst.n))
    for i, j, v in zip(inst.q_row, inst.q_col, inst.q_val):
        Q[i, j] = v
        Q[j, i] = v
    total = 0.0
    for i in range(inst.n):
        for j in range(inst.n):
            total += Q[i, j] * x[i] * x[j]
    return total + inst.offset


# -- objective and feasibility ---------------------------------------------------


def test_objective_diagonal_sum():
    inst = make_instance("d", 2, [(0, 0, 1.0), (1, 1, 1.0)])
    assert evaluate_objective(inst, [1, 1]) == 2.0


def test_objective_zero_vector():
    inst = generate_qkp(12, 0.7, 1)
    assert evaluate_objective(inst, np.zeros(12, dtype=int)) == 0.0


def test_objective_offdiag_counted_twice():
    inst = make_instance("o", 2, [(0, 1, 3.0)])
    assert evaluate_objective(inst, [1, 1]) == 6.0
    assert evaluate_objective(inst, [1, 0]) == 0.0


def test_objective_dimension_mismatch():
    inst = make_instance("o", 2, [(0, 1, 3.0)])
    with pytest.raises(InstanceError):
        evaluate_objective(inst, [1, 1, 0])


def test_feasibility_cases():
    free = make_instance("f", 2, [(0, 0, 1.0)])
    assert check_feasibility(free, [1, 1]) == (True, 0.0)
    tight = make_instance("t", 2, [(0, 0, 1.0)], [(0, 0, 1.0), (0, 1, 1.0)], [1.0])
    assert check_feasibility(tight, [1, 1]) == (False, 1.0)
    loose = make_instance("l", 2, [(0, 0, 1.0)], [(0, 0, 1.0), (0, 1, 1.0)], [2.0])
    assert check_feasibility(loose, [1, 1]) == (True, 0.0)
    with pytest.raises(InstanceError):
        check_feasibility(loose, [1])


def test_solution_consistency():
    inst = generate_qkp(10, 0.5, 4)
    x = np.array([1, 0] * 5)
    sol = make_solution(inst, x)
    assert sol.cost == evaluate_objective(inst, x)
    assert sol.feasible == check_feasibility(inst, x)[0]


def test_invariants_rejected():
    with pytest.raises(InstanceError):
        make_instance("z", 2, [(0, 0, 1.0)], [(0, 0, 0.0)], [1.0])  # all-zero row
    with pytest.raises(InstanceError):
        make_instance("n", 2, [(0, 0, float("nan"))])
    with pytest.raises(InstanceError):
        make_instance("e", 0)


@given(st.integers(1, 9), st.integers(0, 2**31 - 1), st.floats(0.05, 1.0))
def test_objective_matches_dense_oracle(n, seed, density):
    r = np.random.default_rng(seed)
    entries = [(i, j, float(r.normal())) for i in range(n) for j in range(i, n) if r.random() < density]
    inst = make_instance("h", n, entries or None, offset=float(r.normal()))
    x = (r.random(n) < 0.5).astype(int)
    got = evaluate_objective(inst, x)
    want = naive_objective(inst, x)
    assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


# -- QKP ---------------------------------------------------------------------------


def test_qkp_frozen_small():
    inst = generate_qkp(6, 0.5, 3)
    d = inst.to_dict()
    assert d["b"] == [86.0]
    assert d["q"][:3] == [[0, 0, -43.0], [0, 2, -2.5], [0, 5, -16.0]]
    assert [w for _, _, w in d["a"]] == [21.0, 34.0, 46.0, 13.0, 25.0, 32.0]


def test_qkp_frozen_digest():
    digest = hashlib.sha256(generate_qkp(50, 0.3, 11).to_json().encode()).hexdigest()
    assert digest == "bb75d180699f4df17813664193943345dd25390da095533712989c02cb3a25d2"


def test_qkp_density_count():
    inst = generate_qkp(1000, 0.25, 7)
    count = len(inst.offdiag()[0])
    expected = 0.25 * 1000 * 999 / 2
    assert abs(count - expected) <= 0.03 * expected


def test_qkp_n2_dense():
    inst = generate_qkp(2, 1.0, 0)
    assert len(inst.offdiag()[0]) == 1
    assert inst.m == 1


def test_qkp_deterministic_bytes():
    assert generate_qkp(30, 0.4, 9).to_json() == generate_qkp(30, 0.4, 9).to_json()


def test_qkp_capacity_and_weights():
    inst = generate_qkp(40, 0.3, 5)
    w = inst.dense_a()[0]
    assert np.all((w >= 1) & (w <= 50)) and np.all(w == np.round(w))
    assert inst.b[0] == np.ceil(0.5 * w.sum())


@pytest.mark.parametrize("density", [0.0, -0.1, 1.5])
def test_qkp_bad_density(density):
    with pytest.raises(InstanceError):
        generate_qkp(5, density, 0)


@pytest.mark.parametrize("seed", range(4))
def test_qkp_argmin_equals_profit_argmax(seed):
    inst = generate_qkp(11, 0.6, seed)
    best_bqp, best_profit = None, None
    for bits in itertools.product((0, 1), repeat=inst.n):
        x = np.array(bits)
        if not check_feasibility(inst, x)[0]:
            continue
        e = evaluate_objective(inst, x)
        p = qkp_profit(inst, x)
        if best_bqp is None or e < best_bqp[0]:
            best_bqp = (e, bits)
        if best_profit is None or p > best_profit[0]:
            best_profit = (p, bits)
    assert best_bqp[0] == -best_profit[0]
    assert qkp_profit(inst, np.array(best_bqp[1])) == best_profit[0]


# -- TSP ---------------------------------------------------------------------------


def test_tsp_coords():
    pts = generate_tsp(20, 1)
    assert len(pts) == 20 and all(0 <= v <= 1 for p in pts for v in p)
    assert pts == generate_tsp(20, 1)
    three = generate_tsp(3, 5)
    assert len({tuple(p) for p in three}) == 3
    with pytest.raises(InstanceError):
        generate_tsp(2, 0)


def test_tsp_frozen_coords():
    assert generate_tsp(4, 2)[0] == [0.5168714432123558, 0.6521400698684859]


def test_tsp_collinear_tour_exact():
    coords = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
    inst = tsp_to_bqp(coords, penalty=50.0)
    assert evaluate_objective(inst, tour_to_x([0, 1, 2])) == pytest.approx(4.0, abs=1e-12)
    assert inst.m == 0


def test_tsp_zero_vector_penalized():
    coords = generate_tsp(4, 3)
    inst = tsp_to_bqp(coords)
    zero = evaluate_objective(inst, np.zeros(16))
    best_tour = min(tour_length(coords, (0,) + p) for p in itertools.permutations(range(1, 4)))
    assert zero == inst.offset
    assert zero > best_tour


def test_tsp_size_and_errors():
    assert tsp_to_bqp(generate_tsp(4, 0)).n == 16
    with pytest.raises(InstanceError):
        tsp_to_bqp([[0, 0], [1, 1]])
    with pytest.raises(InstanceError):
        tsp_to_bqp(generate_tsp(4, 0), penalty=0.0)


def test_tsp_valid_tour_objective_equals_length():
    coords = generate_tsp(4, 2)
    inst = tsp_to_bqp(coords)
    assert evaluate_objective(inst, tour_to_x([0, 1, 2, 3])) == pytest.approx(1.351910054900072, abs=1e-12)


@pytest.mark.parametrize("cities,seed", [(4, 0), (4, 8), (5, 1)])
def test_tsp_ranking_matches_tour_length(cities, seed):
    coords = generate_tsp(cities, seed)
    inst = tsp_to_bqp(coords)
    perms = list(itertools.permutations(range(cities)))
    lengths = np.array([tour_length(coords, p) for p in perms])
    energies = np.array([evaluate_objective(inst, tour_to_x(p)) for p in perms])
    # Equal values up to 1e-9 means equal rankings except among tours of equal length
    # (rotations and reversals), whose order is immaterial.
    np.testing.assert_allclose(energies, lengths, rtol=0, atol=1e-9)
    for i, j in itertools.combinations(range(len(perms)), 2):
        if abs(lengths[i] - lengths[j]) > 1e-6:
            assert (energies[i] < energies[j]) == (lengths[i] < lengths[j])


def test_tsp_optimum_is_a_tour():
    from fastisac.annealer import brute_force

    coords = generate_tsp(4, 6)
    inst = tsp_to_bqp(coords)
    sol = brute_force(inst)
    X = sol.x.reshape(4, 4)
    assert np.all(X.sum(0) == 1) and np.all(X.sum(1) == 1)
    best = min(tour_length(coords, p) for p in itertools.permutations(range(4)))
    assert sol.cost == pytest.approx(best, abs=1e-9)


# -- serialization ------------------------------------------------------------------


def test_roundtrip_file(tmp_path):
    inst = tsp_to_bqp(generate_tsp(4, 1), id="t4")
    p = tmp_path / "i.json"
    save_instance(inst, p)
    back = load_instance(p)
    assert back.to_json() == inst.to_json()
    doc = json.loads(p.read_text())
    assert set(doc) >= {"id", "n", "m", "q", "a", "b", "problem_tag"}
    assert all(i <= j for i, j, _ in doc["q"])


def test_from_dict_checks_m():
    d = generate_qkp(4, 1.0, 0).to_dict()
    d["m"] = 2
    from fastisac.bqp import BqpInstance

    with pytest.raises(InstanceError):
        BqpInstance.from_dict(d)
