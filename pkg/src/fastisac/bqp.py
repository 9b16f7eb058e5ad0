"""Binary quadratic programs with linear inequality constraints.

An instance is ``minimize x^T Q x + offset  s.t.  A x <= b`` over binary
``x``. ``Q`` is stored as its upper triangle (``i <= j``); off-diagonal
entries stand for the symmetric pair, so they contribute twice to the
objective (full-matrix convention).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROBLEM_TAGS = ("QKP", "TSP", "MIXED")


class InstanceError(ValueError):
    """Raised for malformed instances or mismatched solution vectors."""


@dataclass(frozen=True, eq=False)
class BqpInstance:
    id: str
    n: int
    q_row: np.ndarray
    q_col: np.ndarray
    q_val: np.ndarray
    a_row: np.ndarray
    a_col: np.ndarray
    a_val: np.ndarray
    b: np.ndarray
    problem_tag: str = "MIXED"
    offset: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("q_row", "q_col", "a_row", "a_col"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("q_val", "a_val", "b"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "offset", float(self.offset))
        self.validate()

    @property
    def m(self) -> int:
        return int(self.b.shape[0])

    def validate(self) -> None:
        n, m = self.n, self.m
        if n < 1:
            raise InstanceError(f"{self.id}: n must be >= 1, got {n}")
        if self.problem_tag not in PROBLEM_TAGS:
            raise InstanceError(f"{self.id}: unknown problem_tag {self.problem_tag!r}")
        if not (len(self.q_row) == len(self.q_col) == len(self.q_val)):
            raise InstanceError(f"{self.id}: Q coordinate arrays differ in length")
        if not (len(self.a_row) == len(self.a_col) == len(self.a_val)):
            raise InstanceError(f"{self.id}: A coordinate arrays differ in length")
        if len(self.q_row):
            if self.q_row.min() < 0 or self.q_col.max() >= n:
                raise InstanceError(f"{self.id}: Q index out of range")
            if np.any(self.q_row > self.q_col):
                raise InstanceError(f"{self.id}: Q must be stored as upper triangle (i <= j)")
            keys = self.q_row * n + self.q_col
            if np.unique(keys).size != keys.size:
                raise InstanceError(f"{self.id}: duplicate Q coordinates")
        if len(self.a_row):
            if self.a_row.min() < 0 or self.a_row.max() >= m:
                raise InstanceError(f"{self.id}: A row index out of range")
            if self.a_col.min() < 0 or self.a_col.max() >= n:
                raise InstanceError(f"{self.id}: A column index out of range")
            keys = self.a_row * n + self.a_col
            if np.unique(keys).size != keys.size:
                raise InstanceError(f"{self.id}: duplicate A coordinates")
        for name in ("q_val", "a_val", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InstanceError(f"{self.id}: non-finite values in {name}")
        if not math.isfinite(self.offset):
            raise InstanceError(f"{self.id}: non-finite offset")
        if m:
            nonzero_rows = np.zeros(m, dtype=bool)
            nonzero_rows[self.a_row[self.a_val != 0]] = True
            if not nonzero_rows.all():
                raise InstanceError(f"{self.id}: A has an all-zero row")

    # -- derived views (cached; instances are immutable) -------------------

    def diagonal(self) -> np.ndarray:
        if "diag" not in self._cache:
            d = np.zeros(self.n)
            on = self.q_row == self.q_col
            d[self.q_row[on]] = self.q_val[on]
            self._cache["diag"] = d
        return self._cache["diag"]

    def offdiag(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nonzero strictly-upper entries as (rows, cols, vals)."""
        if "offdiag" not in self._cache:
            off = (self.q_row != self.q_col) & (self.q_val != 0)
            self._cache["offdiag"] = (self.q_row[off], self.q_col[off], self.q_val[off])
        return self._cache["offdiag"]

    def neighbor_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Symmetric off-diagonal adjacency in CSR form (indptr, indices, data)."""
        if "csr" not in self._cache:
            r, c, v = self.offdiag()
            rows = np.concatenate([r, c])
            cols = np.concatenate([c, r])
            vals = np.concatenate([v, v])
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, rows + 1, 1)
            self._cache["csr"] = (np.cumsum(indptr), cols.copy(), vals.copy())
        return self._cache["csr"]

    def constraint_csc(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Constraint matrix by column (indptr over variables, row indices, data)."""
        if "csc" not in self._cache:
            keep = self.a_val != 0
            rows, cols, vals = self.a_row[keep], self.a_col[keep], self.a_val[keep]
            order = np.lexsort((rows, cols))
            rows, cols, vals = rows[order], cols[order], vals[order]
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, cols + 1, 1)
            self._cache["csc"] = (np.cumsum(indptr), rows.copy(), vals.copy())
        return self._cache["csc"]

    def dense_q(self) -> np.ndarray:
        """Full symmetric Q. Only sensible for small n."""
        Q = np.zeros((self.n, self.n))
        Q[self.q_row, self.q_col] = self.q_val
        Q[self.q_col, self.q_row] = self.q_val
        return Q

    def dense_a(self) -> np.ndarray:
        A = np.zeros((self.m, self.n))
        A[self.a_row, self.a_col] = self.a_val
        return A

    def max_abs_q(self) -> float:
        return float(np.abs(self.q_val).max()) if len(self.q_val) else 0.0

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "n": self.n,
            "m": self.m,
            "q": [[int(i), int(j), float(v)] for i, j, v in zip(self.q_row, self.q_col, self.q_val)],
            "a": [[int(k), int(j), float(v)] for k, j, v in zip(self.a_row, self.a_col, self.a_val)],
            "b": [float(v) for v in self.b],
            "problem_tag": self.problem_tag,
        }
        if self.offset != 0.0:
            out["offset"] = self.offset
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BqpInstance":
        q = np.asarray(data.get("q") or np.zeros((0, 3)), dtype=np.float64).reshape(-1, 3)
        a = np.asarray(data.get("a") or np.zeros((0, 3)), dtype=np.float64).reshape(-1, 3)
        b = np.asarray(data.get("b", []), dtype=np.float64)
        if "m" in data and int(data["m"]) != len(b):
            raise InstanceError(f"{data.get('id')}: m={data['m']} but b has {len(b)} entries")
        return cls(
            id=str(data["id"]),
            n=int(data["n"]),
            q_row=q[:, 0].astype(np.int64),
            q_col=q[:, 1].astype(np.int64),
            q_val=q[:, 2],
            a_row=a[:, 0].astype(np.int64),
            a_col=a[:, 1].astype(np.int64),
            a_val=a[:, 2],
            b=b,
            problem_tag=data.get("problem_tag", "MIXED"),
            offset=float(data.get("offset", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    cost: float
    feasible: bool


def make_instance(id, n, Q_entries=None, A_entries=None, b=None, problem_tag="MIXED", offset=0.0):
    """Build an instance from ``(i, j, val)`` triples; ``i > j`` entries are mirrored
    into the upper triangle and duplicates summed."""
    q = np.asarray(Q_entries if Q_entries is not None else np.zeros((0, 3)), dtype=np.float64).reshape(-1, 3)
    a = np.asarray(A_entries if A_entries is not None else np.zeros((0, 3)), dtype=np.float64).reshape(-1, 3)
    i = q[:, 0].astype(np.int64)
    j = q[:, 1].astype(np.int64)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    keys, inv = np.unique(lo * n + hi, return_inverse=True)
    vals = np.zeros(len(keys))
    np.add.at(vals, inv, q[:, 2])
    return BqpInstance(
        id=id,
        n=n,
        q_row=keys // n,
        q_col=keys % n,
        q_val=vals,
        a_row=a[:, 0].astype(np.int64),
        a_col=a[:, 1].astype(np.int64),
        a_val=a[:, 2],
        b=np.asarray(b if b is not None else [], dtype=np.float64),
        problem_tag=problem_tag,
        offset=offset,
    )


def _check_x(instance: BqpInstance, x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != instance.n:
        raise InstanceError(f"{instance.id}: expected bit-vector of length {instance.n}, got shape {x.shape}")
    return x.astype(np.float64)


def evaluate_objective(instance: BqpInstance, x) -> float:
    xf = _check_x(instance, x)
    prod = xf[instance.q_row] * xf[instance.q_col] * instance.q_val
    weight = np.where(instance.q_row == instance.q_col, 1.0, 2.0)
    return float(np.dot(prod, weight)) + instance.offset


def constraint_lhs(instance: BqpInstance, x) -> np.ndarray:
    xf = _check_x(instance, x)
    lhs = np.zeros(instance.m)
    np.add.at(lhs, instance.a_row, instance.a_val * xf[instance.a_col])
    return lhs


def check_feasibility(instance: BqpInstance, x) -> tuple[bool, float]:
    """Return ``(feasible, violation)`` with violation = sum of positive parts of Ax - b."""
    if instance.m == 0:
        _check_x(instance, x)
        return True, 0.0
    excess = constraint_lhs(instance, x) - instance.b
    violation = float(np.maximum(excess, 0.0).sum())
    return violation == 0.0, violation


def make_solution(instance: BqpInstance, x) -> Solution:
    x = np.asarray(x, dtype=np.int8)
    feasible, _ = check_feasibility(instance, x)
    return Solution(x=x, cost=evaluate_objective(instance, x), feasible=feasible)


# -- generators ---------------------------------------------------------------


def generate_qkp(n: int, density: float, seed: int, id: str | None = None) -> BqpInstance:
    """Random quadratic knapsack instance, negated into a minimization BQP.

    Profits are integers in [1, 100], present with probability ``density``
    (diagonal and off-diagonal alike); weights are integers in [1, 50] and the
    capacity is half the weight sum, rounded up.
    """
    if n < 2:
        raise InstanceError(f"QKP needs n >= 2, got {n}")
    if not (0.0 < density <= 1.0):
        raise InstanceError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng([int(seed), n, int(round(density * 1e6))])
    rows, cols, vals = [], [], []
    diag_mask = rng.random(n) < density
    diag_profit = rng.integers(1, 101, size=n)
    for i in range(n - 1):
        k = n - i - 1
        mask = rng.random(k) < density
        profit = rng.integers(1, 101, size=k)
        js = np.nonzero(mask)[0]
        if js.size:
            rows.append(np.full(js.size, i, dtype=np.int64))
            cols.append(js + i + 1)
            vals.append(-0.5 * profit[js])
    di = np.nonzero(diag_mask)[0]
    rows.append(di)
    cols.append(di)
    vals.append(-diag_profit[di].astype(np.float64))
    q_row = np.concatenate(rows)
    q_col = np.concatenate(cols)
    q_val = np.concatenate(vals)
    order = np.lexsort((q_col, q_row))
    weights = rng.integers(1, 51, size=n).astype(np.float64)
    capacity = float(math.ceil(0.5 * weights.sum()))
    return BqpInstance(
        id=id or f"qkp_n{n}_d{density:g}_s{seed}",
        n=n,
        q_row=q_row[order],
        q_col=q_col[order],
        q_val=q_val[order],
        a_row=np.zeros(n, dtype=np.int64),
        a_col=np.arange(n, dtype=np.int64),
        a_val=weights,
        b=np.array([capacity]),
        problem_tag="QKP",
    )


def qkp_profit(instance: BqpInstance, x) -> float:
    """Profit of the original maximization QKP encoded by a generated instance."""
    return -evaluate_objective(instance, x)


def generate_tsp(cities: int, seed: int) -> list[list[float]]:
    if cities < 3:
        raise InstanceError(f"TSP needs at least 3 cities, got {cities}")
    rng = np.random.default_rng([int(seed), int(cities)])
    pts = rng.random((cities, 2))
    return [[float(x), float(y)] for x, y in pts]


def tour_length(coords, order) -> float:
    pts = np.asarray(coords, dtype=np.float64)
    order = list(order)
    total = 0.0
    for a, b in zip(order, order[1:] + order[:1]):
        total += float(np.hypot(*(pts[a] - pts[b])))
    return total


def default_tsp_penalty(coords) -> float:
    pts = np.asarray(coords, dtype=np.float64)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return 2.0 * float(d.max()) * len(pts)


def tsp_to_bqp(coords, penalty: float | None = None, id: str = "tsp") -> BqpInstance:
    """Permutation-matrix QUBO: variable ``c * C + t`` means city c at position t.

    One-hot penalties are expanded into Q with the constant ``2 * C * penalty``
    carried as the instance offset, so a valid tour scores its exact length.
    """
    pts = np.asarray(coords, dtype=np.float64)
    C = len(pts)
    if C < 3:
        raise InstanceError(f"TSP needs at least 3 cities, got {C}")
    if penalty is None:
        penalty = default_tsp_penalty(pts)
    if not penalty > 0:
        raise InstanceError(f"penalty must be positive, got {penalty}")
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    n = C * C
    coef: dict[tuple[int, int], float] = {}

    def add(i, j, v):
        key = (i, j) if i <= j else (j, i)
        coef[key] = coef.get(key, 0.0) + v

    for v in range(n):
        add(v, v, -2.0 * penalty)
    for c in range(C):
        for t1, t2 in itertools.combinations(range(C), 2):
            add(c * C + t1, c * C + t2, penalty)  # city c placed twice
    for t in range(C):
        for c1, c2 in itertools.combinations(range(C), 2):
            add(c1 * C + t, c2 * C + t, penalty)  # slot t used twice
    # xQx counts an off-diagonal pair twice, so half of each edge length goes in.
    for t in range(C):
        nxt = (t + 1) % C
        for c1 in range(C):
            for c2 in range(C):
                if c1 != c2:
                    add(c1 * C + t, c2 * C + nxt, 0.5 * dist[c1, c2])
    keys = sorted(coef)
    arr = np.array([[i, j, coef[(i, j)]] for i, j in keys])
    return BqpInstance(
        id=id,
        n=n,
        q_row=arr[:, 0].astype(np.int64),
        q_col=arr[:, 1].astype(np.int64),
        q_val=arr[:, 2],
        a_row=np.zeros(0, dtype=np.int64),
        a_col=np.zeros(0, dtype=np.int64),
        a_val=np.zeros(0),
        b=np.zeros(0),
        problem_tag="TSP",
        offset=2.0 * C * penalty,
    )


def tour_to_x(order) -> np.ndarray:
    C = len(order)
    x = np.zeros(C * C, dtype=np.int8)
    for t, c in enumerate(order):
        x[c * C + t] = 1
    return x


# -- files ----------------------------------------------------------------------


def save_instance(instance: BqpInstance, path) -> None:
    Path(path).write_text(instance.to_json())


def load_instance(path) -> BqpInstance:
    return BqpInstance.from_dict(json.loads(Path(path).read_text()))


def save_coords(coords, path) -> None:
    Path(path).write_text(json.dumps([[float(x), float(y)] for x, y in coords]))


def load_coords(path) -> list[list[float]]:
    return [[float(x), float(y)] for x, y in json.loads(Path(path).read_text())]
