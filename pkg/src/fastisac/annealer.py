"""Epoch-structured simulated annealer for constrained BQPs.

Three parameters shape the search:

* ``num_run``   - independent runs per epoch, each with its own RNG stream.
* ``gs_level``  - an epoch performs at most ``n * gs_level`` flip proposals.
* ``gs_cutoff`` - an epoch ends after this many consecutive proposals that
  do not improve the run's best penalized cost.

Each run restarts from random bits every epoch. Feasible epoch-best
solutions go into a shared, capacity-bounded pool; every strict improvement
of the global best feasible cost is timestamped in the update history.

Time is either wall-clock milliseconds (``clock="wall"``) or a deterministic
work counter (``clock="ticks"``), where ``ticks_per_ms`` proposals count as
one millisecond. The solution sequence for a seed is the same in both modes.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bqp import BqpInstance, Solution, check_feasibility, evaluate_objective
from .kernels import annealing as K

DEFAULT_POOL_CAPACITY = 1000
DEFAULT_TICKS_PER_MS = 2000
CLOCKS = ("wall", "ticks")


class SolverError(ValueError):
    pass


class NoFeasibleSolution(SolverError):
    pass


@dataclass(frozen=True)
class ParamRange:
    lower: int
    upper: int
    log_scale: bool = False


@dataclass(frozen=True)
class ParamSpace:
    num_run: ParamRange = ParamRange(1, 100)
    gs_level: ParamRange = ParamRange(1, 100)
    gs_cutoff: ParamRange = ParamRange(1, 10_000, log_scale=True)

    def __post_init__(self):
        for name in self.names():
            r = getattr(self, name)
            if r.lower < 1 or r.upper < r.lower:
                raise SolverError(f"bad range for {name}: {r}")

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("num_run", "gs_level", "gs_cutoff")

    def ranges(self) -> list[ParamRange]:
        return [getattr(self, n) for n in self.names()]


PARAM_SPACE = ParamSpace()


@dataclass(frozen=True)
class SolverParams:
    num_run: int = 16
    gs_level: int = 5
    gs_cutoff: int = 8000

    def validate(self, space: ParamSpace = PARAM_SPACE) -> "SolverParams":
        for name, r in zip(space.names(), space.ranges()):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not (r.lower <= v <= r.upper):
                raise SolverError(f"{name}={v!r} outside [{r.lower}, {r.upper}]")
        return self

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.num_run, self.gs_level, self.gs_cutoff)

    def to_dict(self) -> dict:
        return {k: int(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverParams":
        return cls(int(d["num_run"]), int(d["gs_level"]), int(d["gs_cutoff"]))


DEFAULT_PARAMS = SolverParams()


@dataclass
class RunLog:
    seed: int
    wall_limit_ms: int
    update_history: list[tuple[float, int]] = field(default_factory=list)
    pool_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int8))
    pool_cost: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pool_capacity: int = DEFAULT_POOL_CAPACITY
    epochs_executed: int = 0
    clock: str = "wall"
    instance_id: str = ""

    @property
    def pool(self) -> list[tuple[np.ndarray, float]]:
        return [(self.pool_x[i], float(self.pool_cost[i])) for i in range(len(self.pool_cost))]

    @property
    def best_cost(self) -> float | None:
        return float(self.pool_cost[0]) if len(self.pool_cost) else None

    @property
    def tts_ms(self) -> int | None:
        """Timestamp of the last improvement, or None without any feasible solution."""
        return self.update_history[-1][1] if self.update_history else None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "seed": int(self.seed),
            "wall_limit_ms": int(self.wall_limit_ms),
            "clock": self.clock,
            "pool_capacity": int(self.pool_capacity),
            "epochs_executed": int(self.epochs_executed),
            "update_history": [[float(c), int(t)] for c, t in self.update_history],
            "pool": [["".join("1" if b else "0" for b in x), float(c)] for x, c in self.pool],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunLog":
        pool = d.get("pool", [])
        if pool:
            px = np.array([[ch == "1" for ch in bits] for bits, _ in pool], dtype=np.int8)
        else:
            px = np.zeros((0, 0), dtype=np.int8)
        return cls(
            seed=int(d["seed"]),
            wall_limit_ms=int(d["wall_limit_ms"]),
            update_history=[(float(c), int(t)) for c, t in d.get("update_history", [])],
            pool_x=px,
            pool_cost=np.array([float(c) for _, c in pool]),
            pool_capacity=int(d.get("pool_capacity", DEFAULT_POOL_CAPACITY)),
            epochs_executed=int(d.get("epochs_executed", 0)),
            clock=d.get("clock", "wall"),
            instance_id=d.get("instance_id", ""),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "RunLog":
        return cls.from_dict(json.loads(Path(path).read_text()))


class SolutionPool:
    """Best distinct feasible solutions, ascending by cost, capacity-bounded."""

    def __init__(self, capacity: int = DEFAULT_POOL_CAPACITY):
        self.capacity = capacity
        self._entries: dict[bytes, tuple[float, int, np.ndarray]] = {}
        self._seq = 0

    def offer(self, x: np.ndarray, cost: float) -> bool:
        key = x.tobytes()
        if key in self._entries:
            return False
        if len(self._entries) >= self.capacity:
            worst_key = max(self._entries, key=lambda k: self._entries[k][:2])
            if cost >= self._entries[worst_key][0]:
                return False
            del self._entries[worst_key]
        self._entries[key] = (cost, self._seq, x.copy())
        self._seq += 1
        return True

    def arrays(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        items = sorted(self._entries.values(), key=lambda e: (e[0], e[1]))
        if not items:
            return np.zeros((0, n), dtype=np.int8), np.zeros(0)
        return np.stack([e[2] for e in items]), np.array([e[0] for e in items])


def run_seed(seed: int, run_index: int) -> int:
    """Nonzero 32-bit stream seed derived from (seed, run_index)."""
    s = int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(run_index), 0x5A]).generate_state(1, np.uint32)[0])
    return s or 0x9E3779B9


def _kernel_args(instance: BqpInstance):
    indptr, indices, data = instance.neighbor_csr()
    a_indptr, a_rows, a_vals = instance.constraint_csc()
    return instance.diagonal(), indptr, indices, data, a_indptr, a_rows, a_vals, instance.b


def initial_temperature(instance: BqpInstance, weight: float, seed: int) -> float:
    """Median |delta| over all single flips from a seeded random state."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x7E])
    x = (rng.random(instance.n) < 0.5).astype(np.int8)
    deltas = np.empty(instance.n)
    diag, indptr, indices, data, a_indptr, a_rows, a_vals, b = _kernel_args(instance)
    K.flip_deltas(x, diag, indptr, indices, data, a_indptr, a_rows, a_vals, b, weight, deltas)
    mags = np.abs(deltas)
    mags = mags[mags > 0]
    return float(np.median(mags)) if mags.size else 1.0


def initial_penalty(instance: BqpInstance) -> float:
    mq = instance.max_abs_q()
    return 10.0 * mq if mq > 0 else 1.0


def solve(
    instance: BqpInstance,
    params: SolverParams = DEFAULT_PARAMS,
    wall_limit_ms: int = 1000,
    seed: int = 0,
    *,
    clock: str = "wall",
    ticks_per_ms: int = DEFAULT_TICKS_PER_MS,
    pool_capacity: int = DEFAULT_POOL_CAPACITY,
) -> RunLog:
    params.validate()
    instance.validate()
    if wall_limit_ms <= 0:
        raise SolverError(f"wall_limit_ms must be positive, got {wall_limit_ms}")
    if clock not in CLOCKS:
        raise SolverError(f"clock must be one of {CLOCKS}, got {clock!r}")

    n = instance.n
    args = _kernel_args(instance)
    b = args[-1]
    weight = initial_penalty(instance)
    weight_cap = weight * 2.0**40
    t0 = initial_temperature(instance, weight, seed)
    max_iters = n * params.gs_level
    rngs = [np.array([run_seed(seed, r)], dtype=np.int64) for r in range(params.num_run)]

    x = np.zeros(n, dtype=np.int8)
    best_x = np.zeros(n, dtype=np.int8)
    lhs = np.zeros(instance.m)
    fld = np.zeros(n)
    hist_cost = np.empty(max_iters + 1)
    hist_iter = np.empty(max_iters + 1, dtype=np.int64)

    pool = SolutionPool(pool_capacity)
    history: list[tuple[float, int]] = []
    global_best = math.inf
    epochs = 0
    ticks = 0
    limit_ticks = int(wall_limit_ms) * int(ticks_per_ms)
    start = time.perf_counter()

    def now_ms() -> float:
        return (time.perf_counter() - start) * 1000.0

    done = False
    while not done:
        epoch_feasible = False
        for r in range(params.num_run):
            if clock == "wall":
                t_before = now_ms()
                if t_before >= wall_limit_ms:
                    done = True
                    break
                budget = max_iters
            else:
                remaining = limit_ticks - ticks - n
                if remaining <= 0:
                    done = True
                    break
                budget = min(max_iters, remaining)
            kernel_best = global_best - instance.offset
            iters, n_hist, best_feas, found = K.run_epoch(
                *args, weight, t0, budget, params.gs_cutoff, rngs[r], x, lhs, fld, best_x,
                kernel_best, hist_cost, hist_iter,
            )
            if clock == "wall":
                t_after = now_ms()
                span = max(iters, 1)
                stamps = [int(t_before + (t_after - t_before) * hist_iter[h] / span) for h in range(n_hist)]
            else:
                stamps = [(ticks + n + int(hist_iter[h])) // ticks_per_ms for h in range(n_hist)]
                ticks += n + iters
            epochs += 1
            if found:
                epoch_feasible = True
                exact = evaluate_objective(instance, best_x)
                if check_feasibility(instance, best_x)[0]:
                    pool.offer(best_x, exact)
                    for h in range(n_hist):
                        cost = exact if h == n_hist - 1 else float(hist_cost[h]) + instance.offset
                        if cost < global_best:
                            if history and stamps[h] < history[-1][1]:
                                stamps[h] = history[-1][1]
                            history.append((cost, stamps[h]))
                            global_best = cost
            if clock == "wall" and t_after >= wall_limit_ms:
                done = True
                break
            if clock == "ticks" and budget < max_iters and iters == budget:
                done = True
                break
        if not done and not epoch_feasible and b.shape[0] > 0:
            weight = min(weight * 2.0, weight_cap)

    pool_x, pool_cost = pool.arrays(n)
    return RunLog(
        seed=int(seed),
        wall_limit_ms=int(wall_limit_ms),
        update_history=history,
        pool_x=pool_x,
        pool_cost=pool_cost,
        pool_capacity=pool_capacity,
        epochs_executed=epochs,
        clock=clock,
        instance_id=instance.id,
    )


def brute_force(instance: BqpInstance, chunk_bits: int = 16) -> Solution:
    """Exact feasible minimizer by exhaustive enumeration (n <= 24)."""
    n = instance.n
    if n > 24:
        raise SolverError(f"brute force limited to n <= 24, got {n}")
    Q = instance.dense_q()
    A = instance.dense_a()
    b = instance.b
    tol = 1e-9 * (1.0 + (np.abs(b).max() if b.size else 0.0))
    chunk_bits = min(chunk_bits, n)
    low_bits = ((np.arange(2**chunk_bits)[:, None] >> np.arange(chunk_bits)) & 1).astype(np.float64)
    best_cost = math.inf
    best_code = -1
    for hi in range(2 ** (n - chunk_bits)):
        high = ((hi >> np.arange(n - chunk_bits)) & 1).astype(np.float64)
        X = np.hstack([low_bits, np.broadcast_to(high, (low_bits.shape[0], n - chunk_bits))])
        E = np.einsum("ij,ij->i", X @ Q, X)
        if A.shape[0]:
            ok = np.all(X @ A.T <= b + tol, axis=1)
            E = np.where(ok, E, np.inf)
        k = int(np.argmin(E))
        if E[k] < best_cost:
            best_cost = float(E[k])
            best_code = (hi << chunk_bits) | k
    if best_code < 0:
        raise NoFeasibleSolution(f"{instance.id}: no feasible solution")
    x = ((best_code >> np.arange(n)) & 1).astype(np.int8)
    return Solution(x=x, cost=evaluate_objective(instance, x), feasible=True)
