"""Per-class solver tuning: hard-instance selection, normalized objective, TPE."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .annealer import DEFAULT_PARAMS, PARAM_SPACE, ParamSpace, SolverParams, solve
from .bqp import BqpInstance

LARGE = 1e18


class TuningError(RuntimeError):
    pass


@dataclass(frozen=True)
class TpeConfig:
    n_trials: int = 500
    n_startup_random: int = 100
    gamma: float = 0.25
    n_candidates: int = 24
    alpha: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_trials < 1 or self.n_candidates < 1:
            raise ValueError("n_trials and n_candidates must be positive")
        if not 0 <= self.n_startup_random <= self.n_trials:
            raise ValueError("n_startup_random must lie in [0, n_trials]")


@dataclass
class TrialRecord:
    theta: SolverParams
    y: float
    results: list[tuple[float | None, float]] = field(default_factory=list)


# -- instance selection and objective --------------------------------------------


def probe_last_update(instance: BqpInstance, budget_ms: int, seed: int = 0, clock: str = "wall",
                      **solve_kw) -> float | None:
    log = solve(instance, DEFAULT_PARAMS, budget_ms, seed, clock=clock, **solve_kw)
    return log.tts_ms


def select_hard_instances(
    class_members: Sequence,
    k: int,
    probe_budget_ms: int,
    *,
    probe: Callable | None = None,
    noise_reassigned: Sequence[bool] | None = None,
    class_id=None,
) -> list[str]:
    """Ids of the ``k`` members whose default-parameter run improved latest.

    Members without any feasible solution in the probe are dropped; ties keep
    input order.
    """
    members = list(class_members)
    if noise_reassigned is not None:
        members = [m for m, nr in zip(members, noise_reassigned) if not nr]
    if probe is None:
        def probe(inst):
            return probe_last_update(inst, probe_budget_ms)
    timed = []
    for pos, m in enumerate(members):
        t = probe(m)
        if t is not None:
            timed.append((-float(t), pos, m))
    if not timed:
        raise TuningError(f"class {class_id}: no usable instances for tuning")
    timed.sort(key=lambda e: (e[0], e[1]))
    return [getattr(m, "id", m) for _, _, m in timed[: max(1, k)]]


def objective(instance_results, defaults_stats, T_limit: float, alpha: float) -> float:
    """Mean over instances of the cost z-score plus ``alpha`` times the relative time offset.

    ``instance_results`` holds (E_trial, T_trial) pairs; an E of None means no
    feasible solution and yields the LARGE sentinel.
    """
    if len(instance_results) == 0:
        raise TuningError("objective needs at least one instance result")
    vals = []
    for (E, T), (mean, std) in zip(instance_results, defaults_stats, strict=True):
        if E is None or not math.isfinite(E):
            return LARGE
        if not (std > 0 and math.isfinite(std)):
            std = 1.0
        vals.append((E - mean) / std + alpha * (T - T_limit) / T_limit)
    return float(np.mean(vals))


# -- Parzen estimator -----------------------------------------------------------


def _axis(r) -> tuple[float, float, bool]:
    lo, hi = r.lower - 0.5, r.upper + 0.5
    if r.log_scale:
        return math.log(lo), math.log(hi), True
    return float(lo), float(hi), False


def _to_axis(v: float, log: bool) -> float:
    return math.log(v) if log else float(v)


def _from_axis(u: float, log: bool) -> float:
    return math.exp(u) if log else u


class Parzen:
    """Mixture of truncated Gaussians at observed points plus a uniform prior."""

    def __init__(self, mus: np.ndarray, lo: float, hi: float):
        self.lo, self.hi = lo, hi
        self.mus = np.asarray(mus, dtype=np.float64)
        s = self.mus.size
        self.weight = 1.0 / (s + 1)
        self.sigma = (hi - lo) / math.sqrt(s) if s else hi - lo
        if s:
            self.mass = ndtr((hi - self.mus) / self.sigma) - ndtr((lo - self.mus) / self.sigma)

    def pdf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        dens = np.full(u.shape, self.weight / (self.hi - self.lo))
        if self.mus.size:
            z = (u[..., None] - self.mus) / self.sigma
            comp = np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi) * self.mass)
            dens = dens + self.weight * comp.sum(axis=-1)
        return dens

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        pick = rng.integers(0, self.mus.size + 1, size=size)
        u01 = rng.random(size)
        out = np.empty(size)
        for i in range(size):
            if pick[i] == self.mus.size:
                out[i] = self.lo + u01[i] * (self.hi - self.lo)
            else:
                mu = self.mus[pick[i]]
                a = ndtr((self.lo - mu) / self.sigma)
                b = ndtr((self.hi - mu) / self.sigma)
                out[i] = mu + self.sigma * ndtri(a + u01[i] * (b - a))
        return np.clip(out, self.lo, self.hi)


def ei_from_ratio(ratio, gamma: float):
    """Expected improvement up to a constant, from the density ratio g/l."""
    return 1.0 / (gamma + np.asarray(ratio) * (1.0 - gamma))


def _round_clamp(values: Sequence[float], space: ParamSpace) -> SolverParams:
    out = []
    for v, r in zip(values, space.ranges()):
        out.append(int(min(max(int(round(v)), r.lower), r.upper)))
    return SolverParams(*out)


def random_params(space: ParamSpace, rng: np.random.Generator) -> SolverParams:
    vals = []
    for r in space.ranges():
        lo, hi, log = _axis(r)
        vals.append(_from_axis(rng.uniform(lo, hi), log))
    return _round_clamp(vals, space)


def split_history(history: Sequence[TrialRecord], gamma: float) -> tuple[list[int], list[int]]:
    """Indices of the best ceil(gamma * N) trials (by rank) and of the rest."""
    ys = np.array([t.y for t in history])
    order = np.argsort(ys, kind="stable")
    n_good = max(1, math.ceil(gamma * len(history)))
    return sorted(order[:n_good].tolist()), sorted(order[n_good:].tolist())


def tpe_suggest(history: Sequence[TrialRecord], space: ParamSpace, cfg: TpeConfig,
                rng: np.random.Generator) -> SolverParams:
    if len(history) < max(cfg.n_startup_random, 1):
        return random_params(space, rng)
    good, bad = split_history(history, cfg.gamma)
    names = space.names()
    cands = []
    log_ratio = np.zeros(cfg.n_candidates)
    for name, r in zip(names, space.ranges()):
        lo, hi, log = _axis(r)
        obs = np.array([_to_axis(getattr(t.theta, name), log) for t in history])
        l_est = Parzen(obs[good], lo, hi)
        g_est = Parzen(obs[bad], lo, hi)
        c = l_est.sample(rng, cfg.n_candidates)
        cands.append(c)
        log_ratio += np.log(g_est.pdf(c)) - np.log(l_est.pdf(c))
    best = int(np.argmin(log_ratio))
    values = [_from_axis(c[best], _axis(r)[2]) for c, r in zip(cands, space.ranges())]
    return _round_clamp(values, space)


# -- tuning loop ----------------------------------------------------------------


def tune_class(
    class_id,
    instances: Sequence[BqpInstance],
    space: ParamSpace = PARAM_SPACE,
    cfg: TpeConfig = TpeConfig(),
    *,
    defaults_stats: Sequence[tuple[float, float]],
    T_limit: float,
    evaluate: Callable[[SolverParams, BqpInstance], tuple[float | None, float]] | None = None,
    clock: str = "wall",
    eval_seed: int = 0,
) -> tuple[SolverParams, list[TrialRecord]]:
    """Sequential suggest -> evaluate -> score loop; returns the argmin-y parameters."""
    if not instances:
        raise TuningError(f"class {class_id}: no instances to tune on")
    if evaluate is None:
        def evaluate(theta, inst):
            log = solve(inst, theta, int(T_limit), eval_seed, clock=clock)
            if log.best_cost is None:
                return None, float(T_limit)
            return log.best_cost, float(log.tts_ms)

    rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFF, 0x7BE])
    history: list[TrialRecord] = []
    for trial in range(cfg.n_trials):
        theta = tpe_suggest(history, space, cfg, rng)
        try:
            results = [evaluate(theta, inst) for inst in instances]
        except Exception as exc:
            raise TuningError(f"class {class_id}: trial {trial} failed: {exc}") from exc
        y = objective(results, defaults_stats, T_limit, cfg.alpha)
        history.append(TrialRecord(theta, y, list(results)))
    best = min(range(len(history)), key=lambda i: (history[i].y, i))
    return history[best].theta, history


def write_trials_csv(path, history: Sequence[TrialRecord], instance_ids: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["trial", "num_run", "gs_level", "gs_cutoff", "y"]
        for iid in instance_ids:
            head += [f"E[{iid}]", f"T[{iid}]"]
        w.writerow(head)
        for i, t in enumerate(history):
            row = [i, *t.theta.as_tuple(), repr(float(t.y))]
            for E, T in t.results:
                row += ["" if E is None else repr(float(E)), repr(float(T))]
            w.writerow(row)
