"""Summary statistics of solver logs, one fixed-length vector per instance."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annealer import RunLog

SCHEMA_VERSION = "fastisac-features/1"
FEATURE_NAMES = (
    "pool_count",
    "pool_cost_max",
    "pool_cost_median",
    "pool_cost_q1",
    "pool_cost_q3",
    "hamming_max",
    "hamming_median",
    "hamming_q1",
    "hamming_q3",
    "identical_ratio",
    "update_count",
    "update_time_min",
    "update_time_max",
    "update_time_median",
    "update_time_q1",
    "update_time_q3",
    "best_cost",
    "mean_epochs",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass
class FeatureVector:
    instance_id: str
    values: np.ndarray
    standardized: bool = False


def _quartiles(a: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(a, [25, 50, 75])
    return float(med), float(q1), float(q3)


def extract_features(logs: list[RunLog], instance_id: str | None = None) -> FeatureVector:
    """Statistics of the concatenated pools and update histories of ``logs``."""
    if not logs:
        raise ValueError("extract_features needs at least one RunLog")
    if instance_id is None:
        instance_id = logs[0].instance_id
    out = np.zeros(N_FEATURES)

    pools = [lg.pool_x for lg in logs if len(lg.pool_cost)]
    costs = np.concatenate([lg.pool_cost for lg in logs]) if logs else np.zeros(0)
    if costs.size:
        X = np.concatenate(pools).astype(np.int8)
        out[0] = costs.size
        out[1] = costs.max()
        out[2], out[3], out[4] = _quartiles(costs)
        # The reference solution must not depend on log order: lowest cost,
        # then lexicographically smallest bit-string.
        cand = np.flatnonzero(costs == costs.min())
        ref = min(cand, key=lambda i: X[i].tobytes())
        ham = (X != X[ref]).sum(axis=1).astype(np.float64)
        out[5] = ham.max()
        out[6], out[7], out[8] = _quartiles(ham)
        same = np.all(X == X[0], axis=0)
        out[9] = same.mean()
        out[16] = costs.min()
    else:
        out[9] = 1.0

    times = np.array([t for lg in logs for _, t in lg.update_history], dtype=np.float64)
    if times.size:
        out[10] = times.size
        out[11] = times.min()
        out[12] = times.max()
        out[13], out[14], out[15] = _quartiles(times)
    out[17] = float(np.mean([lg.epochs_executed for lg in logs]))
    return FeatureVector(instance_id=instance_id, values=out)


def column_stats(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population standard deviations.

    A std at roundoff level relative to the column magnitude is reported as 0,
    so constant columns stay constant after standardization.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    mean, std = matrix.mean(axis=0), matrix.std(axis=0)
    scale = np.abs(matrix).max(axis=0) if matrix.size else np.zeros(matrix.shape[1:])
    std[std <= 1e-12 * scale] = 0.0
    return mean, std


def apply_standardization(matrix: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    safe = np.where(std > 0, std, 1.0)
    z = (matrix - mean) / safe
    z[:, std <= 0] = 0.0
    return z


def standardize(corpus: list[FeatureVector]) -> list[FeatureVector]:
    if len(corpus) < 2:
        raise ValueError(f"standardize needs at least 2 vectors, got {len(corpus)}")
    M = np.stack([fv.values for fv in corpus])
    mean, std = column_stats(M)
    Z = apply_standardization(M, mean, std)
    return [FeatureVector(fv.instance_id, Z[i], True) for i, fv in enumerate(corpus)]


def write_feature_csv(path, corpus: list[FeatureVector]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("instance_id",) + FEATURE_NAMES)
        for fv in corpus:
            w.writerow([fv.instance_id] + [repr(float(v)) for v in fv.values])


def read_feature_csv(path) -> list[FeatureVector]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# schema={SCHEMA_VERSION}":
        raise ValueError(f"{path}: missing or unsupported feature schema header")
    rows = list(csv.reader(lines[1:]))
    if tuple(rows[0][1:]) != FEATURE_NAMES:
        raise ValueError(f"{path}: feature columns do not match {SCHEMA_VERSION}")
    return [FeatureVector(r[0], np.array([float(v) for v in r[1:]])) for r in rows[1:]]
