"""Time the numba kernels against their pure-python/numpy fallbacks.

Each path runs in its own interpreter because the switch is read at import time::

    python benchmarks/bench_kernels.py            # both paths, side by side
    python benchmarks/bench_kernels.py --worker   # one path, as set by FASTISAC_DISABLE_NUMBA
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up (and JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(repeat: int) -> dict:
    from fastisac import _accel
    from fastisac.annealer import SolverParams, solve
    from fastisac.bqp import generate_qkp
    from fastisac.cluster import ClusterConfig, hdbscan
    from fastisac.embed import EmbedConfig, embed

    inst = generate_qkp(60, 0.5, 1)
    X = np.random.default_rng(0).normal(size=(150, 18))
    return {
        "numba": _accel.USE_NUMBA,
        "anneal (n=60, 5 runs x 20 ms ticks)": _best_of(
            lambda: solve(inst, SolverParams(5, 10, 100), 20, 0, clock="ticks"), repeat),
        "layout (150 pts, 200 epochs)": _best_of(
            lambda: embed(X, EmbedConfig(n_neighbors=15, epochs=200)), repeat),
        "mst + hdbscan (150 pts)": _best_of(lambda: hdbscan(X, ClusterConfig(10, 10)), repeat),
    }


def run_path(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, FASTISAC_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)], env=env,
                         check=True, capture_output=True, text=True)
    return json.loads(out.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if args.worker:
        json.dump(worker(args.repeat), sys.stdout)
        return
    fast, slow = run_path(False, args.repeat), run_path(True, args.repeat)
    fast.pop("numba"), slow.pop("numba")
    print(f"{'kernel':40s} {'numba s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name in fast:
        print(f"{name:40s} {fast[name]:10.4f} {slow[name]:10.4f} {slow[name] / fast[name]:7.1f}x")


if __name__ == "__main__":
    main()
