"""The numba kernels and their pure-python fallbacks must agree exactly."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fastisac import _accel
from fastisac.kernels.mst import prim_mst, prim_mst_loop, prim_mst_numpy

WORKLOAD = r"""
import hashlib, json, sys
import numpy as np
from fastisac import _accel
from fastisac.annealer import SolverParams, solve
from fastisac.bqp import generate_qkp, generate_tsp, tsp_to_bqp
from fastisac.cluster import ClusterConfig, hdbscan
from fastisac.embed import EmbedConfig, embed

out = {"numba": _accel.USE_NUMBA}
for name, inst in (("qkp", generate_qkp(25, 0.5, 3)), ("tsp", tsp_to_bqp(generate_tsp(4, 1)))):
    lg = solve(inst, SolverParams(3, 4, 20), 15, 5, clock="ticks")
    out[name] = lg.to_dict()
r = np.random.default_rng(0)
X = np.concatenate([c + r.normal(size=(25, 5)) for c in (0.0, 8.0, 16.0)])
pts = embed(X, EmbedConfig(n_neighbors=8, epochs=60, seed=2))
Y = np.stack([p.coords for p in pts])
out["embed"] = hashlib.sha256(Y.tobytes()).hexdigest()
m = hdbscan(X, ClusterConfig(5, 5))
out["labels"] = m.labels.tolist()
json.dump(out, sys.stdout)
"""


def run_workload(disable: bool) -> dict:
    env = dict(os.environ)
    env["FASTISAC_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", WORKLOAD], env=env, capture_output=True, text=True,
                         check=True, timeout=600)
    return json.loads(res.stdout)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_numba_and_fallback_agree_end_to_end():
    fast, slow = run_workload(False), run_workload(True)
    assert fast.pop("numba") is True and slow.pop("numba") is False
    assert fast == slow


@pytest.mark.parametrize("seed", range(5))
def test_prim_variants_agree(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(40, 3))
    core = np.sort(np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1)), axis=1)[:, 4]
    ref = prim_mst_numpy(X, core)
    for got in (prim_mst(X, core), prim_mst_loop(X, core), prim_mst_loop.py_func(X, core)):
        for a, b in zip(got, ref):
            assert np.allclose(a, b, rtol=0, atol=1e-12)
