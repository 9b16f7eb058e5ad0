import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=200,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**over):
    """Desk config shrunk so a full train finishes in well under a minute."""
    from fastisac.cluster import ClusterConfig
    from fastisac.gat import TrainConfig
    from fastisac.pipeline import FeatureConfig, PipelineConfig, TuningConfig
    from fastisac.tune import TpeConfig
    import dataclasses
    import json
    from pathlib import Path

    base = PipelineConfig.from_dict(json.loads((Path(__file__).parent / "data" / "desk_config.json").read_text()))
    cfg = dataclasses.replace(
        base,
        features=FeatureConfig(n_seeds=2, wall_ms=300),
        cluster=ClusterConfig(5, 5),
        tuning=TuningConfig(k_hard=2, wall_ms=100),
        tpe=TpeConfig(n_trials=6, n_startup_random=3),
        train=TrainConfig(epochs=30),
    )
    return dataclasses.replace(cfg, **over)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    from fastisac.pipeline import generate_corpus

    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root / "train", 8, seed=0)
    generate_corpus(root / "held", 2, seed=0, start=8)
    return root


@pytest.fixture(scope="session")
def small_bundle(small_corpus, tmp_path_factory):
    from fastisac.pipeline import cmd_train

    out = tmp_path_factory.mktemp("bundle") / "b"
    cache = tmp_path_factory.mktemp("runcache")
    res = cmd_train(small_corpus / "train", small_config(), out, cache_dir=cache)
    return res


ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict line, then assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
