"""Training and execution steps, artifact bundles and evaluation metrics.

Training (``cmd_train``) runs features -> embed -> cluster -> tune -> graphify
-> GAT and writes a bundle directory. Execution (``cmd_classify``) turns one
instance into a graph, takes a majority vote over sampled subgraphs and looks
the predicted class up in the parameter registry. ``cmd_evaluate`` compares the
selected parameters against a baseline on a list of test instances.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .annealer import (
    DEFAULT_PARAMS,
    DEFAULT_TICKS_PER_MS,
    PARAM_SPACE,
    RunLog,
    SolverParams,
    solve,
)
from .bqp import BqpInstance, generate_qkp, generate_tsp, load_instance, save_instance, tsp_to_bqp
from .cluster import ClusterConfig, hdbscan, read_labels_csv, write_labels_csv
from .embed import EmbedConfig, embed, write_embedding_csv
from .features import (
    FeatureVector,
    apply_standardization,
    column_stats,
    extract_features,
    read_feature_csv,
    write_feature_csv,
)
from .gat import GatConfig, GatModel, TrainConfig, predict_majority, train
from .graphify import build_dataset, sample_nodes, to_graph
from .tune import TpeConfig, select_hard_instances, tune_class, write_trials_csv

log = logging.getLogger(__name__)

REGISTRY_SCHEMA = "fastisac-registry/1"
BUNDLE_SCHEMA = "fastisac-bundle/1"
CONFIG_SCHEMA = "fastisac-config/1"
BASELINE_SCHEMA = "fastisac-baseline/1"
REPORT_COLUMNS = ("instance_id", "true_class", "pred_class", "gap_percent", "delta_tts_s",
                  "t_tune_s", "delta_ttot_s", "effect")
EFFECTS = ("improved", "equivalent", "worsened")
GAP_THRESHOLD = 1.0
TIME_THRESHOLD_MS = 1000.0
SEED_ENV = "ISAC_SEED"


class PipelineError(RuntimeError):
    pass


class StageError(PipelineError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class BundleError(PipelineError):
    pass


class UndefinedGap(ValueError):
    pass


# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureConfig:
    """Default-parameter feature runs: seeds 0..n_seeds-1, each ``wall_ms`` long."""

    n_seeds: int = 3
    wall_ms: int = 2000


@dataclass(frozen=True)
class TuningConfig:
    k_hard: int = 10
    probe_ms: int | None = None  # None reuses the feature-run budget
    wall_ms: int = 2000


@dataclass(frozen=True)
class GraphConfig:
    sample_rate: float = 0.10
    sample_count: int = 20
    balance_factor: float = 1.2
    split: float = 0.9


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    clock: str = "wall"
    ticks_per_ms: int = DEFAULT_TICKS_PER_MS
    features: FeatureConfig = FeatureConfig()
    embed: EmbedConfig = EmbedConfig()
    cluster: ClusterConfig = ClusterConfig()
    tuning: TuningConfig = TuningConfig()
    tpe: TpeConfig = TpeConfig()
    graph: GraphConfig = GraphConfig()
    gat: GatConfig = GatConfig()
    train: TrainConfig = TrainConfig()

    _sections = {
        "features": FeatureConfig, "embed": EmbedConfig, "cluster": ClusterConfig,
        "tuning": TuningConfig, "tpe": TpeConfig, "graph": GraphConfig, "gat": GatConfig,
        "train": TrainConfig,
    }

    def to_dict(self) -> dict:
        out = {"schema": CONFIG_SCHEMA, "seed": self.seed, "clock": self.clock,
               "ticks_per_ms": self.ticks_per_ms}
        for name in self._sections:
            out[name] = asdict(getattr(self, name))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        schema = d.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise PipelineError(f"unsupported config schema {schema!r}")
        kw = {}
        for key in ("seed", "clock", "ticks_per_ms"):
            if key in d:
                kw[key] = d.pop(key)
        for name, typ in cls._sections.items():
            if name in d:
                sub = d.pop(name)
                known = {f.name for f in dataclasses.fields(typ)}
                unknown = set(sub) - known
                if unknown:
                    raise PipelineError(f"config section {name!r}: unknown keys {sorted(unknown)}")
                kw[name] = typ(**sub)
        if d:
            raise PipelineError(f"unknown config keys {sorted(d)}")
        return cls(**kw)

    def resolved(self) -> "PipelineConfig":
        """Apply the ISAC_SEED override and push the global seed into every stage."""
        seed = self.seed
        env = os.environ.get(SEED_ENV)
        if env not in (None, ""):
            try:
                seed = int(env)
            except ValueError as exc:
                raise PipelineError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
        return dataclasses.replace(
            self,
            seed=seed,
            embed=dataclasses.replace(self.embed, seed=seed),
            tpe=dataclasses.replace(self.tpe, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


# -- run cache ----------------------------------------------------------------------


def instance_digest(instance: BqpInstance) -> str:
    key = instance._cache.get("digest")
    if key is None:
        key = hashlib.sha256(instance.to_json().encode()).hexdigest()
        instance._cache["digest"] = key
    return key


class RunCache:
    """On-disk store of solver logs for the deterministic ``ticks`` clock.

    Wall-clock runs are never cached since they are not reproducible.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self.hits = 0
        self.misses = 0

    def solve(self, instance: BqpInstance, params: SolverParams, wall_ms: int, seed: int,
              clock: str, ticks_per_ms: int = DEFAULT_TICKS_PER_MS) -> RunLog:
        if self.root is None or clock != "ticks":
            return solve(instance, params, wall_ms, seed, clock=clock, ticks_per_ms=ticks_per_ms)
        tag = json.dumps([instance_digest(instance), params.as_tuple(), int(wall_ms), int(seed),
                          clock, int(ticks_per_ms)])
        key = hashlib.sha256(tag.encode()).hexdigest()
        path = self.root / key[:2] / f"{key}.json"
        if path.exists():
            self.hits += 1
            lg = RunLog.load(path)
            lg.instance_id = instance.id
            return lg
        self.misses += 1
        lg = solve(instance, params, wall_ms, seed, clock=clock, ticks_per_ms=ticks_per_ms)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        lg.save(tmp)
        tmp.replace(path)
        return lg


# -- registry -----------------------------------------------------------------------


@dataclass
class ClassEntry:
    index: int
    params: SolverParams
    medoid: np.ndarray
    members: list[str]
    medoid_id: str = ""


@dataclass
class ParamRegistry:
    classes: list[ClassEntry]
    default_params: SolverParams = DEFAULT_PARAMS

    @property
    def L(self) -> int:
        return len(self.classes)

    def lookup(self, class_index: int) -> SolverParams:
        if not 0 <= class_index < len(self.classes):
            raise BundleError(f"registry has no class {class_index} (L={self.L}); bundle is corrupt")
        return self.classes[class_index].params

    def to_dict(self) -> dict:
        return {
            "schema": REGISTRY_SCHEMA,
            "default_params": self.default_params.to_dict(),
            "classes": [
                {
                    "class": c.index,
                    "params": c.params.to_dict(),
                    "medoid": [float(v) for v in c.medoid],
                    "medoid_id": c.medoid_id,
                    "members": list(c.members),
                }
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRegistry":
        if d.get("schema") != REGISTRY_SCHEMA:
            raise BundleError(f"unsupported registry schema {d.get('schema')!r}")
        entries = []
        for pos, c in enumerate(d["classes"]):
            if int(c["class"]) != pos:
                raise BundleError(f"registry class indices must be 0..L-1, found {c['class']} at {pos}")
            try:
                params = SolverParams.from_dict(c["params"]).validate(PARAM_SPACE)
            except Exception as exc:
                raise BundleError(f"class {pos}: invalid parameters: {exc}") from exc
            entries.append(ClassEntry(pos, params, np.asarray(c["medoid"], dtype=np.float64),
                                      list(c.get("members", [])), c.get("medoid_id", "")))
        return cls(entries, SolverParams.from_dict(d["default_params"]).validate(PARAM_SPACE))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ParamRegistry":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- bundle -------------------------------------------------------------------------

MANIFEST = "manifest.json"
REGISTRY_FILE = "registry.json"
MODEL_FILE = "model.json"
CONFIG_FILE = "config.json"
FEATURES_FILE = "features.csv"
EMBEDDING_FILE = "embedding.csv"
LABELS_FILE = "labels.csv"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, status: str, files: Sequence[str], extra: dict | None = None) -> None:
    doc = {
        "schema": BUNDLE_SCHEMA,
        "status": status,
        "files": {name: sha256_file(out / name) for name in sorted(files) if (out / name).exists()},
    }
    if extra:
        doc.update(extra)
    (out / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=True))


def _prepare_out(out: Path) -> None:
    if out.exists() and not out.is_dir():
        raise PipelineError(f"{out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    man = out / MANIFEST
    if man.exists():
        try:
            old = json.loads(man.read_text())
        except json.JSONDecodeError:
            old = {}
        for name in old.get("files", {}):
            (out / name).unlink(missing_ok=True)
        man.unlink()
    elif any(out.iterdir()):
        raise PipelineError(f"{out} is not empty and holds no bundle manifest; refusing to overwrite")


@dataclass
class Bundle:
    root: Path
    registry: ParamRegistry
    model: GatModel
    config: PipelineConfig
    manifest: dict


def load_bundle(bundle_dir) -> Bundle:
    root = Path(bundle_dir)
    man_path = root / MANIFEST
    if not man_path.exists():
        raise BundleError(f"{root}: no {MANIFEST}")
    man = json.loads(man_path.read_text())
    if man.get("schema") != BUNDLE_SCHEMA:
        raise BundleError(f"{root}: unsupported bundle schema {man.get('schema')!r}")
    if man.get("status") != "complete":
        raise BundleError(f"{root}: bundle is {man.get('status')!r} (failed stage: {man.get('failed_stage')})")
    for name in (REGISTRY_FILE, MODEL_FILE, CONFIG_FILE):
        if name not in man.get("files", {}):
            raise BundleError(f"{root}: manifest lacks {name}")
    for name, digest in man["files"].items():
        path = root / name
        if not path.exists():
            raise BundleError(f"{root}: missing bundle file {name}")
        if sha256_file(path) != digest:
            raise BundleError(f"{root}: {name} does not match its manifest checksum")
    registry = ParamRegistry.load(root / REGISTRY_FILE)
    try:
        model = GatModel.load(root / MODEL_FILE)
    except ValueError as exc:
        raise BundleError(f"{root}: {exc}") from exc
    if model.cfg.n_classes != registry.L:
        raise BundleError(f"{root}: model has {model.cfg.n_classes} classes, registry {registry.L}")
    config = load_config(root / CONFIG_FILE)
    return Bundle(root, registry, model, config, man)


# -- training -----------------------------------------------------------------------


@dataclass
class TrainResult:
    bundle_dir: Path
    registry: ParamRegistry
    model: GatModel
    labels: np.ndarray
    instance_ids: list[str]
    timings_s: dict[str, float] = field(default_factory=dict)


def load_corpus(corpus_dir) -> list[BqpInstance]:
    root = Path(corpus_dir)
    if not root.is_dir():
        raise StageError("load", f"{root} is not a directory")
    files = sorted(root.glob("*.json"))
    instances = []
    for f in files:
        try:
            instances.append(load_instance(f))
        except Exception as exc:
            raise StageError("load", f"{f.name}: {exc}") from exc
    ids = [i.id for i in instances]
    if len(set(ids)) != len(ids):
        raise StageError("load", "duplicate instance ids in corpus")
    if not instances:
        raise StageError("load", f"no *.json instances in {root}")
    return instances


def feature_runs(instances, fcfg: FeatureConfig, clock: str, ticks_per_ms: int,
                 cache: RunCache, progress: Callable | None = None) -> list[list[RunLog]]:
    out = []
    for pos, inst in enumerate(instances):
        logs = [cache.solve(inst, DEFAULT_PARAMS, fcfg.wall_ms, s, clock, ticks_per_ms)
                for s in range(fcfg.n_seeds)]
        for lg in logs:
            lg.instance_id = inst.id
        out.append(logs)
        if progress is not None:
            progress(pos + 1, len(instances))
    return out


def default_stats(logs: Sequence[RunLog]) -> tuple[float, float] | None:
    """Mean and population std of the best feasible cost over seeds (None if never feasible)."""
    costs = [lg.best_cost for lg in logs if lg.best_cost is not None]
    if not costs:
        return None
    return float(np.mean(costs)), float(np.std(costs))


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def cmd_train(corpus_dir, config: PipelineConfig | str | os.PathLike, out_dir, *,
              cache_dir=None) -> TrainResult:
    """Run the whole training step and write a bundle to ``out_dir``."""
    if not isinstance(config, PipelineConfig):
        config = load_config(config)
    cfg = config.resolved()
    cache = RunCache(cache_dir)
    timings: dict[str, float] = {}
    out = Path(out_dir)
    written: list[str] = []

    def tick(stage, t0):
        timings[stage] = time.perf_counter() - t0
        log.info("stage %s done in %.2fs", stage, timings[stage])

    t0 = time.perf_counter()
    instances = load_corpus(corpus_dir)
    ids = [i.id for i in instances]
    by_id = {i.id: i for i in instances}
    tick("load", t0)

    _prepare_out(out)
    _write_manifest(out, "incomplete", [], {"seed": cfg.seed})
    (out / CONFIG_FILE).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    written.append(CONFIG_FILE)

    def fail(stage, exc):
        _write_manifest(out, "invalid", written, {"seed": cfg.seed, "failed_stage": stage,
                                                  "error": str(exc)})

    try:
        t0 = time.perf_counter()
        runs = _stage("features", feature_runs, instances, cfg.features, cfg.clock,
                      cfg.ticks_per_ms, cache)
        raw = [_stage("features", extract_features, logs, inst.id) for logs, inst in zip(runs, instances)]
        write_feature_csv(out / FEATURES_FILE, raw)
        written.append(FEATURES_FILE)
        tick("features", t0)

        t0 = time.perf_counter()
        N = len(instances)
        if N < 2:
            raise StageError("cluster", f"corpus of {N} instance(s) cannot form 2 classes")
        M = np.stack([fv.values for fv in raw])
        mean, std = column_stats(M)
        Z = apply_standardization(M, mean, std)
        ecfg = dataclasses.replace(cfg.embed, n_neighbors=max(2, min(cfg.embed.n_neighbors, N - 1)))
        if N < 3:
            raise StageError("cluster", f"corpus of {N} instances is too small to embed")
        points = _stage("embed", embed, Z, ecfg, ids)
        write_embedding_csv(out / EMBEDDING_FILE, points)
        written.append(EMBEDDING_FILE)
        tick("embed", t0)

        t0 = time.perf_counter()
        cm = _stage("cluster", hdbscan, points, cfg.cluster)
        if cm.L < 2:
            raise StageError("cluster", f"clustering found {cm.L} class; at least 2 are required")
        write_labels_csv(out / LABELS_FILE, ids, cm)
        written.append(LABELS_FILE)
        tick("cluster", t0)

        t0 = time.perf_counter()
        probe_ms = cfg.tuning.probe_ms or cfg.features.wall_ms
        tuned = []
        for c in range(cm.L):
            members = [instances[i] for i in np.flatnonzero(cm.labels == c)]
            noise = [bool(cm.noise_reassigned[i]) for i in np.flatnonzero(cm.labels == c)]

            def probe(inst):
                return cache.solve(inst, DEFAULT_PARAMS, probe_ms, 0, cfg.clock, cfg.ticks_per_ms).tts_ms

            hard_ids = _stage("tune", select_hard_instances, members, cfg.tuning.k_hard, probe_ms,
                              probe=probe, noise_reassigned=noise, class_id=c)
            hard = [by_id[h] for h in hard_ids]
            stats = []
            for h in hard:
                st = default_stats(runs[ids.index(h.id)])
                stats.append(st if st is not None else (0.0, 1.0))

            def evaluate(theta, inst):
                lg = solve(inst, theta, cfg.tuning.wall_ms, 0, clock=cfg.clock, ticks_per_ms=cfg.ticks_per_ms)
                if lg.best_cost is None:
                    return None, float(cfg.tuning.wall_ms)
                return lg.best_cost, float(lg.tts_ms)

            tpe_cfg = dataclasses.replace(cfg.tpe, seed=cfg.seed * 1009 + c)
            best, history = _stage("tune", tune_class, c, hard, PARAM_SPACE, tpe_cfg,
                                   defaults_stats=stats, T_limit=float(cfg.tuning.wall_ms),
                                   evaluate=evaluate)
            name = f"trials_class{c}.csv"
            write_trials_csv(out / name, history, hard_ids)
            written.append(name)
            tuned.append(best)
        tick("tune", t0)

        t0 = time.perf_counter()
        graphs = [to_graph(inst, int(lab)) for inst, lab in zip(instances, cm.labels)]
        parent_index = {g.graph_id: i for i, g in enumerate(graphs)}
        tr_par, va_par = _stage("graph", build_dataset, graphs, cfg.graph.balance_factor,
                                cfg.graph.split, cfg.seed)
        gc = cfg.graph

        def expand(parents):
            out_graphs = []
            for g in parents:
                s = (cfg.seed & 0xFFFF) * 100003 + parent_index[g.graph_id]
                out_graphs.extend(sample_nodes(g, gc.sample_rate, gc.sample_count, s))
            return out_graphs

        tr_set = expand(tr_par)
        va_set = expand(va_par) if va_par else list(tr_set)
        tick("graph", t0)

        t0 = time.perf_counter()
        gat_cfg = dataclasses.replace(cfg.gat, n_classes=cm.L)
        model = _stage("gat", train, (tr_set, va_set), cfg.train, gat_cfg)
        model.save(out / MODEL_FILE)
        written.append(MODEL_FILE)
        tick("gat", t0)

        classes = []
        for c in range(cm.L):
            mi = int(cm.medoid_index[c])
            classes.append(ClassEntry(c, tuned[c], cm.medoids[c],
                                      [ids[i] for i in np.flatnonzero(cm.labels == c)], ids[mi]))
        registry = ParamRegistry(classes, DEFAULT_PARAMS)
        registry.save(out / REGISTRY_FILE)
        written.append(REGISTRY_FILE)
    except StageError as exc:
        fail(exc.stage, exc)
        raise
    except Exception as exc:
        fail("write", exc)
        raise StageError("write", f"{type(exc).__name__}: {exc}") from exc

    _write_manifest(out, "complete", written, {"seed": cfg.seed, "n_classes": cm.L,
                                               "n_instances": len(instances)})
    log.info("bundle written to %s (cache hits %d, misses %d)", out, cache.hits, cache.misses)
    return TrainResult(out, registry, model, cm.labels.copy(), ids, timings)


# -- execution ----------------------------------------------------------------------


@dataclass
class ClassifyResult:
    instance_id: str
    predicted_class: int
    params: SolverParams
    t_tune_ms: float
    votes: list[int]

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "predicted_class": self.predicted_class,
            "params": self.params.to_dict(),
            "t_tune_ms": self.t_tune_ms,
            "votes": list(self.votes),
        }


def classify_instance(instance: BqpInstance, bundle: Bundle) -> ClassifyResult:
    """Time graph conversion plus the 20 sampled inferences; file I/O is not counted."""
    gc = bundle.config.graph
    t0 = time.perf_counter()
    g = to_graph(instance)
    cls, votes = predict_majority(bundle.model, g, gc.sample_count, gc.sample_rate,
                                  seed=bundle.config.seed, return_votes=True)
    t_tune = (time.perf_counter() - t0) * 1000.0
    params = bundle.registry.lookup(cls)
    return ClassifyResult(instance.id, cls, params, t_tune, [int(v) for v in votes])


def cmd_classify(instance_file, bundle_dir, *, bundle: Bundle | None = None) -> ClassifyResult:
    bundle = bundle if bundle is not None else load_bundle(bundle_dir)
    return classify_instance(load_instance(instance_file), bundle)


# -- metrics ------------------------------------------------------------------------


def compute_gap(E_class: float, E_ref: float) -> float:
    """Percent gap 100 * (E_class - E_ref) / |E_ref|; negative means improvement."""
    if E_ref == 0:
        raise UndefinedGap("gap is undefined for a zero reference cost")
    return 100.0 * (E_class - E_ref) / abs(E_ref)


def compute_delta_ttot(delta_tts_ms: float, t_tune_ms: float) -> float:
    return delta_tts_ms + t_tune_ms


def classify_effect(gap_percent: float | None, delta_ttot_ms: float | None) -> str:
    """Quality decides first (+-1 %); inside the band, total time decides (+-1 s)."""
    if gap_percent is not None:
        if gap_percent <= -GAP_THRESHOLD:
            return "improved"
        if gap_percent >= GAP_THRESHOLD:
            return "worsened"
    if delta_ttot_ms is not None:
        if delta_ttot_ms <= -TIME_THRESHOLD_MS:
            return "improved"
        if delta_ttot_ms >= TIME_THRESHOLD_MS:
            return "worsened"
    return "equivalent"


def format_sig(value: float | None, digits: int = 3) -> str:
    """Round half away from zero to ``digits`` significant figures, fixed notation."""
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return "NA"
    d = Decimal(repr(float(value)))
    if d == 0:
        return "0"
    exp = d.adjusted() - (digits - 1)
    q = d.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_UP)
    if q.adjusted() - (digits - 1) != exp:  # rounding carried into a new digit
        exp += 1
        q = d.quantize(Decimal(1).scaleb(exp), rounding=ROUND_HALF_UP)
    text = format(q, "f")
    return "0" if text in ("-0", "0") else text


@dataclass
class EvaluationRecord:
    instance_id: str
    true_class: int | None
    predicted_class: int
    E_class: float | None
    E_ref: float | None
    TTS_class: float | None
    TTS_ref: float | None
    T_tune: float
    gap_percent: float | None
    delta_tts_ms: float | None
    delta_ttot_ms: float | None
    effect: str

    def row(self) -> list[str]:
        s = lambda ms: None if ms is None else ms / 1000.0  # noqa: E731
        return [
            self.instance_id,
            "" if self.true_class is None else str(self.true_class),
            str(self.predicted_class),
            format_sig(self.gap_percent),
            format_sig(s(self.delta_tts_ms)),
            format_sig(s(self.T_tune)),
            format_sig(s(self.delta_ttot_ms)),
            self.effect,
        ]


def _mean_runs(logs: Sequence[RunLog]) -> tuple[float | None, float | None]:
    feas = [lg for lg in logs if lg.best_cost is not None]
    if not feas:
        return None, None
    return float(np.mean([lg.best_cost for lg in feas])), float(np.mean([lg.tts_ms for lg in feas]))


def make_record(instance_id, true_class, predicted_class, E_class, TTS_class, E_ref, TTS_ref,
                T_tune) -> EvaluationRecord:
    gap = dtts = dttot = None
    if E_class is not None and E_ref is not None:
        try:
            gap = compute_gap(E_class, E_ref)
        except UndefinedGap:
            gap = None
        dtts = TTS_class - TTS_ref
        dttot = compute_delta_ttot(dtts, T_tune)
        effect = classify_effect(gap, dttot)
    elif E_class is None and E_ref is None:
        effect = "equivalent"
    else:
        effect = "improved" if E_ref is None else "worsened"
    return EvaluationRecord(instance_id, true_class, predicted_class, E_class, E_ref, TTS_class,
                            TTS_ref, T_tune, gap, dtts, dttot, effect)


def load_manifest(path) -> list[tuple[Path, int | None]]:
    """Manifest: JSON list of paths or of {"path", "true_class"} objects, relative to the file."""
    path = Path(path)
    doc = json.loads(path.read_text())
    if isinstance(doc, dict):
        doc = doc.get("instances", [])
    out = []
    for item in doc:
        if isinstance(item, str):
            p, tc = item, None
        else:
            p, tc = item["path"], item.get("true_class")
        p = Path(p)
        out.append((p if p.is_absolute() else path.parent / p, None if tc is None else int(tc)))
    return out


@dataclass
class Baseline:
    """Reference parameters: one default set, or per problem tag with a fallback."""

    fallback: SolverParams = DEFAULT_PARAMS
    by_tag: dict[str, SolverParams] = field(default_factory=dict)

    def params_for(self, instance: BqpInstance) -> SolverParams:
        return self.by_tag.get(instance.problem_tag, self.fallback)

    @classmethod
    def load(cls, path) -> "Baseline":
        d = json.loads(Path(path).read_text())
        if d.get("schema") != BASELINE_SCHEMA:
            raise PipelineError(f"unsupported baseline schema {d.get('schema')!r}")
        fb = SolverParams.from_dict(d["default"]).validate() if "default" in d else DEFAULT_PARAMS
        tags = {k: SolverParams.from_dict(v).validate() for k, v in d.get("by_problem_tag", {}).items()}
        return cls(fb, tags)

    def to_dict(self) -> dict:
        return {"schema": BASELINE_SCHEMA, "default": self.fallback.to_dict(),
                "by_problem_tag": {k: v.to_dict() for k, v in sorted(self.by_tag.items())}}


def features_true_class(instance: BqpInstance, bundle: Bundle, cache: RunCache, k: int = 5) -> int:
    """Nearest-class label from a k-NN vote in the training feature space.

    Standardization reuses the training statistics; ties go to the smaller class.
    """
    cfg = bundle.config
    train_fv = read_feature_csv(bundle.root / FEATURES_FILE)
    lab_ids, labels, _ = read_labels_csv(bundle.root / LABELS_FILE)
    lab_of = dict(zip(lab_ids, labels))
    M = np.stack([fv.values for fv in train_fv])
    mean, std = column_stats(M)
    Z = apply_standardization(M, mean, std)
    logs = feature_runs([instance], cfg.features, cfg.clock, cfg.ticks_per_ms, cache)[0]
    z = apply_standardization(extract_features(logs, instance.id).values[None, :], mean, std)[0]
    d = np.sqrt(((Z - z) ** 2).sum(axis=1))
    k = min(k, len(d))
    nn = np.argsort(d, kind="stable")[:k]
    votes = np.bincount([lab_of[train_fv[i].instance_id] for i in nn], minlength=bundle.registry.L)
    return int(np.argmax(votes))


def cmd_evaluate(manifest_file, bundle_dir, baseline: Baseline | None = None, seeds: int = 10,
                 wall_ms: int = 30000, out_csv=None, *, clock: str = "wall",
                 ticks_per_ms: int = DEFAULT_TICKS_PER_MS, true_class_by_features: bool = False,
                 cache_dir=None, bundle: Bundle | None = None,
                 solver: Callable | None = None) -> tuple[list[EvaluationRecord], dict[str, int]]:
    """Selected-vs-baseline comparison per test instance; returns records and the effect tally."""
    bundle = bundle if bundle is not None else load_bundle(bundle_dir)
    baseline = baseline or Baseline()
    cache = RunCache(cache_dir)
    if seeds < 1 or wall_ms <= 0:
        raise PipelineError("seeds and wall_ms must be positive")
    if solver is None:
        def solver(inst, params, s):
            return cache.solve(inst, params, wall_ms, s, clock, ticks_per_ms)

    records = []
    for path, tc in load_manifest(manifest_file):
        inst = load_instance(path)
        res = classify_instance(inst, bundle)
        if tc is None and true_class_by_features:
            tc = features_true_class(inst, bundle, cache)
        ref_params = baseline.params_for(inst)
        sel_logs = [solver(inst, res.params, s) for s in range(seeds)]
        if res.params == ref_params:
            ref_logs = sel_logs
        else:
            ref_logs = [solver(inst, ref_params, s) for s in range(seeds)]
        E_c, T_c = _mean_runs(sel_logs)
        E_r, T_r = _mean_runs(ref_logs)
        records.append(make_record(inst.id, tc, res.predicted_class, E_c, T_c, E_r, T_r, res.t_tune_ms))

    tally = {e: sum(r.effect == e for r in records) for e in EFFECTS}
    if out_csv is not None:
        write_report(out_csv, records)
    return records, tally


def write_report(path, records: Sequence[EvaluationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in records:
            w.writerow(r.row())


# -- desk-scale corpora -------------------------------------------------------------

FAMILIES = ("qkp_dense", "qkp_sparse", "tsp")


def family_instance(family: str, index: int, seed: int) -> BqpInstance:
    """One member of a planted family; sizes are kept small for desk-scale runs."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, FAMILIES.index(family), index])
    iid = f"{family}_{index:03d}"
    sub_seed = int(rng.integers(0, 2**31 - 1))
    if family == "qkp_dense":
        return generate_qkp(int(rng.integers(50, 71)), float(rng.uniform(0.8, 1.0)), sub_seed, id=iid)
    if family == "qkp_sparse":
        return generate_qkp(int(rng.integers(120, 161)), float(rng.uniform(0.05, 0.1)), sub_seed, id=iid)
    if family == "tsp":
        return tsp_to_bqp(generate_tsp(int(rng.integers(5, 9)), sub_seed), id=iid)
    raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")


def generate_corpus(out_dir, per_family: int, seed: int = 0, start: int = 0) -> list[Path]:
    """Write ``per_family`` instances of each family; ``start`` offsets the indices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fam in FAMILIES:
        for i in range(start, start + per_family):
            inst = family_instance(fam, i, seed)
            p = out / f"{inst.id}.json"
            save_instance(inst, p)
            paths.append(p)
    return paths
