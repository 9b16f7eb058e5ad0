"""Two-layer graph attention classifier with edge features, written against numpy.

Forward pass per layer and head ``h``::

    z_u       = W x_u
    e_vu      = LeakyReLU(a_dst . z_v + a_src . z_u + c_h * edge_vu)   (self-loop edge = 0)
    alpha_vu  = softmax over u in N(v) + {v}
    x'_v      = act(mean_h sum_u alpha_vu z_u + bias)

followed by a global mean pool, dropout, a linear head and softmax. Graphs in
a minibatch are stacked as one disjoint union; every gradient is derived by
hand and checked against finite differences in the test-suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graphify import InstanceGraph, sample_nodes

SCHEMA_VERSION = "fastisac-gat/1"
LOSS_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class GatConfig:
    in_dim: int = 3
    hidden: int = 8
    heads: int = 4
    n_classes: int = 2
    dropout: float = 0.3
    leaky_slope: float = 0.2
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "sigmoid"):
            raise ModelError(f"activation must be relu or sigmoid, got {self.activation!r}")
        if self.n_classes < 1:
            raise ModelError("n_classes must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1, learning_rate > 0")


LAYER_PARAMS = ("W", "a_src", "a_dst", "c_edge", "bias")


@dataclass
class GatModel:
    cfg: GatConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: GatConfig, seed: int = 0) -> "GatModel":
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x6A7])
        H, C = cfg.heads, cfg.hidden

        def glorot(shape, fan_in, fan_out):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=shape)

        p = {}
        for name, fin in (("l1", cfg.in_dim), ("l2", C)):
            p[f"{name}.W"] = glorot((fin, H * C), fin, H * C)
            p[f"{name}.a_src"] = glorot((H, C), H, C)
            p[f"{name}.a_dst"] = glorot((H, C), H, C)
            p[f"{name}.c_edge"] = glorot((H,), 1, H)
            p[f"{name}.bias"] = np.zeros(C)
        p["head.W"] = glorot((C, cfg.n_classes), C, cfg.n_classes)
        p["head.b"] = np.zeros(cfg.n_classes)
        return cls(cfg, p)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "GatModel":
        return GatModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    # -- persistence ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "hyperparameters": asdict(self.cfg),
            "tensors": {k: self.params[k].tolist() for k in sorted(self.params)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GatModel":
        if d.get("schema") != SCHEMA_VERSION:
            raise ModelError(f"unsupported model schema {d.get('schema')!r}")
        cfg = GatConfig(**d["hyperparameters"])
        params = {k: np.asarray(v, dtype=np.float64) for k, v in d["tensors"].items()}
        ref = cls.init(cfg)
        for k, v in ref.params.items():
            if k not in params or params[k].shape != v.shape:
                raise ModelError(f"tensor {k} missing or mis-shaped")
        return cls(cfg, params)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "GatModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- batching -----------------------------------------------------------------------


def _directed(g: InstanceGraph):
    """Directed edges with self-loops, sorted by destination then source."""
    cached = getattr(g, "_directed_cache", None)
    if cached is not None:
        return cached
    n = g.node_count
    e = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2)
    loops = np.arange(n, dtype=np.int64)
    src = np.concatenate([e[:, 0], e[:, 1], loops])
    dst = np.concatenate([e[:, 1], e[:, 0], loops])
    ef = np.concatenate([g.edge_attr, g.edge_attr, np.zeros(n)])
    order = np.lexsort((src, dst))
    out = (src[order], dst[order], ef[order])
    g._directed_cache = out
    return out


@dataclass
class Batch:
    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    ef: np.ndarray
    seg_starts: np.ndarray
    graph_starts: np.ndarray
    graph_sizes: np.ndarray
    node_graph: np.ndarray
    labels: np.ndarray | None

    @property
    def n_graphs(self) -> int:
        return len(self.graph_starts)


def make_batch(graphs: list[InstanceGraph], in_dim: int = 3) -> Batch:
    xs, srcs, dsts, efs, sizes = [], [], [], [], []
    offset = 0
    for g in graphs:
        if g.node_count == 0:
            raise ModelError(f"graph {g.graph_id!r} is empty")
        if g.node_features.shape[1] != in_dim:
            raise ModelError(f"graph {g.graph_id!r} has {g.node_features.shape[1]} node features, model expects {in_dim}")
        s, d, f = _directed(g)
        xs.append(g.node_features)
        srcs.append(s + offset)
        dsts.append(d + offset)
        efs.append(f)
        sizes.append(g.node_count)
        offset += g.node_count
    dst = np.concatenate(dsts)
    sizes = np.array(sizes, dtype=np.int64)
    seg_starts = np.searchsorted(dst, np.arange(offset), side="left")
    labels = None
    if all(g.label is not None for g in graphs):
        labels = np.array([g.label for g in graphs], dtype=np.int64)
    return Batch(
        x=np.concatenate(xs).astype(np.float64),
        src=np.concatenate(srcs),
        dst=dst,
        ef=np.concatenate(efs),
        seg_starts=seg_starts,
        graph_starts=np.concatenate([[0], np.cumsum(sizes)[:-1]]),
        graph_sizes=sizes,
        node_graph=np.repeat(np.arange(len(graphs)), sizes),
        labels=labels,
    )


# -- forward / backward -------------------------------------------------------------


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return 1.0 / (1.0 + np.exp(-z))


def _act_grad(z, out, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return out * (1.0 - out)


def _layer_forward(p, prefix, x, b: Batch, cfg: GatConfig, rng):
    H, C = cfg.heads, cfg.hidden
    W, a_src, a_dst = p[prefix + ".W"], p[prefix + ".a_src"], p[prefix + ".a_dst"]
    c_edge, bias = p[prefix + ".c_edge"], p[prefix + ".bias"]
    if x.shape[1] != W.shape[0]:
        raise ModelError(f"{prefix}: input width {x.shape[1]} != {W.shape[0]}")
    N = x.shape[0]
    Z = (x @ W).reshape(N, H, C)
    s_src = np.einsum("nhc,hc->nh", Z, a_src)
    s_dst = np.einsum("nhc,hc->nh", Z, a_dst)
    e = s_dst[b.dst] + s_src[b.src] + b.ef[:, None] * c_edge[None, :]
    lr = np.where(e > 0, e, cfg.leaky_slope * e)
    m = np.maximum.reduceat(lr, b.seg_starts, axis=0)
    ex = np.exp(lr - m[b.dst])
    den = np.add.reduceat(ex, b.seg_starts, axis=0)
    alpha = ex / den[b.dst]
    if rng is not None and cfg.dropout > 0:
        keep = 1.0 - cfg.dropout
        mask = (rng.random(alpha.shape) < keep) / keep
    else:
        mask = None
    alpha_d = alpha * mask if mask is not None else alpha
    msg = alpha_d[:, :, None] * Z[b.src]
    agg = np.add.reduceat(msg, b.seg_starts, axis=0)
    pre = agg.mean(axis=1) + bias
    out = _act(pre, cfg.activation)
    cache = dict(x=x, Z=Z, e=e, alpha=alpha, alpha_d=alpha_d, mask=mask, pre=pre, out=out)
    return out, cache


def _layer_backward(p, prefix, dout, cache, b: Batch, cfg: GatConfig, grads):
    H, C = cfg.heads, cfg.hidden
    W, a_src, a_dst = p[prefix + ".W"], p[prefix + ".a_src"], p[prefix + ".a_dst"]
    x, Z, e, alpha, alpha_d, mask = (cache[k] for k in ("x", "Z", "e", "alpha", "alpha_d", "mask"))
    N = x.shape[0]
    dpre = dout * _act_grad(cache["pre"], cache["out"], cfg.activation)
    grads[prefix + ".bias"] = dpre.sum(axis=0)
    dagg = np.broadcast_to(dpre[:, None, :] / H, (N, H, C))
    dmsg = dagg[b.dst]
    Zs = Z[b.src]
    dalpha_d = np.einsum("ehc,ehc->eh", dmsg, Zs)
    dZ = np.zeros_like(Z)
    np.add.at(dZ, b.src, alpha_d[:, :, None] * dmsg)
    dalpha = dalpha_d * mask if mask is not None else dalpha_d
    ad = alpha * dalpha
    seg = np.add.reduceat(ad, b.seg_starts, axis=0)
    dlr = ad - alpha * seg[b.dst]
    de = dlr * np.where(e > 0, 1.0, cfg.leaky_slope)
    ds_dst = np.add.reduceat(de, b.seg_starts, axis=0)
    ds_src = np.zeros((N, H))
    np.add.at(ds_src, b.src, de)
    grads[prefix + ".c_edge"] = (de * b.ef[:, None]).sum(axis=0)
    dZ += ds_src[:, :, None] * a_src[None] + ds_dst[:, :, None] * a_dst[None]
    grads[prefix + ".a_src"] = np.einsum("nh,nhc->hc", ds_src, Z)
    grads[prefix + ".a_dst"] = np.einsum("nh,nhc->hc", ds_dst, Z)
    dZf = dZ.reshape(N, H * C)
    grads[prefix + ".W"] = x.T @ dZf
    return dZf @ W.T


def forward(model: GatModel, batch: Batch, training: bool = False, rng=None):
    """Class probabilities (one row per graph) and the activation cache."""
    cfg, p = model.cfg, model.params
    if training and rng is None:
        raise ModelError("training forward needs an rng for dropout")
    drop_rng = rng if training else None
    h1, c1 = _layer_forward(p, "l1", batch.x, batch, cfg, drop_rng)
    h2, c2 = _layer_forward(p, "l2", h1, batch, cfg, drop_rng)
    pooled = np.add.reduceat(h2, batch.graph_starts, axis=0) / batch.graph_sizes[:, None]
    if drop_rng is not None and cfg.dropout > 0:
        keep = 1.0 - cfg.dropout
        pmask = (drop_rng.random(pooled.shape) < keep) / keep
        pooled_d = pooled * pmask
    else:
        pmask = None
        pooled_d = pooled
    logits = pooled_d @ p["head.W"] + p["head.b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    cache = dict(c1=c1, c2=c2, pooled=pooled, pooled_d=pooled_d, pmask=pmask,
                 logits=logits, shifted=shifted, probs=probs)
    return probs, cache


def loss(probabilities, label: int) -> float:
    """Cross-entropy of one probability vector, with p[label] floored at 1e-12."""
    p = float(np.asarray(probabilities)[label])
    return -math.log(max(p, LOSS_FLOOR))


def batch_loss(cache, labels) -> float:
    """Mean cross-entropy, computed from log-softmax for accuracy."""
    shifted = cache["shifted"]
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(len(labels)), labels]
    return float(np.minimum(nll, -math.log(LOSS_FLOOR)).mean())


def backward(model: GatModel, batch: Batch, cache, labels) -> dict[str, np.ndarray]:
    cfg, p = model.cfg, model.params
    B = len(labels)
    probs = cache["probs"]
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    clamped = probs[np.arange(B), labels] < LOSS_FLOOR
    dlogits[clamped] = 0.0
    dlogits /= B
    grads: dict[str, np.ndarray] = {}
    grads["head.W"] = cache["pooled_d"].T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ p["head.W"].T
    if cache["pmask"] is not None:
        dpooled = dpooled * cache["pmask"]
    dh2 = (dpooled / batch.graph_sizes[:, None])[batch.node_graph]
    dh1 = _layer_backward(p, "l2", dh2, cache["c2"], batch, cfg, grads)
    _layer_backward(p, "l1", dh1, cache["c1"], batch, cfg, grads)
    return grads


def attention_weights(model: GatModel, graph: InstanceGraph) -> tuple[Batch, list[np.ndarray]]:
    """Per-layer attention coefficients (edges x heads) for inspection."""
    b = make_batch([graph], model.cfg.in_dim)
    _, cache = forward(model, b)
    return b, [cache["c1"]["alpha"], cache["c2"]["alpha"]]


def predict_proba(model: GatModel, graphs: list[InstanceGraph]) -> np.ndarray:
    return forward(model, make_batch(graphs, model.cfg.in_dim))[0]


# -- training ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


def accuracy(model: GatModel, graphs: list[InstanceGraph], chunk: int = 256) -> float:
    if not graphs:
        return 0.0
    hits = 0
    for i in range(0, len(graphs), chunk):
        part = graphs[i:i + chunk]
        pred = predict_proba(model, part).argmax(axis=1)
        hits += int((pred == np.array([g.label for g in part])).sum())
    return hits / len(graphs)


def train(dataset, cfg: TrainConfig = TrainConfig(), model_cfg: GatConfig | None = None,
          model: GatModel | None = None, log=None) -> GatModel:
    """Minibatch Adam; returns the epoch checkpoint with the best validation accuracy."""
    train_set, val_set = dataset
    if not train_set or not val_set:
        raise TrainingError("train and validation splits must both be nonempty")
    labels = [g.label for g in list(train_set) + list(val_set)]
    if any(lab is None for lab in labels):
        raise TrainingError("all graphs need labels")
    if model is None:
        if model_cfg is None:
            model_cfg = GatConfig(n_classes=int(max(labels)) + 1)
        model = GatModel.init(model_cfg, cfg.seed)
    n_classes = model.cfg.n_classes
    if min(labels) < 0 or max(labels) >= n_classes:
        raise TrainingError(f"labels must lie in 0..{n_classes - 1}")
    model = model.copy()
    if cfg.epochs == 0:
        return model

    rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFF, 0x7A1])
    opt = Adam(model.params, cfg)
    best_acc, best = -1.0, model.copy()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            part = [train_set[i] for i in order[start:start + cfg.batch_size]]
            batch = make_batch(part, model.cfg.in_dim)
            _, cache = forward(model, batch, training=True, rng=rng)
            value = batch_loss(cache, batch.labels)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = backward(model, batch, cache, batch.labels)
            opt.step(model.params, grads)
        acc = accuracy(model, val_set)
        if log is not None:
            log(epoch, acc)
        if acc > best_acc:
            best_acc, best = acc, model.copy()
    return best


def predict_majority(model: GatModel, graph: InstanceGraph, count: int = 20, rate: float = 0.10,
                     seed: int = 0, return_votes: bool = False):
    """Modal argmax class over ``count`` node-sampled subgraphs; ties go to the smaller index."""
    if graph.node_count == 0:
        raise ModelError("cannot classify an empty graph")
    samples = sample_nodes(graph, rate, count, seed)
    probs = predict_proba(model, samples)
    votes = np.bincount(probs.argmax(axis=1), minlength=model.cfg.n_classes)
    cls = int(np.argmax(votes))
    return (cls, votes) if return_votes else cls


# -- finite-difference oracle -------------------------------------------------------


def _preactivations(model: GatModel, batch: Batch) -> np.ndarray:
    _, cache = forward(model, batch)
    parts = []
    for c in (cache["c1"], cache["c2"]):
        parts.append(c["e"].ravel())
        if model.cfg.activation == "relu":
            parts.append(c["pre"].ravel())
    return np.concatenate(parts)


def near_kink(model: GatModel, batch: Batch, tol: float = 1e-3) -> bool:
    return bool(np.any(np.abs(_preactivations(model, batch)) < tol))


def _loss_ld(model: GatModel, batch: Batch, label: int):
    _, cache = forward(model, batch)
    shifted = cache["shifted"][0]
    nll = np.log(np.exp(shifted).sum()) - shifted[label]
    return min(nll, np.longdouble(-math.log(LOSS_FLOOR)))


def grad_check(model: GatModel, graph: InstanceGraph, label: int, h: float = 1e-5,
               names=None) -> float:
    """Max relative gap between analytic and central-difference gradients (dropout off).

    The difference quotients are evaluated in extended precision so that
    roundoff in the loss does not swamp gradients near the 1e-8 floor.
    """
    g = InstanceGraph(graph.node_features, graph.edges, graph.edge_attr, label, graph.graph_id)
    batch = make_batch([g], model.cfg.in_dim)
    _, cache = forward(model, batch)
    analytic = backward(model, batch, cache, np.array([label]))
    names = sorted(model.params) if names is None else list(names)

    ld = np.longdouble
    work = GatModel(model.cfg, {k: v.astype(ld) for k, v in model.params.items()})
    ld_batch = Batch(**{**batch.__dict__, "x": batch.x.astype(ld), "ef": batch.ef.astype(ld)})
    step = ld(h)
    worst = 0.0
    for name in names:
        flat = work.params[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp = _loss_ld(work, ld_batch, label)
            flat[i] = old - step
            lm = _loss_ld(work, ld_batch, label)
            flat[i] = old
            fd = float((lp - lm) / (2 * step))
            an = float(analytic[name].reshape(-1)[i])
            err = abs(an - fd) / max(1e-8, abs(an) + abs(fd))
            worst = max(worst, err)
    return worst
