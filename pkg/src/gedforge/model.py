"""GCN node embeddings -> BFS-ordered similarity image -> CNN score, plus the
mean-embedding baseline and the training loop."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from gedforge import autodiff as ad
from gedforge.autodiff import Tensor
from gedforge.graph import LabeledGraph, bfs_order, permute_graph
from gedforge.metrics import ged_similarity
from gedforge.rng import substream

DEFAULT_CNN = [
    {"op": "conv", "window": 6, "stride": 1, "in": 1, "out": 16},
    {"op": "maxpool", "size": 2},
    {"op": "conv", "window": 6, "stride": 1, "in": 16, "out": 32},
    {"op": "maxpool", "size": 2},
    {"op": "conv", "window": 5, "stride": 1, "in": 32, "out": 64},
    {"op": "maxpool", "size": 2},
    {"op": "conv", "window": 5, "stride": 1, "in": 64, "out": 128},
    {"op": "maxpool", "size": 3},
    {"op": "conv", "window": 5, "stride": 1, "in": 128, "out": 128},
    {"op": "maxpool", "size": 3},
]


class ConfigError(ValueError):
    pass


class GraphTooLargeError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: Literal["gsimcnn", "embavg"] = "gsimcnn"
    input_dim: int = 1
    gcn_dims: list[int] = field(default_factory=lambda: [64, 64, 32])
    pad_to: int = 10
    resize_to: int = 10
    cnn_spec: list[dict] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CNN))
    dense_dims: list[int] = field(default_factory=lambda: [128, 64, 32, 1])
    lr: float = 0.001
    batch_size: int = 32
    iterations: int = 2000
    eval_every: int = 100
    max_val_pairs: int = 2000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in ("gsimcnn", "embavg"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or not self.gcn_dims or min(self.gcn_dims) < 1:
            raise ConfigError("need input_dim >= 1 and at least one positive GCN width")
        if self.pad_to < 1 or self.resize_to < 1:
            raise ConfigError("pad_to and resize_to must be >= 1")
        if self.kind == "gsimcnn":
            self.cnn_output()

    def cnn_output(self) -> tuple[int, int]:
        """(channels, spatial size) after the CNN stack; rejects stacks that do
        not end in a 1x1 map."""
        size, channels = self.resize_to, 1
        for layer in self.cnn_spec:
            op = layer.get("op")
            if op == "conv":
                if layer.get("stride", 1) != 1:
                    raise ConfigError("only stride-1 convolutions are supported")
                if layer["in"] != channels:
                    raise ConfigError(f"conv expects {layer['in']} channels, gets {channels}")
                if layer["window"] < 1:
                    raise ConfigError("conv window must be >= 1")
                channels = layer["out"]
            elif op == "maxpool":
                if layer["size"] < 1:
                    raise ConfigError("pool size must be >= 1")
                size = ad.pool_out(size, layer["size"])
            else:
                raise ConfigError(f"unknown CNN layer {layer!r}")
        if size != 1:
            raise ConfigError(f"CNN stack leaves a {size}x{size} map, expected 1x1")
        if self.dense_dims[0] != channels or self.dense_dims[-1] != 1:
            raise ConfigError(
                f"dense_dims must run from {channels} to 1, got {self.dense_dims}"
            )
        return channels, size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def config_hash(obj) -> str:
    return hashlib.sha256(ad.dumps(obj).encode()).hexdigest()[:16]


# -- parameters ------------------------------------------------------------------


def _glorot(rng, shape, fan_in, fan_out) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    rng = substream(seed, "init")
    params: dict[str, Tensor] = {}
    dims = [cfg.input_dim] + list(cfg.gcn_dims)
    for k in range(len(cfg.gcn_dims)):
        params[f"gcn.{k}.w"] = _glorot(rng, (dims[k], dims[k + 1]), dims[k], dims[k + 1])
        params[f"gcn.{k}.b"] = Tensor(np.zeros(dims[k + 1]), requires_grad=True)
    if cfg.kind == "gsimcnn":
        k = 0
        for layer in cfg.cnn_spec:
            if layer["op"] != "conv":
                continue
            w, cin, cout = layer["window"], layer["in"], layer["out"]
            params[f"conv.{k}.w"] = _glorot(rng, (cout, cin, w, w), cin * w * w, cout * w * w)
            params[f"conv.{k}.b"] = Tensor(np.zeros(cout), requires_grad=True)
            k += 1
        dd = cfg.dense_dims
        for k in range(len(dd) - 1):
            params[f"dense.{k}.w"] = _glorot(rng, (dd[k], dd[k + 1]), dd[k], dd[k + 1])
            params[f"dense.{k}.b"] = Tensor(np.zeros(dd[k + 1]), requires_grad=True)
    return params


# -- graph preprocessing -----------------------------------------------------------


@dataclass(frozen=True)
class PreparedGraph:
    """Padded model inputs: features (P, D0), propagation matrix (P, P), node mask (P, 1)."""

    features: np.ndarray
    propagation: np.ndarray
    mask: np.ndarray
    n: int


def node_features(g: LabeledGraph, input_dim: int) -> np.ndarray:
    """One-hot labels, or the constant 1 vector when ``input_dim == 1``."""
    if input_dim == 1:
        return np.ones((g.n, 1))
    if g.num_labels > input_dim:
        raise ConfigError(f"graph uses {g.num_labels} labels but input_dim={input_dim}")
    x = np.zeros((g.n, input_dim))
    x[np.arange(g.n), g.labels] = 1.0
    return x


def propagation_matrix(g: LabeledGraph) -> np.ndarray:
    """1/sqrt(d_i d_j) over each node's neighbors plus itself, d = degree + 1."""
    a = g.adjacency.astype(np.float64) + np.eye(g.n)
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def prepare_graph(g: LabeledGraph, cfg: ModelConfig, reorder: bool = True) -> PreparedGraph:
    if g.n > cfg.pad_to:
        raise GraphTooLargeError(f"{g.n}-node graph exceeds pad_to={cfg.pad_to}")
    if reorder:
        g = permute_graph(g, bfs_order(g))
    p = cfg.pad_to
    x = np.zeros((p, cfg.input_dim))
    x[: g.n] = node_features(g, cfg.input_dim)
    a = np.zeros((p, p))
    a[: g.n, : g.n] = propagation_matrix(g)
    m = np.zeros((p, 1))
    m[: g.n] = 1.0
    return PreparedGraph(x, a, m, g.n)


# -- stages ----------------------------------------------------------------------


def gcn_layers(x, a_hat: np.ndarray, mask: np.ndarray | None, params, n_layers: int) -> Tensor:
    h = ad.as_tensor(x)
    for k in range(n_layers):
        h = ad.neighbor_aggregate(a_hat, ad.rowwise_linear(h, params[f"gcn.{k}.w"]))
        h = ad.relu(ad.add_bias(h, params[f"gcn.{k}.b"]))
        if mask is not None:
            # padded rows would otherwise pick up relu(bias)
            h = ad.mul(h, mask)
    return h


def gcn_encode(g: LabeledGraph, params, cfg: ModelConfig) -> Tensor:
    """Node embeddings (n x D_K) in g's own node order."""
    x = node_features(g, cfg.input_dim)
    if params["gcn.0.w"].shape[0] != x.shape[1]:
        raise ConfigError(
            f"features have width {x.shape[1]}, first GCN weight expects {params['gcn.0.w'].shape[0]}"
        )
    return gcn_layers(x, propagation_matrix(g), None, params, len(cfg.gcn_dims))


def gram_resize(h1, h2, resize_to: int) -> Tensor:
    s = ad.matmul(h1, ad.swap_last(h2))
    return ad.bilinear_resize(s, resize_to, resize_to)


def similarity_matrix(h1, h2, order1, order2, pad_to: int, resize_to: int) -> Tensor:
    """Inner products of BFS-ordered, zero-padded node embeddings, resized."""
    h1, h2 = ad.as_tensor(h1), ad.as_tensor(h2)

    def placer(order, n):
        if pad_to < n:
            raise GraphTooLargeError(f"pad_to={pad_to} is smaller than {n} nodes")
        m = np.zeros((pad_to, n))
        m[np.arange(n), list(order)] = 1.0
        return m

    p1 = ad.matmul(placer(order1, h1.shape[0]), h1)
    p2 = ad.matmul(placer(order2, h2.shape[0]), h2)
    return gram_resize(p1, p2, resize_to)


def cnn_head(img: Tensor, params, cfg: ModelConfig) -> Tensor:
    """(B, 1, R, R) image -> (B,) scores in (0, 1)."""
    x = img
    k = 0
    for layer in cfg.cnn_spec:
        if layer["op"] == "conv":
            x = ad.relu(ad.conv2d(x, params[f"conv.{k}.w"], params[f"conv.{k}.b"]))
            k += 1
        else:
            x = ad.maxpool2d(x, layer["size"])
    x = ad.flatten(x)
    n_dense = len(cfg.dense_dims) - 1
    for k in range(n_dense):
        x = ad.dense(x, params[f"dense.{k}.w"], params[f"dense.{k}.b"])
        x = ad.relu(x) if k < n_dense - 1 else ad.sigmoid(x)
    return ad.reshape(x, (x.shape[0],))


def _stack(prepared: Sequence[PreparedGraph]):
    return (
        np.stack([p.features for p in prepared]),
        np.stack([p.propagation for p in prepared]),
        np.stack([p.mask for p in prepared]),
    )


def score_batch(
    left: Sequence[PreparedGraph], right: Sequence[PreparedGraph], params, cfg: ModelConfig
) -> Tensor:
    """Similarity scores for aligned lists of prepared graphs, shape (B,)."""
    n_layers = len(cfg.gcn_dims)
    x1, a1, m1 = _stack(left)
    x2, a2, m2 = _stack(right)
    h1 = gcn_layers(x1, a1, m1, params, n_layers)
    h2 = gcn_layers(x2, a2, m2, params, n_layers)
    if cfg.kind == "embavg":
        inv1 = np.array([1.0 / p.n for p in left])[:, None]
        inv2 = np.array([1.0 / p.n for p in right])[:, None]
        avg1 = ad.mul(ad.sum(h1, axis=1), inv1)
        avg2 = ad.mul(ad.sum(h2, axis=1), inv2)
        return ad.sigmoid(ad.sum(ad.mul(avg1, avg2), axis=1))
    b, r = len(left), cfg.resize_to
    img = ad.reshape(gram_resize(h1, h2, r), (b, 1, r, r))
    return cnn_head(img, params, cfg)


def model_forward(g1: LabeledGraph, g2: LabeledGraph, params, cfg: ModelConfig) -> float:
    s = score_batch([prepare_graph(g1, cfg)], [prepare_graph(g2, cfg)], params, cfg)
    return float(s.data[0])


def emb_avg_score(g1: LabeledGraph, g2: LabeledGraph, params, cfg: ModelConfig) -> float:
    """sigmoid of the dot product of the two mean node embeddings."""
    m1 = gcn_encode(g1, params, cfg).data.mean(axis=0)
    m2 = gcn_encode(g2, params, cfg).data.mean(axis=0)
    z = float(m1 @ m2)
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def pair_loss(
    left: Sequence[PreparedGraph],
    right: Sequence[PreparedGraph],
    targets: Sequence[float],
    params,
    cfg: ModelConfig,
) -> Tensor:
    """Mean squared error between predicted and target similarities."""
    if len(targets) != len(left) or len(left) != len(right) or len(targets) == 0:
        raise ValueError("every pair in the batch needs a ground-truth target")
    pred = score_batch(left, right, params, cfg)
    return ad.mse_loss(pred, np.asarray(targets, dtype=np.float64))


# -- checkpoints ---------------------------------------------------------------


CHECKPOINT_FORMAT = "gedforge-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, Tensor]
    seed: int
    iteration: int = 0
    best_val_loss: float | None = None
    adam: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config.to_dict()),
            "seed": self.seed,
            "iteration": self.iteration,
            "best_val_loss": self.best_val_loss,
            "params": ad.pack_params(self.params),
            "adam": self.adam,
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return ad.dumps(self.to_dict())

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.dumps())
            f.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a gedforge checkpoint (or unsupported version)")
        return cls(
            config=ModelConfig.from_dict(d["config"]),
            params=ad.unpack_params(d["params"]),
            seed=d["seed"],
            iteration=d["iteration"],
            best_val_loss=d["best_val_loss"],
            adam=d["adam"],
            meta=d.get("meta", {}),
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def score(self, g1: LabeledGraph, g2: LabeledGraph) -> float:
        return model_forward(g1, g2, self.params, self.config)


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[tuple[int, float | None, float | None]]
    seconds: float

    def trace_csv(self) -> str:
        lines = ["iteration,train_loss,val_loss"]
        for it, tr, va in self.trace:
            lines.append(f"{it},{'' if tr is None else repr(tr)},{'' if va is None else repr(va)}")
        return "\n".join(lines) + "\n"


class Scorer:
    """Batched scoring of many graph pairs against fixed parameters."""

    def __init__(self, graphs: Sequence[LabeledGraph], params, cfg: ModelConfig, chunk: int = 256):
        self.graphs = graphs
        self.params = params
        self.cfg = cfg
        self.chunk = chunk
        self._cache: dict[int, PreparedGraph] = {}

    def prepared(self, i: int) -> PreparedGraph:
        p = self._cache.get(i)
        if p is None:
            p = self._cache[i] = prepare_graph(self.graphs[i], self.cfg)
        return p

    def scores(self, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
        out = []
        for start in range(0, len(pairs), self.chunk):
            part = pairs[start : start + self.chunk]
            s = score_batch(
                [self.prepared(i) for i, _ in part],
                [self.prepared(j) for _, j in part],
                self.params,
                self.cfg,
            )
            out.append(s.data)
        return np.concatenate(out) if out else np.zeros(0)


def pair_targets(graphs, pairs: Sequence[tuple[int, int, float]]) -> np.ndarray:
    return np.array([ged_similarity(d, graphs[i].n, graphs[j].n) for i, j, d in pairs])


def _frozen_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data, requires_grad=True) for k, p in params.items()}


def train(
    graphs: Sequence[LabeledGraph],
    train_pairs: Sequence[tuple[int, int, float]],
    val_pairs: Sequence[tuple[int, int, float]],
    cfg: ModelConfig,
    seed: int,
    log=None,
) -> TrainResult:
    """Adam on the pair MSE; returns the parameters with the lowest validation loss.

    Pairs are ``(i, j, ged)`` indexing ``graphs``. Each iteration samples a batch
    uniformly with replacement and orients each pair randomly. Validation runs
    every ``eval_every`` iterations on at most ``max_val_pairs`` fixed pairs.
    """
    if not train_pairs or not val_pairs:
        raise ValueError("training and validation pairs must be non-empty")
    start = time.perf_counter()
    params = init_params(cfg, seed)
    opt = ad.Adam(params, lr=cfg.lr)
    batch_rng = substream(seed, "batching")
    val_rng = substream(seed, "validation")
    if len(val_pairs) > cfg.max_val_pairs:
        keep = np.sort(val_rng.choice(len(val_pairs), cfg.max_val_pairs, replace=False))
        val_pairs = [val_pairs[k] for k in keep]
    scorer = Scorer(graphs, params, cfg)
    train_targets = pair_targets(graphs, train_pairs)
    val_targets = pair_targets(graphs, val_pairs)
    val_index = [(i, j) for i, j, _ in val_pairs]

    def val_loss() -> float:
        pred = scorer.scores(val_index)
        return float(np.mean((pred - val_targets) ** 2))

    best = val_loss()
    best_state = (_frozen_params(params), opt.state_dict(), 0)
    trace: list[tuple[int, float | None, float | None]] = [(0, None, best)]
    for it in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, len(train_pairs), size=cfg.batch_size)
        flip = batch_rng.random(cfg.batch_size) < 0.5
        left, right = [], []
        for k, f in zip(idx, flip):
            i, j, _ = train_pairs[k]
            if f:
                i, j = j, i
            left.append(scorer.prepared(i))
            right.append(scorer.prepared(j))
        opt.zero_grad()
        loss = pair_loss(left, right, train_targets[idx], params, cfg)
        loss.backward()
        opt.step()
        vl = None
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            vl = val_loss()
            if vl < best:
                best = vl
                best_state = (_frozen_params(params), opt.state_dict(), it)
            if log is not None:
                log(f"iter {it} train {loss.item():.6f} val {vl:.6f}")
        trace.append((it, loss.item(), vl))
    best_params, adam_state, best_it = best_state
    ckpt = Checkpoint(cfg, best_params, seed, best_it, best, adam_state)
    return TrainResult(ckpt, trace, time.perf_counter() - start)
