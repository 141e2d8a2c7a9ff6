"""Graph classifiers over directed, edge-weighted CFGs.

Three message-passing layer families (spectral normalization, injective
sum, attention) share a common shape: three layers of width 64, global
mean readout, dropout 0.2 during training, and a linear 64-to-2 head.
Every layer accepts an optional per-edge weight vector; weights
multiply messages before normalization (and before attention), so a
weight of 1.0 on every edge reproduces the unweighted model exactly.
Edge weights exist to make the classifiers differentiable in the edge
structure, which the explanation machinery exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffmath as dm
from .corpus import CfgGraph
from .diffmath import ops
from .rng import derive_rng

KINDS = ("gcn", "gin", "gat")
HIDDEN = 64
N_CLASSES = 2
N_LAYERS = 3


@dataclass(frozen=True)
class GnnConfig:
    epochs: int = 50
    lr: float = 1e-4
    weight_decay: float = 5e-4
    dropout: float = 0.2
    seed: int = 0
    symmetrize: bool = False

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def as_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "dropout": self.dropout,
            "seed": self.seed,
            "symmetrize": self.symmetrize,
        }

    @staticmethod
    def from_dict(d: dict) -> "GnnConfig":
        return GnnConfig(epochs=int(d.get("epochs", 50)),
                         lr=float(d.get("lr", 1e-4)),
                         weight_decay=float(d.get("weight_decay", 5e-4)),
                         dropout=float(d.get("dropout", 0.2)),
                         seed=int(d.get("seed", 0)),
                         symmetrize=bool(d.get("symmetrize", False)))


@dataclass
class GraphTensors:
    """Per-graph arrays precomputed for layer forwards.

    Edge order matches the corpus edge list (index k is corpus edge k)
    unless `symmetrize` added reverse edges, which are appended after
    the originals.
    """

    graph_id: str
    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    label: int | None = None
    n: int = 0
    m: int = 0
    norm_edge: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norm_self: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    att_src: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    att_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @staticmethod
    def from_arrays(graph_id: str, x: np.ndarray, src: np.ndarray,
                    dst: np.ndarray, label: int | None = None) -> "GraphTensors":
        x = np.asarray(x, dtype=np.float64)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        n = x.shape[0]
        # Degree convention: in-degree + 1 (the +1 is the implicit
        # self-loop), applied to both edge endpoints.
        deg = np.bincount(dst, minlength=n).astype(np.float64) + 1.0
        norm_edge = 1.0 / np.sqrt(deg[dst] * deg[src])
        norm_self = (1.0 / deg)[:, None]
        nodes = np.arange(n, dtype=np.int64)
        return GraphTensors(graph_id=graph_id, x=x, src=src, dst=dst,
                            label=label, n=n, m=src.shape[0],
                            norm_edge=norm_edge, norm_self=norm_self,
                            att_src=np.concatenate([src, nodes]),
                            att_dst=np.concatenate([dst, nodes]))

    @staticmethod
    def from_graph(graph: CfgGraph, symmetrize: bool = False) -> "GraphTensors":
        if graph.x is None:
            raise ValueError(f"graph {graph.id} has no feature matrix")
        edges = graph.edges
        if symmetrize:
            seen = {(int(s), int(d)) for s, d in edges.tolist()}
            extra = [(d, s) for s, d in edges.tolist() if (d, s) not in seen]
            if extra:
                edges = np.concatenate(
                    [edges, np.asarray(extra, dtype=np.int64)], axis=0)
        return GraphTensors.from_arrays(graph.id, graph.x, edges[:, 0],
                                        edges[:, 1], label=graph.label)

    def with_edges(self, keep: np.ndarray) -> "GraphTensors":
        """Same nodes, edge subset (degrees and attention recomputed)."""
        keep = np.asarray(keep, dtype=np.int64)
        return GraphTensors.from_arrays(self.graph_id, self.x,
                                        self.src[keep], self.dst[keep],
                                        label=self.label)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_gnn_params(kind: str, seed: int, in_dim: int = HIDDEN) -> dm.ParamStore:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    rng = derive_rng(seed, "gnn-init", kind)
    store = dm.ParamStore()
    dim = in_dim
    for i in range(N_LAYERS):
        if kind == "gcn":
            store.add(f"layer{i}.w", glorot(rng, dim, HIDDEN))
        elif kind == "gin":
            store.add(f"layer{i}.w1", glorot(rng, dim, HIDDEN))
            store.add(f"layer{i}.b1", np.zeros((1, HIDDEN)))
            store.add(f"layer{i}.w2", glorot(rng, HIDDEN, HIDDEN))
            store.add(f"layer{i}.b2", np.zeros((1, HIDDEN)))
        else:
            store.add(f"layer{i}.w", glorot(rng, dim, HIDDEN))
            store.add(f"layer{i}.a1", glorot(rng, HIDDEN, 1))
            store.add(f"layer{i}.a2", glorot(rng, HIDDEN, 1))
        dim = HIDDEN
    store.add("head.w", glorot(rng, HIDDEN, N_CLASSES))
    store.add("head.b", np.zeros((1, N_CLASSES)))
    return store


def gcn_layer(h: dm.Tensor, gt: GraphTensors, ew: dm.Tensor | None,
              store: dm.ParamStore, i: int) -> dm.Tensor:
    hw = ops.matmul(h, store[f"layer{i}.w"])
    self_part = ops.mul(hw, dm.const(gt.norm_self))
    if gt.m == 0:
        return ops.relu(self_part)
    coeff = dm.const(gt.norm_edge[:, None])
    if ew is not None:
        coeff = ops.mul(ew, coeff)
    msgs = ops.mul(ops.gather_rows(hw, gt.src), coeff)
    agg = ops.scatter_rows(msgs, gt.dst, gt.n)
    return ops.relu(ops.add(agg, self_part))


def gin_layer(h: dm.Tensor, gt: GraphTensors, ew: dm.Tensor | None,
              store: dm.ParamStore, i: int) -> dm.Tensor:
    pre = h
    if gt.m > 0:
        msgs = ops.gather_rows(h, gt.src)
        if ew is not None:
            msgs = ops.mul(msgs, ew)
        pre = ops.add(h, ops.scatter_rows(msgs, gt.dst, gt.n))
    h1 = ops.relu(ops.linear(pre, store[f"layer{i}.w1"], store[f"layer{i}.b1"]))
    return ops.linear(h1, store[f"layer{i}.w2"], store[f"layer{i}.b2"])


def gat_layer(h: dm.Tensor, gt: GraphTensors, ew: dm.Tensor | None,
              store: dm.ParamStore, i: int) -> dm.Tensor:
    hw = ops.matmul(h, store[f"layer{i}.w"])
    s_dst = ops.matmul(hw, store[f"layer{i}.a1"])
    s_src = ops.matmul(hw, store[f"layer{i}.a2"])
    scores = ops.leaky_relu(
        ops.add(ops.gather_rows(s_dst, gt.att_dst),
                ops.gather_rows(s_src, gt.att_src)), 0.2)
    alpha = ops.segment_softmax(scores, gt.att_dst, gt.n)
    if ew is not None and gt.m > 0:
        # The implicit self-edges carry fixed weight 1; only real edges
        # are modulated.
        weights = ops.concat([ew, dm.const(np.ones((gt.n, 1)))], axis=0)
        alpha = ops.mul(alpha, weights)
    msgs = ops.mul(ops.gather_rows(hw, gt.att_src), alpha)
    return ops.relu(ops.scatter_rows(msgs, gt.att_dst, gt.n))


_LAYER_FNS = {"gcn": gcn_layer, "gin": gin_layer, "gat": gat_layer}


@dataclass
class GnnModel:
    kind: str
    params: dm.ParamStore
    config: GnnConfig
    train_losses: list[float] = field(default_factory=list)


def model_forward(model: GnnModel, gt: GraphTensors,
                  ew: dm.Tensor | None = None, training: bool = False,
                  rng: np.random.Generator | None = None) -> dm.Tensor:
    """Run the full network; returns the (1, 2) logits tensor."""
    layer_fn = _LAYER_FNS[model.kind]
    h = dm.const(gt.x)
    for i in range(N_LAYERS):
        h = layer_fn(h, gt, ew, model.params, i)
    pooled = ops.mean_rows(h)
    if training:
        pooled = ops.dropout(pooled, model.config.dropout, rng, training=True)
    return ops.linear(pooled, model.params["head.w"], model.params["head.b"])


def predict_proba(model: GnnModel, gt: GraphTensors,
                  ew: dm.Tensor | None = None) -> np.ndarray:
    """Eval-mode class probabilities, shape (2,)."""
    logits = model_forward(model, gt, ew=ew, training=False).value[0]
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def predict_label(probs: np.ndarray) -> int:
    # Ties go to the malicious class.
    return 1 if probs[1] >= probs[0] else 0


def train_gnn(kind: str, data: list[GraphTensors],
              config: GnnConfig) -> GnnModel:
    """Adam-train one base classifier on labeled graph tensors."""
    config.validate()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    labels = {gt.label for gt in data}
    if len(labels) < 2:
        raise ValueError("training data must contain both classes")
    in_dim = data[0].x.shape[1]
    store = init_gnn_params(kind, config.seed, in_dim=in_dim)
    model = GnnModel(kind=kind, params=store, config=config)
    optim = dm.Adam(store, lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = derive_rng(config.seed, "gnn-shuffle", kind)
    dropout_rng = derive_rng(config.seed, "gnn-dropout", kind)

    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(len(data))
        total = 0.0
        for idx in perm.tolist():
            gt = data[idx]
            logits = model_forward(model, gt, training=True, rng=dropout_rng)
            loss = ops.cross_entropy(logits, [gt.label])
            store.zero_grad()
            loss.backward()
            optim.step()
            total += float(loss.value)
        model.train_losses.append(total / len(data))
    return model


def accuracy(model: GnnModel, data: list[GraphTensors]) -> float:
    correct = sum(
        1 for gt in data if predict_label(predict_proba(model, gt)) == gt.label)
    return correct / len(data)


def save_gnn(model: GnnModel, path: str) -> None:
    meta = {"kind": model.kind, "config": model.config.as_dict()}
    dm.save_checkpoint(path, f"gnn-{model.kind}", model.params, meta)


def load_gnn(path: str, expected_kind: str | None = None) -> GnnModel:
    kind_tag, arrays, meta = dm.load_checkpoint(path)
    if not kind_tag.startswith("gnn-"):
        raise ValueError(f"checkpoint {path} is not a graph model")
    kind = kind_tag[len("gnn-"):]
    if expected_kind is not None and kind != expected_kind:
        raise ValueError(
            f"checkpoint kind mismatch: expected {expected_kind!r}, "
            f"found {kind!r}")
    config = GnnConfig.from_dict(meta.get("config", {}))
    in_dim = arrays["layer0.w1" if kind == "gin" else "layer0.w"].shape[0]
    store = init_gnn_params(kind, config.seed, in_dim=in_dim)
    store.load_arrays(arrays)
    return GnnModel(kind=kind, params=store, config=config)
