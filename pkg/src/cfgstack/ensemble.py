"""Stacked ensemble over the three base graph classifiers.

Training protocol: partition the train split into k stratified folds;
for each base kind, train k fold models and collect each model's
probabilities on its own held-out fold, so every train graph receives
exactly one out-of-fold prediction per kind.  The stacked rows form
the meta-dataset.  An attention meta-learner scores each base's
probability pair, softmax-normalizes the scores into per-base weights,
re-scales the pairs by their weights, and classifies the result with a
small MLP.  The bases are then retrained on the full train split for
deployment.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffmath as dm
from .corpus import FoldPartition, stratify_ids
from .diffmath import ops
from .gnn import (
    KINDS,
    GnnConfig,
    GnnModel,
    GraphTensors,
    accuracy,
    init_gnn_params,
    predict_label,
    predict_proba,
    train_gnn,
)
from .rng import derive_rng, derive_seed

N_KINDS = len(KINDS)
META_WIDTHS = (2 * N_KINDS, 128, 64, 2)


@dataclass(frozen=True)
class MetaConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    dropout: float = 0.2
    seed: int = 0

    def as_dict(self) -> dict:
        return {"epochs": self.epochs, "lr": self.lr,
                "batch_size": self.batch_size, "dropout": self.dropout,
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "MetaConfig":
        return MetaConfig(epochs=int(d.get("epochs", 100)),
                          lr=float(d.get("lr", 1e-3)),
                          batch_size=int(d.get("batch_size", 32)),
                          dropout=float(d.get("dropout", 0.2)),
                          seed=int(d.get("seed", 0)))


@dataclass
class MetaDataset:
    """Out-of-fold base probabilities, stacked per train graph.

    Column pairs follow the fixed kind order: columns (2i, 2i+1) hold
    kind i's (benign, malicious) probabilities.  `fold_of` and
    `fold_train_ids` record provenance: row r was predicted by the
    fold_of[ids[r]] model of each kind, whose training set was
    `fold_train_ids[other folds]`.
    """

    y: np.ndarray
    labels: np.ndarray
    ids: list[str]
    kinds: tuple[str, ...]
    fold_of: dict[str, int]
    fold_train_ids: dict[int, tuple[str, ...]]
    fold_val_accuracy: dict[tuple[str, int], float] = field(default_factory=dict)


def _run_fold_task(args: tuple) -> tuple:
    kind, fold, train_data, held_out, config = args
    model = train_gnn(kind, train_data, config)
    probs = {gt.graph_id: predict_proba(model, gt) for gt in held_out}
    val_acc = accuracy(model, held_out)
    return kind, fold, probs, val_acc


def build_meta_dataset(tensors: list[GraphTensors], k: int,
                       config: GnnConfig, seed: int,
                       kinds: tuple[str, ...] = KINDS,
                       partition: FoldPartition | None = None,
                       jobs: int = 1) -> MetaDataset:
    """Train kind-by-fold base models and stack held-out predictions."""
    if partition is None:
        partition = stratify_ids(
            [(gt.graph_id, gt.label) for gt in tensors], k, seed)
    fold_of = partition.assignment
    by_fold: dict[int, list[GraphTensors]] = {f: [] for f in range(k)}
    for gt in tensors:
        if gt.graph_id not in fold_of:
            raise ValueError(f"graph {gt.graph_id} missing from fold partition")
        by_fold[fold_of[gt.graph_id]].append(gt)

    tasks = []
    for kind in kinds:
        for fold in range(k):
            train_data = [gt for f, members in by_fold.items() if f != fold
                          for gt in members]
            task_config = replace(
                config, seed=derive_seed(seed, "fold", kind, fold))
            tasks.append((kind, fold, train_data, by_fold[fold], task_config))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_task, tasks))
    else:
        results = [_run_fold_task(t) for t in tasks]

    ids = [gt.graph_id for gt in tensors]
    row_of = {gid: r for r, gid in enumerate(ids)}
    y = np.full((len(tensors), 2 * len(kinds)), np.nan)
    fold_val_accuracy = {}
    for kind, fold, probs, val_acc in results:
        col = 2 * kinds.index(kind)
        for gid, p in probs.items():
            y[row_of[gid], col:col + 2] = p
        fold_val_accuracy[(kind, fold)] = val_acc
    if np.isnan(y).any():
        raise AssertionError("meta-dataset has unpredicted rows")

    fold_train_ids = {
        fold: tuple(gid for gid in ids if fold_of[gid] != fold)
        for fold in range(k)
    }
    labels = np.asarray([gt.label for gt in tensors], dtype=np.int64)
    return MetaDataset(y=y, labels=labels, ids=ids, kinds=tuple(kinds),
                       fold_of=dict(fold_of), fold_train_ids=fold_train_ids,
                       fold_val_accuracy=fold_val_accuracy)


def init_meta_params(seed: int, n_kinds: int = N_KINDS) -> dm.ParamStore:
    rng = derive_rng(seed, "meta-init")
    store = dm.ParamStore()
    for i in range(n_kinds):
        limit = np.sqrt(6.0 / 3.0)
        store.add(f"att.w{i}", rng.uniform(-limit, limit, size=(2, 1)))
        store.add(f"att.b{i}", np.zeros((1, 1)))
    widths = (2 * n_kinds,) + META_WIDTHS[1:]
    for i in range(len(widths) - 1):
        limit = np.sqrt(6.0 / (widths[i] + widths[i + 1]))
        store.add(f"mlp.w{i}", rng.uniform(-limit, limit,
                                           size=(widths[i], widths[i + 1])))
        store.add(f"mlp.b{i}", np.zeros((1, widths[i + 1])))
    return store


@dataclass
class MetaLearner:
    params: dm.ParamStore
    kinds: tuple[str, ...]
    config: MetaConfig


def attention_forward(meta: MetaLearner, y, training: bool = False,
                      rng: np.random.Generator | None = None
                      ) -> tuple[dm.Tensor, dm.Tensor]:
    """Score, weight, and classify stacked base probabilities.

    `y` is (B, 2n): n consecutive (benign, malicious) pairs per row.
    Returns (logits (B, 2), alphas (B, n)).
    """
    yt = y if isinstance(y, dm.Tensor) else dm.const(np.asarray(y, dtype=np.float64))
    n = len(meta.kinds)
    if yt.value.ndim != 2 or yt.value.shape[1] != 2 * n:
        raise ValueError(f"expected (B, {2 * n}) stacked probabilities")
    store = meta.params
    pairs = [ops.slice_cols(yt, 2 * i, 2 * i + 2) for i in range(n)]
    scores = ops.concat(
        [ops.linear(pairs[i], store[f"att.w{i}"], store[f"att.b{i}"])
         for i in range(n)], axis=1)
    alphas = ops.softmax_rows(scores)
    psi = ops.concat(
        [ops.mul(pairs[i], ops.slice_cols(alphas, i, i + 1)) for i in range(n)],
        axis=1)
    h = psi
    n_mlp = len(META_WIDTHS) - 1
    for i in range(n_mlp):
        h = ops.linear(h, store[f"mlp.w{i}"], store[f"mlp.b{i}"])
        if i < n_mlp - 1:
            h = ops.relu(h)
            if training:
                h = ops.dropout(h, meta.config.dropout, rng, training=True)
    return h, alphas


def train_meta(meta_ds: MetaDataset, config: MetaConfig) -> MetaLearner:
    """Jointly train attention parameters and the MLP with cross-entropy."""
    if len(set(meta_ds.labels.tolist())) < 2:
        raise ValueError("meta training labels must contain both classes")
    store = init_meta_params(config.seed, n_kinds=len(meta_ds.kinds))
    meta = MetaLearner(params=store, kinds=meta_ds.kinds, config=config)
    optim = dm.Adam(store, lr=config.lr)
    shuffle_rng = derive_rng(config.seed, "meta-shuffle")
    dropout_rng = derive_rng(config.seed, "meta-dropout")
    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(meta_ds.y.shape[0])
        for lo in range(0, perm.shape[0], config.batch_size):
            rows = perm[lo:lo + config.batch_size]
            logits, _ = attention_forward(meta, meta_ds.y[rows],
                                          training=True, rng=dropout_rng)
            loss = ops.cross_entropy(logits, meta_ds.labels[rows])
            store.zero_grad()
            loss.backward()
            optim.step()
    return meta


def _run_full_task(args: tuple) -> tuple:
    kind, tensors, config = args
    model = train_gnn(kind, tensors, config)
    return kind, model.params.arrays(), model.config, model.train_losses


def retrain_base_full(tensors: list[GraphTensors], config: GnnConfig,
                      seed: int, kinds: tuple[str, ...] = KINDS,
                      jobs: int = 1) -> dict[str, GnnModel]:
    """Train one deployment model per kind on the whole train split."""
    tasks = [(kind, tensors,
              replace(config, seed=derive_seed(seed, "full", kind)))
             for kind in kinds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_full_task, tasks))
    else:
        results = [_run_full_task(t) for t in tasks]
    models = {}
    for kind, arrays, task_config, losses in results:
        store = init_gnn_params_like(kind, task_config, arrays)
        models[kind] = GnnModel(kind=kind, params=store, config=task_config,
                                train_losses=losses)
    return models


def init_gnn_params_like(kind: str, config: GnnConfig,
                         arrays: dict[str, np.ndarray]) -> dm.ParamStore:
    in_dim = arrays["layer0.w1" if kind == "gin" else "layer0.w"].shape[0]
    store = init_gnn_params(kind, config.seed, in_dim=in_dim)
    store.load_arrays(arrays)
    return store


@dataclass
class EnsemblePrediction:
    probs: np.ndarray
    label: int
    alphas: np.ndarray
    base_probs: dict[str, np.ndarray]


def ensemble_predict(models: dict[str, GnnModel], meta: MetaLearner,
                     gt: GraphTensors) -> EnsemblePrediction:
    """Eval-mode ensemble prediction for one graph."""
    if tuple(models) != meta.kinds:
        raise ValueError(
            f"kind order mismatch: models {tuple(models)} vs meta {meta.kinds}")
    base_probs = {kind: predict_proba(models[kind], gt) for kind in meta.kinds}
    y = np.concatenate([base_probs[kind] for kind in meta.kinds])[None, :]
    logits, alphas = attention_forward(meta, y, training=False)
    z = logits.value[0]
    shifted = np.exp(z - z.max())
    probs = shifted / shifted.sum()
    return EnsemblePrediction(probs=probs, label=predict_label(probs),
                              alphas=alphas.value[0],
                              base_probs=base_probs)


def save_meta(meta: MetaLearner, path: str) -> None:
    dm.save_checkpoint(path, "meta-attention", meta.params,
                       {"kinds": list(meta.kinds),
                        "config": meta.config.as_dict()})


def load_meta(path: str) -> MetaLearner:
    _, arrays, meta_info = dm.load_checkpoint(path, expected_kind="meta-attention")
    kinds = tuple(meta_info.get("kinds", list(KINDS)))
    config = MetaConfig.from_dict(meta_info.get("config", {}))
    store = init_meta_params(config.seed, n_kinds=len(kinds))
    store.load_arrays(arrays)
    return MetaLearner(params=store, kinds=kinds, config=config)


# --- bundle ---------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "cfgstack-bundle"
MANIFEST_VERSION = 1


@dataclass
class Bundle:
    """A self-contained trained pipeline loaded from disk."""

    encoder: object
    models: dict[str, GnnModel]
    meta: MetaLearner
    manifest: dict


def save_bundle(out_dir: str, encoder, models: dict[str, GnnModel],
                meta: MetaLearner, seed: int, config_payload: dict) -> dict:
    """Write encoder, base, and meta checkpoints plus a hashed manifest."""
    import os

    from .autoencoder import save_autoencoder
    from .gnn import save_gnn
    from .serialize import canonical_json, config_hash, sha256_hex

    if tuple(models) != meta.kinds:
        raise ValueError("bundle kind order must match the meta-learner")
    os.makedirs(out_dir, exist_ok=True)
    save_autoencoder(encoder, os.path.join(out_dir, "ae.json"))
    for kind, model in models.items():
        save_gnn(model, os.path.join(out_dir, f"{kind}.json"))
    save_meta(meta, os.path.join(out_dir, "meta.json"))

    files = {}
    for name in ["ae.json", *(f"{k}.json" for k in meta.kinds), "meta.json"]:
        with open(os.path.join(out_dir, name), "rb") as fh:
            files[name] = sha256_hex(fh.read())
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "kinds": list(meta.kinds),
        "seed": int(seed),
        "config": config_payload,
        "config_hash": config_hash(config_payload),
        "files": files,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(manifest))
        fh.write("\n")
    return manifest


def load_bundle(bundle_dir: str) -> Bundle:
    """Load a bundle, verifying checksums and kind-order consistency."""
    import json
    import os

    from .autoencoder import load_autoencoder
    from .gnn import load_gnn
    from .serialize import sha256_hex

    manifest_path = os.path.join(bundle_dir, MANIFEST_NAME)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{manifest_path}: not a model bundle manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(
            f"{manifest_path}: unsupported bundle version "
            f"{manifest.get('version')!r}")
    for name, expected in manifest["files"].items():
        with open(os.path.join(bundle_dir, name), "rb") as fh:
            actual = sha256_hex(fh.read())
        if actual != expected:
            raise ValueError(f"{name}: checksum mismatch, bundle is corrupt")

    kinds = tuple(manifest["kinds"])
    encoder = load_autoencoder(os.path.join(bundle_dir, "ae.json"))
    models = {kind: load_gnn(os.path.join(bundle_dir, f"{kind}.json"),
                             expected_kind=kind)
              for kind in kinds}
    meta = load_meta(os.path.join(bundle_dir, "meta.json"))
    if meta.kinds != kinds:
        raise ValueError(
            f"kind order mismatch: manifest {kinds} vs meta {meta.kinds}")
    return Bundle(encoder=encoder, models=models, meta=meta,
                  manifest=manifest)
