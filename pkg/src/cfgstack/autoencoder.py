"""Symmetric autoencoder producing 64-dim node embeddings.

The stack is 439-256-128-64-128-256-439 with ReLU after every layer
except the final reconstruction, trained with per-sample squared-norm
MSE and Adam.  The 64-dim encoder output is the node feature used by
the graph classifiers downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .diffmath import ops
from .isa import VECTOR_DIM
from .rng import derive_rng

LATENT_DIM = 64
_WIDTHS = (VECTOR_DIM, 256, 128, LATENT_DIM, 128, 256, VECTOR_DIM)
_ENCODER_LAYERS = 3


@dataclass(frozen=True)
class AeConfig:
    epochs: int = 5000
    lr: float = 1e-4
    val_fraction: float = 0.1
    batch_size: int = 64
    seed: int = 0
    # Adam with a constant step bounces around its loss floor at the
    # 1e-6..1e-4 scale, so the final-epoch value would be a lottery;
    # cosine decay to zero lets the run actually settle.
    lr_schedule: str = "cosine"

    @staticmethod
    def full_profile(**overrides) -> "AeConfig":
        return AeConfig(**overrides)

    @staticmethod
    def desk_profile(**overrides) -> "AeConfig":
        overrides.setdefault("epochs", 500)
        return AeConfig(**overrides)

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / self.epochs))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_ae_params(seed: int) -> dm.ParamStore:
    rng = derive_rng(seed, "ae-init")
    store = dm.ParamStore()
    for i in range(len(_WIDTHS) - 1):
        store.add(f"layer{i}.w", glorot(rng, _WIDTHS[i], _WIDTHS[i + 1]))
        store.add(f"layer{i}.b", np.zeros((1, _WIDTHS[i + 1])))
    return store


@dataclass
class Autoencoder:
    """Trained encoder/decoder pair plus training metadata."""

    params: dm.ParamStore
    config: AeConfig
    epochs_run: int = 0
    final_val_mse: float = float("nan")
    val_trajectory: list[float] = field(default_factory=list)

    def _arrays(self) -> dict[str, np.ndarray]:
        return self.params.arrays()

    def _forward_numpy(self, x: np.ndarray, upto: int) -> np.ndarray:
        arrs = self._arrays()
        h = x
        for i in range(upto):
            h = h @ arrs[f"layer{i}.w"] + arrs[f"layer{i}.b"]
            if i < len(_WIDTHS) - 2:
                h = np.maximum(h, 0.0)
        return h

    def encode_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != VECTOR_DIM:
            raise ValueError(f"expected (n, {VECTOR_DIM}) input")
        return self._forward_numpy(x, _ENCODER_LAYERS)

    def encode(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (VECTOR_DIM,):
            raise ValueError(f"expected length-{VECTOR_DIM} vector")
        return self.encode_batch(v[None, :])[0]

    def reconstruct_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != VECTOR_DIM:
            raise ValueError(f"expected (n, {VECTOR_DIM}) input")
        return self._forward_numpy(x, len(_WIDTHS) - 1)

    def reconstruct(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (VECTOR_DIM,):
            raise ValueError(f"expected length-{VECTOR_DIM} vector")
        return self.reconstruct_batch(v[None, :])[0]


def ae_forward(store: dm.ParamStore, x: dm.Tensor) -> dm.Tensor:
    h = x
    for i in range(len(_WIDTHS) - 1):
        h = ops.linear(h, store[f"layer{i}.w"], store[f"layer{i}.b"])
        if i < len(_WIDTHS) - 2:
            h = ops.relu(h)
    return h


def batch_mse(model: Autoencoder, x: np.ndarray) -> float:
    recon = model.reconstruct_batch(x)
    diff = recon - x
    return float(np.mean(np.sum(diff * diff, axis=1)))


def train_autoencoder(vectors: np.ndarray, config: AeConfig) -> Autoencoder:
    """Train on pooled block vectors; deterministic given config.seed.

    A seeded validation slice is held out and its MSE recorded every
    epoch; no early stopping is applied.
    """
    config.validate()
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != VECTOR_DIM:
        raise ValueError(f"expected (n, {VECTOR_DIM}) vectors")
    if vectors.shape[0] < 2:
        raise ValueError("need at least 2 vectors to hold out validation")

    split_rng = derive_rng(config.seed, "ae-valsplit")
    order = split_rng.permutation(vectors.shape[0])
    n_val = max(1, int(round(vectors.shape[0] * config.val_fraction)))
    n_val = min(n_val, vectors.shape[0] - 1)
    val = vectors[order[:n_val]]
    train = vectors[order[n_val:]]

    store = init_ae_params(config.seed)
    model = Autoencoder(params=store, config=config)
    optim = dm.Adam(store, lr=config.lr)
    shuffle_rng = derive_rng(config.seed, "ae-shuffle")

    model.val_trajectory.append(batch_mse(model, val))
    for epoch in range(config.epochs):
        optim.lr = config.lr_at(epoch)
        perm = shuffle_rng.permutation(train.shape[0])
        for lo in range(0, train.shape[0], config.batch_size):
            batch = train[perm[lo:lo + config.batch_size]]
            xt = dm.const(batch)
            loss = ops.mse(ae_forward(store, xt), batch)
            store.zero_grad()
            loss.backward()
            optim.step()
        model.val_trajectory.append(batch_mse(model, val))
        model.epochs_run += 1
    model.final_val_mse = model.val_trajectory[-1]
    return model


def save_autoencoder(model: Autoencoder, path: str) -> None:
    meta = {
        "epochs_run": model.epochs_run,
        "final_val_mse": model.final_val_mse,
        "config": {
            "epochs": model.config.epochs,
            "lr": model.config.lr,
            "val_fraction": model.config.val_fraction,
            "batch_size": model.config.batch_size,
            "seed": model.config.seed,
            "lr_schedule": model.config.lr_schedule,
        },
    }
    dm.save_checkpoint(path, "autoencoder", model.params, meta)


def load_autoencoder(path: str) -> Autoencoder:
    _, arrays, meta = dm.load_checkpoint(path, expected_kind="autoencoder")
    cfg = meta.get("config", {})
    config = AeConfig(epochs=int(cfg.get("epochs", 0)),
                      lr=float(cfg.get("lr", 1e-4)),
                      val_fraction=float(cfg.get("val_fraction", 0.1)),
                      batch_size=int(cfg.get("batch_size", 64)),
                      seed=int(cfg.get("seed", 0)),
                      lr_schedule=str(cfg.get("lr_schedule", "cosine")))
    store = init_ae_params(config.seed)
    store.load_arrays(arrays)
    model = Autoencoder(params=store, config=config,
                        epochs_run=int(meta.get("epochs_run", 0)),
                        final_val_mse=float(meta.get("final_val_mse", "nan")))
    return model
