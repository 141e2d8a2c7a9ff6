"""Shared fixtures: tiny deterministic corpora and a stub block encoder."""

import numpy as np
import pytest

from cfgstack.corpus import SynthSpec, generate_synthetic_corpus
from cfgstack.gnn import GraphTensors
from cfgstack.isa import VECTOR_DIM
from cfgstack.rng import derive_rng


class StubEncoder:
    """Fixed random projection standing in for a trained autoencoder."""

    def __init__(self, seed=123, latent=64):
        rng = derive_rng(seed, "stub-encoder")
        self.w = rng.standard_normal((VECTOR_DIM, latent)) / np.sqrt(VECTOR_DIM)

    def encode_batch(self, vectors):
        return np.maximum(np.asarray(vectors, dtype=np.float64) @ self.w, 0.0)

    def encode(self, vector):
        return self.encode_batch(np.asarray(vector)[None, :])[0]


@pytest.fixture(scope="session")
def stub_encoder():
    return StubEncoder()


@pytest.fixture(scope="session")
def tiny_corpus():
    """24 graphs, balanced, stratified 80/20 split."""
    return generate_synthetic_corpus(SynthSpec(n_graphs=24), seed=5)


def random_graph_tensors(rng, n=None, density=0.4, in_dim=6, label=0,
                         graph_id="g"):
    """Small random digraph with features, no duplicate edges or self loops."""
    if n is None:
        n = int(rng.integers(2, 7))
    edges = [(i, j) for i in range(n) for j in range(n)
             if i != j and rng.random() < density]
    x = rng.standard_normal((n, in_dim))
    if edges:
        arr = np.asarray(edges, dtype=np.int64)
        src, dst = arr[:, 0], arr[:, 1]
    else:
        src = dst = np.zeros(0, dtype=np.int64)
    return GraphTensors.from_arrays(graph_id, x, src, dst, label=label)
