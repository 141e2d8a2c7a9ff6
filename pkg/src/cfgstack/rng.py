"""Deterministic RNG derivation.

Every stochastic component (init, shuffling, dropout, synthetic data) draws
from its own counter-based Philox stream derived from (master seed, labels),
so results do not depend on execution order across models, folds, or jobs.
"""

import hashlib

import numpy as np


def _label_key(label):
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed_sequence(master_seed, *labels):
    keys = tuple(_label_key(label) for label in labels)
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=keys)


def derive_rng(master_seed, *labels):
    return np.random.Generator(np.random.Philox(derive_seed_sequence(master_seed, *labels)))


def derive_seed(master_seed, *labels):
    """A plain integer sub-seed, for components that take seeds not rngs."""
    state = derive_seed_sequence(master_seed, *labels).generate_state(1, np.uint64)
    return int(state[0] >> 1)
