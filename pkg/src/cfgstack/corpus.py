"""Labeled control-flow-graph corpora.

A corpus is a list of directed graphs whose nodes are basic blocks.
Node payloads are either raw instruction blocks (lists of decomposed
instruction records) or precomputed feature rows.  The on-disk format
is line-delimited JSON, one graph per line, with canonical field order
and 17-significant-digit floats so that writes are byte-reproducible.

The synthetic generator fabricates two classes that differ in both
structure (benign: shallow branching; malicious: dense loop clusters
and long jumps) and instruction mix (distinct per-class template
palettes), so graph classifiers of different biases can all find
signal.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .isa import (
    VECTOR_DIM,
    InstructionRecord,
    encode_block,
    instruction_record_fields,
    parse_instruction_record,
)
from .rng import derive_rng
from .serialize import canonical_json

LABEL_BENIGN = 0
LABEL_MALICIOUS = 1


@dataclass
class CfgGraph:
    """One directed CFG with a class label and per-node payload.

    Exactly one of `blocks` (lists of InstructionRecord, one list per
    node) and `x` (node feature matrix) is set.  Edge index k is the
    position of the (src, dst) pair in `edges`, which preserves file
    order.
    """

    id: str
    label: int
    edges: np.ndarray
    blocks: list[list[InstructionRecord]] | None = None
    x: np.ndarray | None = None
    split: str = "train"

    @property
    def node_count(self) -> int:
        if self.blocks is not None:
            return len(self.blocks)
        return 0 if self.x is None else self.x.shape[0]

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def validate(self) -> None:
        if self.label not in (LABEL_BENIGN, LABEL_MALICIOUS):
            raise ValueError(f"graph {self.id}: label must be 0 or 1")
        if self.split not in ("train", "test"):
            raise ValueError(f"graph {self.id}: split must be train or test")
        if (self.blocks is None) == (self.x is None):
            raise ValueError(
                f"graph {self.id}: exactly one of blocks and x must be set")
        n = self.node_count
        if n < 1:
            raise ValueError(f"graph {self.id}: at least one node required")
        if self.edges.ndim != 2 or self.edges.shape[1] != 2:
            raise ValueError(f"graph {self.id}: edges must be (m, 2)")
        if self.edge_count:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError(f"graph {self.id}: node index out of range")
            pairs = set()
            for src, dst in self.edges.tolist():
                if (src, dst) in pairs:
                    raise ValueError(
                        f"graph {self.id}: duplicate edge ({src}, {dst})")
                pairs.add((src, dst))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CfgGraph):
            return NotImplemented
        if (self.id, self.label, self.split) != (other.id, other.label,
                                                 other.split):
            return False
        if not np.array_equal(self.edges, other.edges):
            return False
        if (self.blocks is None) != (other.blocks is None):
            return False
        if self.blocks is not None:
            return self.blocks == other.blocks
        return np.array_equal(self.x, other.x)


@dataclass
class Corpus:
    """Immutable-after-load graph collection with train/test tags."""

    graphs: list[CfgGraph] = field(default_factory=list)

    def validate(self) -> None:
        seen: set[str] = set()
        for g in self.graphs:
            if g.id in seen:
                raise ValueError(f"duplicate graph id {g.id!r}")
            seen.add(g.id)
            g.validate()
        train_labels = {g.label for g in self.graphs if g.split == "train"}
        if train_labels and train_labels != {LABEL_BENIGN, LABEL_MALICIOUS}:
            raise ValueError("train split must contain both classes")

    def split(self, tag: str) -> list[CfgGraph]:
        return [g for g in self.graphs if g.split == tag]

    @property
    def train(self) -> list[CfgGraph]:
        return self.split("train")

    @property
    def test(self) -> list[CfgGraph]:
        return self.split("test")

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.graphs == other.graphs


def _graph_to_obj(graph: CfgGraph) -> dict:
    obj: dict = {"id": graph.id, "label": graph.label, "split": graph.split}
    if graph.blocks is not None:
        obj["nodes"] = {
            "blocks": [[instruction_record_fields(i) for i in block]
                       for block in graph.blocks]
        }
    else:
        obj["nodes"] = {"x": graph.x}
    obj["edges"] = [[int(s), int(d)] for s, d in graph.edges.tolist()]
    return obj


def _graph_from_obj(obj: dict) -> CfgGraph:
    for key in ("id", "label", "nodes", "edges"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    nodes = obj["nodes"]
    if not isinstance(nodes, dict) or len(set(nodes) & {"blocks", "x"}) != 1:
        raise ValueError("nodes must carry exactly one of 'blocks' or 'x'")
    blocks = None
    x = None
    if "blocks" in nodes:
        blocks = [[parse_instruction_record(f) for f in block]
                  for block in nodes["blocks"]]
    else:
        try:
            x = np.asarray(nodes["x"], dtype=np.float64)
        except ValueError as exc:
            raise ValueError("node feature rows must have uniform length") from exc
        if x.ndim != 2:
            raise ValueError("node feature rows must have uniform length")
    edges = np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2)
    graph = CfgGraph(id=str(obj["id"]), label=int(obj["label"]), edges=edges,
                     blocks=blocks, x=x, split=str(obj.get("split", "train")))
    graph.validate()
    return graph


def write_corpus(corpus: Corpus, path: str) -> None:
    """Write one graph per line with canonical field order and floats."""
    with open(path, "w", encoding="utf-8") as fh:
        for graph in corpus.graphs:
            fh.write(canonical_json(_graph_to_obj(graph)))
            fh.write("\n")


def load_corpus(path: str) -> Corpus:
    """Load and validate a corpus file; errors carry the line number."""
    graphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                graphs.append(_graph_from_obj(obj))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    corpus = Corpus(graphs)
    corpus.validate()
    return corpus


# --- synthetic generation ----------------------------------------------

def _t(opcode, prefix=None, modrm=None, sib=None, disp=None, imm=None):
    fields = {"opcode": opcode}
    if prefix is not None:
        fields["prefix"] = prefix
    if modrm is not None:
        fields["modrm"] = {"mod": modrm[0], "reg": modrm[1], "rm": modrm[2]}
    if sib is not None:
        fields["sib"] = {"scale": sib[0], "index": sib[1], "base": sib[2]}
    if disp is not None:
        fields["disp"] = disp
    if imm is not None:
        fields["imm"] = imm
    return parse_instruction_record(fields)


# Fixed instruction template palettes.  Shared templates are common
# glue both classes use; the class palettes differ in opcode choice,
# prefix usage, and displacement/immediate magnitudes.
SHARED_TEMPLATES = (
    _t(0x90),
    _t(0x55),
    _t(0x5D),
    _t(0xC3),
    _t(0x89, modrm=(3, 4, 5)),
    _t(0x89, modrm=(3, 0, 1)),
    _t(0x8B, modrm=(1, 0, 5), disp=8),
    _t(0x01, modrm=(3, 0, 3)),
    _t(0x29, modrm=(3, 1, 0)),
    _t(0x39, modrm=(3, 2, 1)),
    _t(0x85, modrm=(3, 0, 0)),
    _t(0xEB, disp=0x10),
    _t(0xE8, disp=0x40),
    _t(0x8D, modrm=(1, 3, 4), sib=(0, 4, 5), disp=8),
    _t(0xB8, imm=1),
    _t(0x87, modrm=(3, 1, 2)),
)

BENIGN_TEMPLATES = (
    _t(0x03, modrm=(3, 0, 2)),
    _t(0x2B, modrm=(3, 3, 1)),
    _t(0x83, modrm=(3, 0, 0), imm=4),
    _t(0x83, modrm=(3, 5, 4), imm=8),
    _t(0x8B, modrm=(1, 1, 5), disp=16),
    _t(0x8B, modrm=(1, 2, 5), disp=24),
    _t(0x89, modrm=(1, 0, 5), disp=12),
    _t(0x6B, modrm=(3, 0, 0), imm=3),
    _t(0xB8, imm=2),
    _t(0xB9, imm=6),
    _t(0x50),
    _t(0x58),
    _t(0x3B, modrm=(3, 0, 6), prefix=1),
    _t(0x63, modrm=(3, 1, 1), prefix=1),
    _t(0x88, modrm=(1, 0, 6), disp=4),
    _t(0x8A, modrm=(1, 3, 6), disp=2),
    _t(0xC6, modrm=(1, 0, 5), disp=6, imm=0),
    _t(0x04, imm=1),
    _t(0x2C, imm=2),
    _t(0x7E, disp=0x08),
)

MALICIOUS_TEMPLATES = (
    _t(0x31, modrm=(3, 0, 0)),
    _t(0x31, modrm=(3, 1, 1)),
    _t(0x81, modrm=(3, 6, 0), imm=0xDEADBEEF),
    _t(0x81, modrm=(3, 6, 2), imm=0x5A827999),
    _t(0xC1, modrm=(3, 0, 0), imm=7),
    _t(0xC1, modrm=(3, 1, 2), imm=13),
    _t(0xFF, modrm=(2, 2, 4), sib=(3, 1, 0), disp=0x404040),
    _t(0xFF, modrm=(2, 4, 4), sib=(3, 2, 3), disp=0x10000),
    _t(0xE9, disp=0x8000),
    _t(0xE9, disp=0xFFF0),
    _t(0x0F, prefix=5),
    _t(0x0F, prefix=6),
    _t(0xF7, modrm=(3, 2, 0), prefix=5),
    _t(0xD3, modrm=(3, 4, 1), prefix=6),
    _t(0x8F, modrm=(0, 0, 4), sib=(3, 3, 3)),
    _t(0xEC, prefix=7),
    _t(0x64, prefix=7),
    _t(0xAB, prefix=6),
    _t(0x35, imm=0x8F1BBCDC),
    _t(0x3D, imm=0xCA62C1D6),
)


def _fixed_block_patterns() -> tuple[list[list[InstructionRecord]],
                                     list[list[InstructionRecord]]]:
    # Blocks are drawn from a finite pattern set (not free template
    # mixes) so the corpus holds a small number of distinct block
    # vectors inside a rank-56 span; the 64-wide autoencoder can then
    # drive reconstruction error very low within a desk-scale budget.
    rng = derive_rng(0x5EED, "block-patterns")
    per_class = []
    for own in (BENIGN_TEMPLATES, MALICIOUS_TEMPLATES):
        patterns = []
        for _ in range(24):
            length = int(rng.integers(3, 9))
            block = []
            for _ in range(length):
                if rng.random() < 0.45:
                    pool = SHARED_TEMPLATES
                else:
                    pool = own
                block.append(pool[int(rng.integers(len(pool)))])
            patterns.append(block)
        per_class.append(patterns)
    return per_class[0], per_class[1]


BENIGN_BLOCK_PATTERNS, MALICIOUS_BLOCK_PATTERNS = _fixed_block_patterns()


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic corpus generator."""

    n_graphs: int = 400
    balance: float = 0.5
    train_fraction: float = 0.8

    def validate(self) -> None:
        if self.n_graphs < 1:
            raise ValueError("n_graphs must be >= 1")
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError("balance must be in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def _add_edge(edges: list[tuple[int, int]], seen: set, src: int, dst: int) -> None:
    if src == dst or (src, dst) in seen:
        return
    seen.add((src, dst))
    edges.append((src, dst))


def _benign_structure(rng: np.random.Generator) -> tuple[int, list[tuple[int, int]]]:
    # Straight segments with one or two if/else diamonds; rare single
    # back edge.  Low loop density overall.
    edges: list[tuple[int, int]] = []
    seen: set = set()
    n = 0
    tails = []
    segment_count = int(rng.integers(4, 7))
    diamonds = int(rng.integers(1, 3))
    diamond_at = set(rng.choice(segment_count, size=diamonds, replace=False).tolist())
    prev_tail = None
    for s in range(segment_count):
        if s in diamond_at:
            a, b, c, d = n, n + 1, n + 2, n + 3
            n += 4
            for src, dst in ((a, b), (a, c), (b, d), (c, d)):
                _add_edge(edges, seen, src, dst)
            head, tail = a, d
        else:
            length = int(rng.integers(1, 3))
            head = n
            for i in range(length - 1):
                _add_edge(edges, seen, n + i, n + i + 1)
            n += length
            tail = n - 1
        if prev_tail is not None:
            _add_edge(edges, seen, prev_tail, head)
        tails.append(tail)
        prev_tail = tail
    if rng.random() < 0.15 and len(tails) >= 2:
        _add_edge(edges, seen, tails[-1], tails[0])
    return n, edges


def _malicious_structure(rng: np.random.Generator) -> tuple[int, list[tuple[int, int]]]:
    # Dense loop clusters chained along a spine, plus long jumps.
    edges: list[tuple[int, int]] = []
    seen: set = set()
    n = 0
    heads = []
    tails = []
    cluster_count = int(rng.integers(3, 5))
    prev_tail = None
    for _ in range(cluster_count):
        size = int(rng.integers(2, 5))
        head = n
        for i in range(size - 1):
            _add_edge(edges, seen, n + i, n + i + 1)
        tail = n + size - 1
        _add_edge(edges, seen, tail, head)
        if size >= 3:
            _add_edge(edges, seen, n + 1, head)
            if rng.random() < 0.5:
                _add_edge(edges, seen, tail, n + 1)
        n += size
        if prev_tail is not None:
            _add_edge(edges, seen, prev_tail, head)
        heads.append(head)
        tails.append(tail)
        prev_tail = tail
    jumps = int(rng.integers(1, 3))
    for _ in range(jumps):
        src = int(rng.integers(0, max(1, n // 2)))
        dst = int(rng.integers(n // 2, n))
        _add_edge(edges, seen, src, dst)
    return n, edges


def _make_graph(index: int, label: int, seed: int) -> CfgGraph:
    rng = derive_rng(seed, "graph", index)
    if label == LABEL_MALICIOUS:
        n, edges = _malicious_structure(rng)
        patterns = MALICIOUS_BLOCK_PATTERNS
    else:
        n, edges = _benign_structure(rng)
        patterns = BENIGN_BLOCK_PATTERNS
    blocks = [list(patterns[int(rng.integers(len(patterns)))])
              for _ in range(n)]
    edge_arr = (np.asarray(edges, dtype=np.int64).reshape(-1, 2)
                if edges else np.zeros((0, 2), dtype=np.int64))
    return CfgGraph(id=f"g{index:05d}", label=label, edges=edge_arr,
                    blocks=blocks)


def generate_synthetic_corpus(spec: SynthSpec, seed: int) -> Corpus:
    """Deterministically fabricate a labeled two-class corpus.

    Graph i depends only on (spec, seed, i); the train/test tag is an
    80/20 (by default) stratified assignment drawn from its own seeded
    stream.
    """
    spec.validate()
    n_mal = int(round(spec.n_graphs * spec.balance))
    labels = [LABEL_MALICIOUS] * n_mal
    labels += [LABEL_BENIGN] * (spec.n_graphs - n_mal)
    graphs = [_make_graph(i, lab, seed) for i, lab in enumerate(labels)]

    split_rng = derive_rng(seed, "split")
    for label in (LABEL_BENIGN, LABEL_MALICIOUS):
        idx = [i for i, g in enumerate(graphs) if g.label == label]
        order = split_rng.permutation(len(idx))
        n_train = int(round(spec.train_fraction * len(idx)))
        for rank, pos in enumerate(order.tolist()):
            graphs[idx[pos]] = replace(
                graphs[idx[pos]],
                split="train" if rank < n_train else "test")
    corpus = Corpus(graphs)
    corpus.validate()
    return corpus


def corpus_stats(corpus: Corpus) -> dict:
    """Per-class counts and size statistics for operator output."""
    stats: dict = {}
    for label, name in ((LABEL_BENIGN, "benign"), (LABEL_MALICIOUS, "malicious")):
        subset = [g for g in corpus.graphs if g.label == label]
        if not subset:
            stats[name] = {"graphs": 0}
            continue
        nodes = np.array([g.node_count for g in subset])
        edges = np.array([g.edge_count for g in subset])
        stats[name] = {
            "graphs": len(subset),
            "train": sum(1 for g in subset if g.split == "train"),
            "test": sum(1 for g in subset if g.split == "test"),
            "nodes_mean": float(nodes.mean()),
            "nodes_min": int(nodes.min()),
            "nodes_max": int(nodes.max()),
            "edges_mean": float(edges.mean()),
        }
    return stats


# --- folds --------------------------------------------------------------

@dataclass(frozen=True)
class FoldPartition:
    """Assignment of every train graph id to one of k folds."""

    k: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [gid for gid, f in self.assignment.items() if f == fold]


def stratify_ids(pairs: list[tuple[str, int]], k: int, seed: int) -> FoldPartition:
    """Seeded stratified partition of (id, label) pairs into k folds.

    Within each class the shuffled members are dealt round-robin, so
    per-fold class counts differ by at most one from perfect
    stratification.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    assignment: dict[str, int] = {}
    rng = derive_rng(seed, "folds")
    for label in (LABEL_BENIGN, LABEL_MALICIOUS):
        ids = [gid for gid, lab in pairs if lab == label]
        if len(ids) < k:
            raise ValueError(
                f"class {label} has {len(ids)} train graphs, fewer than k={k}")
        order = rng.permutation(len(ids))
        for rank, pos in enumerate(order.tolist()):
            assignment[ids[pos]] = rank % k
    return FoldPartition(k=k, assignment=assignment)


def stratified_kfold(corpus: Corpus, k: int, seed: int) -> FoldPartition:
    """Stratified k folds over the corpus train split."""
    return stratify_ids([(g.id, g.label) for g in corpus.train], k, seed)


# --- featurization -------------------------------------------------------

def block_vectors(corpus: Corpus, split: str | None = "train",
                  max_vectors: int | None = None,
                  seed: int = 0, agg_mode: str = "mean") -> np.ndarray:
    """Collect pooled block vectors for autoencoder training.

    Empty blocks contribute zero vectors (with a warning), matching
    the featurization policy.
    """
    rows = []
    for graph in corpus.graphs:
        if split is not None and graph.split != split:
            continue
        if graph.blocks is None:
            raise ValueError(f"graph {graph.id} carries no instruction blocks")
        for node, block in enumerate(graph.blocks):
            if not block:
                warnings.warn(
                    f"graph {graph.id} node {node}: empty basic block, "
                    "using zero vector")
                rows.append(np.zeros(VECTOR_DIM))
            else:
                rows.append(encode_block(block, agg_mode))
    vectors = np.asarray(rows, dtype=np.float64)
    if max_vectors is not None and vectors.shape[0] > max_vectors:
        rng = derive_rng(seed, "ae-subsample")
        keep = rng.choice(vectors.shape[0], size=max_vectors, replace=False)
        vectors = vectors[np.sort(keep)]
    return vectors


def build_feature_matrix(graph: CfgGraph, encoder, agg_mode: str = "mean") -> np.ndarray:
    """Encode every node's pooled block vector into the latent space.

    `encoder` is any object with encode_batch(matrix) -> matrix; row k
    of the result is the embedding of node k's aggregated block.
    """
    if graph.blocks is None:
        raise ValueError(f"graph {graph.id} carries no instruction blocks")
    pooled = np.zeros((len(graph.blocks), VECTOR_DIM))
    for node, block in enumerate(graph.blocks):
        if not block:
            warnings.warn(
                f"graph {graph.id} node {node}: empty basic block, "
                "using zero vector")
        else:
            pooled[node] = encode_block(block, agg_mode)
    return encoder.encode_batch(pooled)


def featurize_corpus(corpus: Corpus, encoder, agg_mode: str = "mean") -> Corpus:
    """Return a corpus with instruction payloads replaced by features."""
    graphs = []
    for graph in corpus.graphs:
        if graph.x is not None:
            graphs.append(graph)
            continue
        x = build_feature_matrix(graph, encoder, agg_mode)
        graphs.append(replace(graph, blocks=None, x=x))
    return Corpus(graphs)
