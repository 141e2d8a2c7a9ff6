"""Checked-in fixture files pin the on-disk formats against drift."""

import json
import os

import numpy as np

from cfgstack.corpus import featurize_corpus, load_corpus, write_corpus
from cfgstack.isa import VECTOR_DIM, encode_instruction, parse_instruction_record

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def test_golden_corpus_loads_and_round_trips(tmp_path):
    path = os.path.join(GOLDEN, "corpus_small.jsonl")
    corpus = load_corpus(path)
    assert [g.id for g in corpus.graphs] == [
        "train-mal-0", "train-ben-0", "train-mal-1", "train-ben-1",
        "test-x-0", "test-ben-0"]
    assert [g.label for g in corpus.train] == [1, 0, 1, 0]
    assert [g.label for g in corpus.test] == [1, 0]
    assert corpus.graphs[2].edge_count == 0
    assert corpus.graphs[4].x.shape == (2, 4)
    assert corpus.graphs[5].edges.tolist() == [[0, 0]]

    out = tmp_path / "rewritten.jsonl"
    write_corpus(corpus, str(out))
    assert out.read_bytes() == open(path, "rb").read()


def test_golden_instruction_encodings():
    with open(os.path.join(GOLDEN, "encodings.json")) as fh:
        cases = json.load(fh)
    assert len(cases) >= 4
    for case in cases:
        vec = encode_instruction(parse_instruction_record(case["record"]))
        assert vec.shape == (VECTOR_DIM,)
        assert np.nonzero(vec)[0].tolist() == case["ones"]
        assert set(np.unique(vec)) <= {0.0, 1.0}


def test_golden_corpus_featurizes(stub_encoder):
    corpus = load_corpus(os.path.join(GOLDEN, "corpus_small.jsonl"))
    feat = featurize_corpus(corpus, stub_encoder)
    for graph in feat.graphs:
        assert graph.blocks is None
        assert graph.x.shape[1] in (4, 64)
    # the x-payload graph passes through untouched
    assert feat.graphs[4].x.shape == (2, 4)
