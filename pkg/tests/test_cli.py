"""End-to-end CLI runs on a tiny corpus: artifacts, schemas, determinism."""

import csv
import json
import os
from collections import Counter

import pytest

from cfgstack import cli
from cfgstack.cli import (EXPLAIN_HEADER, FIDELITY_HEADER, PREDICT_HEADER,
                          ROC_HEADER)
from cfgstack.metrics import EVAL_CSV_HEADER
from cfgstack.serialize import sha256_hex

TRAIN_FLAGS = ["--folds", "3", "--epochs", "2", "--ae-epochs", "30",
               "--meta-epochs", "10", "--seed", "11"]


def run(argv):
    code = cli.main(argv)
    assert code == 0, f"cfgstack {' '.join(argv)} exited {code}"


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return tuple(rows[0]), rows[1:]


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = str(root / "corpus.jsonl")
    bundle = str(root / "bundle")
    run(["gensynth", "--n", "24", "--seed", "11", "--out", corpus])
    run(["train", "--corpus", corpus, "--out", bundle, *TRAIN_FLAGS])
    return {"root": root, "corpus": corpus, "bundle": bundle}


def test_gensynth_artifacts_and_determinism(pipeline, tmp_path):
    corpus = pipeline["corpus"]
    manifest = json.loads(open(corpus + ".manifest.json").read())
    assert manifest["format"] == "cfgstack-manifest"
    assert manifest["command"] == "gensynth"
    digest = sha256_hex(open(corpus, "rb").read())
    assert manifest["files"][os.path.basename(corpus)] == digest

    again = str(tmp_path / "again.jsonl")
    run(["gensynth", "--n", "24", "--seed", "11", "--out", again])
    assert open(again, "rb").read() == open(corpus, "rb").read()
    other = str(tmp_path / "other.jsonl")
    run(["gensynth", "--n", "24", "--seed", "12", "--out", other])
    assert open(other, "rb").read() != open(corpus, "rb").read()


def test_train_bundle_layout(pipeline):
    names = sorted(os.listdir(pipeline["bundle"]))
    assert names == ["ae.json", "gat.json", "gcn.json", "gin.json",
                     "manifest.json", "meta.json"]
    manifest = json.loads(open(os.path.join(pipeline["bundle"],
                                            "manifest.json")).read())
    assert manifest["format"] == "cfgstack-bundle"
    assert manifest["kinds"] == ["gcn", "gin", "gat"]
    assert manifest["seed"] == 11


def test_predict_schema_and_reruns(pipeline, tmp_path):
    out = str(tmp_path / "pred.csv")
    run(["predict", "--bundle", pipeline["bundle"],
         "--corpus", pipeline["corpus"], "--out", out, "--seed", "11"])
    header, rows = read_csv(out)
    assert header == PREDICT_HEADER
    assert len(rows) == 24
    for row in rows:
        p0, p1 = float(row[1]), float(row[2])
        assert p0 + p1 == pytest.approx(1.0, abs=1e-9)
        assert row[3] in ("0", "1")
        alphas = [float(v) for v in row[4:7]]
        assert sum(alphas) == pytest.approx(1.0, abs=1e-9)
    manifest = json.loads(open(out + ".manifest.json").read())
    assert manifest["files"]["pred.csv"] == sha256_hex(open(out, "rb").read())

    again = str(tmp_path / "pred2.csv")
    run(["predict", "--bundle", pipeline["bundle"],
         "--corpus", pipeline["corpus"], "--out", again, "--seed", "11"])
    assert open(again, "rb").read() == open(out, "rb").read()


def test_train_is_reproducible(pipeline, tmp_path):
    bundle2 = str(tmp_path / "bundle2")
    run(["train", "--corpus", pipeline["corpus"], "--out", bundle2,
         *TRAIN_FLAGS])
    for name in ("ae.json", "gcn.json", "gin.json", "gat.json", "meta.json"):
        first = open(os.path.join(pipeline["bundle"], name), "rb").read()
        second = open(os.path.join(bundle2, name), "rb").read()
        assert first == second, f"{name} differs between identical runs"


def test_explain_outputs_and_dot(pipeline, tmp_path):
    out = str(tmp_path / "explain")
    run(["explain", "--bundle", pipeline["bundle"],
         "--corpus", pipeline["corpus"], "--out", out, "--limit", "3",
         "--steps", "4", "--dot", "--top-k", "2", "--seed", "11"])
    header, rows = read_csv(os.path.join(out, "scores_ig.csv"))
    assert header == EXPLAIN_HEADER
    learners = Counter(r[1] for r in rows)
    assert set(learners) == {"gcn", "gin", "gat", "aggregated"}
    assert len(set(learners.values())) == 1
    graph_ids = {r[0] for r in rows}
    assert len(graph_ids) == 3
    for gid in graph_ids:
        agg = [float(r[5]) for r in rows if r[0] == gid
               and r[1] == "aggregated"]
        assert sum(agg) == pytest.approx(1.0, abs=1e-9)
        assert os.path.isfile(os.path.join(out, f"{gid}.dot"))
    manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
    assert set(manifest["files"]) == {"scores_ig.csv",
                                      *(f"{g}.dot" for g in graph_ids)}


def test_explain_jobs_invariance(pipeline, tmp_path):
    serial = str(tmp_path / "serial")
    parallel = str(tmp_path / "parallel")
    base = ["explain", "--bundle", pipeline["bundle"],
            "--corpus", pipeline["corpus"], "--limit", "2", "--steps", "3",
            "--seed", "11"]
    run(base + ["--out", serial, "--jobs", "1"])
    run(base + ["--out", parallel, "--jobs", "2"])
    first = open(os.path.join(serial, "scores_ig.csv"), "rb").read()
    second = open(os.path.join(parallel, "scores_ig.csv"), "rb").read()
    assert first == second


def test_evaluate_reports(pipeline, tmp_path):
    out = str(tmp_path / "eval")
    run(["evaluate", "--bundle", pipeline["bundle"],
         "--corpus", pipeline["corpus"], "--out", out, "--steps", "3",
         "--sparsity", "0.5,0.9", "--fidelity-limit", "4", "--seed", "11"])

    header, rows = read_csv(os.path.join(out, "metrics.csv"))
    assert header == EVAL_CSV_HEADER
    assert [r[0] for r in rows] == ["gcn", "gcn", "gin", "gin",
                                    "gat", "gat", "se", "se"]
    assert [r[1] for r in rows] == ["benign", "malicious"] * 4
    for row in rows:
        assert 0.0 <= float(row[5]) <= 1.0

    header, rows = read_csv(os.path.join(out, "roc.csv"))
    assert header == ROC_HEADER
    for model in ("gcn", "gin", "gat", "se"):
        pts = [(float(r[1]), float(r[2])) for r in rows if r[0] == model]
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)

    header, rows = read_csv(os.path.join(out, "fidelity.csv"))
    assert header == FIDELITY_HEADER
    key = Counter((r[0], r[2]) for r in rows)
    assert set(key) == {(m, f"fidelity_{sign}")
                        for m in ("ig", "gbp", "random")
                        for sign in ("plus", "minus")}
    assert all(v == 2 for v in key.values())
    assert all(0.0 <= float(r[3]) <= 1.0 for r in rows)
    assert all(r[4] == "4" for r in rows)


def test_exit_codes(tmp_path):
    missing = str(tmp_path / "nope.jsonl")
    assert cli.main(["train-ae", "--corpus", missing,
                     "--out", str(tmp_path / "ae.json")]) == 2
    assert cli.main(["gensynth", "--n", "4", "--balance", "1.5",
                     "--out", str(tmp_path / "c.jsonl")]) == 1
    assert cli.main(["predict", "--bundle", str(tmp_path),
                     "--corpus", missing, "--out", "x.csv"]) == 2
