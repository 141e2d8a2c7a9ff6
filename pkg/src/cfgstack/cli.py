"""Command-line pipeline driver.

Subcommands cover the whole workflow: `gensynth` fabricates a corpus,
`train-ae` fits the node encoder, `train` runs the stacking protocol
end to end and writes a bundle, `predict` scores graphs, `explain`
exports edge attributions, and `evaluate` produces metric and fidelity
reports.  Every command takes a seed (flag or CFGSTACK_SEED) and every
artifact embeds the configuration hash, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .autoencoder import (
    AeConfig,
    load_autoencoder,
    save_autoencoder,
    train_autoencoder,
)
from .corpus import (
    Corpus,
    SynthSpec,
    block_vectors,
    corpus_stats,
    featurize_corpus,
    generate_synthetic_corpus,
    load_corpus,
    write_corpus,
)
from .ensemble import (
    MetaConfig,
    build_meta_dataset,
    ensemble_predict,
    load_bundle,
    retrain_base_full,
    save_bundle,
    train_meta,
)
from .explain import (
    SPARSITY_GRID,
    aggregate_explanations,
    fidelity,
    gbp_edge_scores,
    ig_edge_scores,
    make_forward_fn,
    normalize_scores,
    random_scores,
    score_rows,
    to_dot,
)
from .gnn import KINDS, GnnConfig, GraphTensors, predict_label, predict_proba
from .metrics import EVAL_CSV_HEADER, eval_csv_rows, evaluate_model
from .rng import derive_seed
from .serialize import canonical_json, config_hash, format_float


def _default_seed() -> int:
    return int(os.environ.get("CFGSTACK_SEED", "0"))


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    return path


def _require_bundle(path: str) -> str:
    if not os.path.isfile(os.path.join(path, "manifest.json")):
        raise FileNotFoundError(os.path.join(path, "manifest.json"))
    return path


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def write_csv(path: str, header: tuple, rows: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")


def _write_manifest(path: str, command: str, seed: int, config: dict,
                    files: dict) -> None:
    payload = {
        "format": "cfgstack-manifest",
        "version": 1,
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "files": files,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload))
        fh.write("\n")


def _sha256_of(path: str) -> str:
    from .serialize import sha256_hex

    with open(path, "rb") as fh:
        return sha256_hex(fh.read())


# --- subcommands ----------------------------------------------------------

def cmd_gensynth(args) -> int:
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    spec = SynthSpec(n_graphs=args.n, balance=args.balance,
                     train_fraction=args.train_fraction)
    corpus = generate_synthetic_corpus(spec, args.seed)
    write_corpus(corpus, args.out)
    config = {"n": args.n, "balance": args.balance,
              "train_fraction": args.train_fraction, "seed": args.seed}
    _write_manifest(args.out + ".manifest.json", "gensynth", args.seed,
                    config, {os.path.basename(args.out): _sha256_of(args.out)})
    for name, stats in corpus_stats(corpus).items():
        print(f"{name}: {stats}")
    return 0


def _ae_config(args, seed: int) -> AeConfig:
    profile = (AeConfig.desk_profile if args.ae_profile == "desk"
               else AeConfig.full_profile)
    overrides = {"seed": derive_seed(seed, "ae")}
    if args.ae_epochs is not None:
        overrides["epochs"] = args.ae_epochs
    if args.ae_lr is not None:
        overrides["lr"] = args.ae_lr
    return profile(**overrides)


def _train_ae_on(corpus: Corpus, args, seed: int):
    vectors = block_vectors(corpus, split="train",
                            max_vectors=args.ae_max_vectors, seed=seed)
    config = _ae_config(args, seed)
    model = train_autoencoder(vectors, config)
    print(f"autoencoder: {model.epochs_run} epochs on {vectors.shape[0]} "
          f"vectors, validation mse {model.final_val_mse:.3e}")
    return model


def cmd_train_ae(args) -> int:
    corpus = load_corpus(_require_file(args.corpus))
    model = _train_ae_on(corpus, args, args.seed)
    save_autoencoder(model, args.out)
    config = {"ae": {"epochs": model.config.epochs, "lr": model.config.lr,
                     "max_vectors": args.ae_max_vectors,
                     "profile": args.ae_profile},
              "seed": args.seed}
    _write_manifest(args.out + ".manifest.json", "train-ae", args.seed,
                    config, {os.path.basename(args.out): _sha256_of(args.out)})
    return 0


def _gnn_config(args) -> GnnConfig:
    return GnnConfig(epochs=args.epochs, lr=args.lr,
                     weight_decay=args.weight_decay, dropout=args.dropout,
                     symmetrize=args.symmetrize)


def cmd_train(args) -> int:
    corpus = load_corpus(_require_file(args.corpus))
    seed = args.seed
    if args.ae:
        encoder = load_autoencoder(_require_file(args.ae))
    else:
        encoder = _train_ae_on(corpus, args, seed)

    featurized = featurize_corpus(Corpus(corpus.train), encoder)
    tensors = [GraphTensors.from_graph(g, symmetrize=args.symmetrize)
               for g in featurized]
    base_config = _gnn_config(args)
    meta_ds = build_meta_dataset(tensors, k=args.folds, config=base_config,
                                 seed=seed, jobs=args.jobs)
    for kind in meta_ds.kinds:
        accs = [meta_ds.fold_val_accuracy[(kind, f)] for f in range(args.folds)]
        joined = ", ".join(f"{a:.3f}" for a in accs)
        print(f"{kind} fold validation accuracy: {joined}")

    meta_config = MetaConfig(epochs=args.meta_epochs, lr=args.meta_lr,
                             seed=derive_seed(seed, "meta"))
    meta = train_meta(meta_ds, meta_config)
    models = retrain_base_full(tensors, base_config, seed, jobs=args.jobs)

    config_payload = {
        "gnn": base_config.as_dict(),
        "meta": meta_config.as_dict(),
        "ae": {"epochs": encoder.config.epochs, "lr": encoder.config.lr},
        "folds": args.folds,
        "kinds": list(KINDS),
        "seed": seed,
    }
    save_bundle(args.out, encoder, models, meta, seed, config_payload)
    print(f"bundle written to {args.out}")
    return 0


def _featurized_tensors(corpus_graphs, encoder, symmetrize=False):
    featurized = featurize_corpus(Corpus(list(corpus_graphs)), encoder)
    return [GraphTensors.from_graph(g, symmetrize=symmetrize)
            for g in featurized]


PREDICT_HEADER = ("graph_id", "p_benign", "p_malicious", "label",
                  "alpha_gcn", "alpha_gin", "alpha_gat")


def cmd_predict(args) -> int:
    bundle = load_bundle(_require_bundle(args.bundle))
    corpus = load_corpus(_require_file(args.corpus))
    tensors = _featurized_tensors(corpus.graphs, bundle.encoder)
    rows = []
    for gt in tensors:
        pred = ensemble_predict(bundle.models, bundle.meta, gt)
        rows.append((gt.graph_id, pred.probs[0], pred.probs[1], pred.label,
                     *pred.alphas.tolist()))
    write_csv(args.out, PREDICT_HEADER, rows)
    config = {"bundle_hash": bundle.manifest["config_hash"],
              "seed": args.seed}
    _write_manifest(args.out + ".manifest.json", "predict", args.seed, config,
                    {os.path.basename(args.out): _sha256_of(args.out)})
    print(f"{len(rows)} predictions written to {args.out}")
    return 0


EXPLAIN_HEADER = ("graph_id", "learner", "edge_index", "src", "dst",
                  "score", "rank")


def _explain_one(models, meta, gt, explainer: str, steps: int):
    """Per-learner normalized maps, aggregated map, and the prediction."""
    pred = ensemble_predict(models, meta, gt)
    target = pred.label
    per_learner = []
    for kind in meta.kinds:
        fwd = make_forward_fn(models[kind], gt)
        if explainer == "ig":
            raw = ig_edge_scores(fwd, gt.graph_id, gt.m, target, steps=steps)
        else:
            raw = gbp_edge_scores(fwd, gt.graph_id, gt.m, target)
        per_learner.append(normalize_scores(raw))
    aggregated = aggregate_explanations(per_learner, pred.alphas)
    return pred, per_learner, aggregated


_EXPLAIN_CTX: dict = {}


def _init_explain_worker(models, meta, explainer, steps):
    _EXPLAIN_CTX.update(models=models, meta=meta, explainer=explainer,
                        steps=steps)


def _explain_task(gt):
    ctx = _EXPLAIN_CTX
    _, per_learner, aggregated = _explain_one(
        ctx["models"], ctx["meta"], gt, ctx["explainer"], ctx["steps"])
    return per_learner, aggregated


def _explain_all(bundle, tensors, explainer, steps, jobs):
    """(per_learner, aggregated) per graph, in input order, jobs-invariant."""
    if jobs > 1:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_explain_worker,
                initargs=(bundle.models, bundle.meta, explainer, steps)) as pool:
            return list(pool.map(_explain_task, tensors))
    return [_explain_one(bundle.models, bundle.meta, gt, explainer, steps)[1:]
            for gt in tensors]


def cmd_explain(args) -> int:
    if args.explainer not in ("ig", "gbp"):
        raise ValueError(f"unknown explainer {args.explainer!r}")
    bundle = load_bundle(_require_bundle(args.bundle))
    corpus = load_corpus(_require_file(args.corpus))
    graphs = corpus.graphs if args.split == "all" else corpus.split(args.split)
    if args.limit:
        graphs = graphs[:args.limit]
    tensors = _featurized_tensors(graphs, bundle.encoder)
    os.makedirs(args.out, exist_ok=True)

    tensors = [gt for gt in tensors if gt.m > 0]
    results = _explain_all(bundle, tensors, args.explainer, args.steps,
                           args.jobs)
    rows = []
    dot_files = {}
    for gt, (per_learner, aggregated) in zip(tensors, results):
        for kind, smap in zip(bundle.meta.kinds, per_learner):
            rows.extend((gid, kind, k, s, d, score, rank)
                        for gid, k, s, d, score, rank in score_rows(smap, gt))
        rows.extend((gid, "aggregated", k, s, d, score, rank)
                    for gid, k, s, d, score, rank in score_rows(aggregated, gt))
        if args.dot:
            dot_path = os.path.join(args.out, f"{gt.graph_id}.dot")
            with open(dot_path, "w", encoding="utf-8") as fh:
                fh.write(to_dot(gt, aggregated, top_k=args.top_k))
            dot_files[os.path.basename(dot_path)] = _sha256_of(dot_path)

    scores_path = os.path.join(args.out, f"scores_{args.explainer}.csv")
    write_csv(scores_path, EXPLAIN_HEADER, rows)
    config = {"explainer": args.explainer, "steps": args.steps,
              "split": args.split, "top_k": args.top_k, "seed": args.seed,
              "bundle_hash": bundle.manifest["config_hash"]}
    files = {os.path.basename(scores_path): _sha256_of(scores_path)}
    files.update(dot_files)
    _write_manifest(os.path.join(args.out, "manifest.json"), "explain",
                    args.seed, config, files)
    print(f"explanations for {len(tensors)} graphs written to {args.out}")
    return 0


FIDELITY_HEADER = ("method", "sparsity", "metric", "value", "n_graphs")
ROC_HEADER = ("model", "fpr", "tpr")


def cmd_evaluate(args) -> int:
    bundle = load_bundle(_require_bundle(args.bundle))
    corpus = load_corpus(_require_file(args.corpus))
    test_graphs = corpus.test
    if not test_graphs:
        raise ValueError("corpus has no test split to evaluate")
    tensors = _featurized_tensors(test_graphs, bundle.encoder)
    labels = [gt.label for gt in tensors]
    os.makedirs(args.out, exist_ok=True)

    metric_rows = []
    roc_rows = []
    reports = []
    for kind in bundle.meta.kinds:
        probs = [predict_proba(bundle.models[kind], gt) for gt in tensors]
        reports.append(evaluate_model(kind, [predict_label(p) for p in probs],
                                      labels, [p[1] for p in probs]))
    ens_preds = [ensemble_predict(bundle.models, bundle.meta, gt)
                 for gt in tensors]
    reports.append(evaluate_model("se", [p.label for p in ens_preds], labels,
                                  [p.probs[1] for p in ens_preds]))
    for report in reports:
        metric_rows.extend(eval_csv_rows(report))
        roc_rows.extend((report.model, x, y) for x, y in report.roc_points)

    metrics_path = os.path.join(args.out, "metrics.csv")
    write_csv(metrics_path, EVAL_CSV_HEADER, metric_rows)
    roc_path = os.path.join(args.out, "roc.csv")
    write_csv(roc_path, ROC_HEADER, roc_rows)

    sparsities = [float(s) for s in args.sparsity.split(",")]
    fid_graphs = [gt for gt in tensors if gt.m > 0]
    if args.fidelity_limit:
        fid_graphs = fid_graphs[:args.fidelity_limit]
    score_cache: dict[tuple[str, str], object] = {}
    for explainer in ("ig", "gbp"):
        results = _explain_all(bundle, fid_graphs, explainer, args.steps,
                               args.jobs)
        for gt, (_, aggregated) in zip(fid_graphs, results):
            score_cache[(explainer, gt.graph_id)] = aggregated
    for gt in fid_graphs:
        score_cache[("random", gt.graph_id)] = random_scores(gt, args.seed)

    def predict_fn(gt):
        return ensemble_predict(bundle.models, bundle.meta, gt).label

    fid_rows = []
    for method in ("ig", "gbp", "random"):
        for sparsity in sparsities:
            entry = fidelity(
                predict_fn, fid_graphs,
                lambda gt, m=method: score_cache[(m, gt.graph_id)], sparsity)
            fid_rows.append((method, sparsity, "fidelity_plus",
                             entry.fidelity_plus, entry.n_graphs))
            fid_rows.append((method, sparsity, "fidelity_minus",
                             entry.fidelity_minus, entry.n_graphs))
    fidelity_path = os.path.join(args.out, "fidelity.csv")
    write_csv(fidelity_path, FIDELITY_HEADER, fid_rows)

    config = {"sparsity": sparsities, "steps": args.steps, "seed": args.seed,
              "fidelity_limit": args.fidelity_limit,
              "bundle_hash": bundle.manifest["config_hash"]}
    files = {name: _sha256_of(os.path.join(args.out, name))
             for name in ("metrics.csv", "roc.csv", "fidelity.csv")}
    _write_manifest(os.path.join(args.out, "manifest.json"), "evaluate",
                    args.seed, config, files)
    print("accuracy: " + ", ".join(
        f"{r.model}={r.accuracy:.4f}" for r in reports))
    return 0


# --- parser ---------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=_default_seed(),
                        help="master seed (default: CFGSTACK_SEED or 0)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for fold-by-kind training")


def _add_ae_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ae-profile", choices=("desk", "full"),
                        default="desk")
    parser.add_argument("--ae-epochs", type=int, default=None)
    parser.add_argument("--ae-lr", type=float, default=None)
    parser.add_argument("--ae-max-vectors", type=int, default=2048)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfgstack",
        description="stacked graph-classifier pipeline over CFG corpora")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gensynth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gensynth)

    p = sub.add_parser("train-ae", help="train the node encoder alone")
    _add_common(p)
    _add_ae_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_ae)

    p = sub.add_parser("train", help="run the stacking protocol end to end")
    _add_common(p)
    _add_ae_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="bundle output directory")
    p.add_argument("--ae", default=None, help="reuse a trained encoder")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--meta-epochs", type=int, default=100)
    p.add_argument("--meta-lr", type=float, default=1e-3)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", help="score graphs with a trained bundle")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("explain", help="export edge attributions")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--explainer", choices=("ig", "gbp"), default="ig")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--dot", action="store_true",
                   help="also write one DOT file per graph")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("evaluate", help="metric and fidelity reports")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--sparsity",
                   default=",".join(str(s) for s in SPARSITY_GRID))
    p.add_argument("--fidelity-limit", type=int, default=0)
    p.set_defaults(handler=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
