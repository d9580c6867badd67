"""Command-line entry point: ingestion, splitting, training, evaluation, and queries.

Artifacts live under a single output directory:
    <out>/corpus/catalog.tsv, baskets.txt
    <out>/splits/<mode>.manifest
    <out>/models/model.bin, train_log.txt
    <out>/reports/<method>.json, <method>.txt
Each command echoes its fully resolved configuration next to its artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, corpus, evaluation, model
from .encoders import load_pretrained_vectors


def _echo_config(args: argparse.Namespace, path: Path) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k != "func"}
    path.write_text(json.dumps(resolved, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_corpus(out: Path):
    cat = out / "corpus" / "catalog.tsv"
    bsk = out / "corpus" / "baskets.txt"
    if not cat.exists() or not bsk.exists():
        raise SystemExit(f"error: no ingested corpus under {out / 'corpus'}; run `bastext ingest` first")
    catalog, baskets, _ = corpus.import_dataset("canonical", [cat, bsk])
    return catalog, baskets


def _load_split(out: Path, mode: str, catalog, baskets):
    manifest = out / "splits" / f"{mode}.manifest"
    if not manifest.exists():
        raise SystemExit(f"error: split manifest {manifest} not found; run `bastext split` first")
    return corpus.load_split_manifest(manifest, catalog, baskets)


def cmd_ingest(args) -> int:
    catalog, baskets, stats = corpus.import_dataset(args.format, args.paths)
    out = Path(args.out) / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    corpus.write_canonical(catalog, baskets, out / "catalog.tsv", out / "baskets.txt")
    _echo_config(args, out / "ingest_config.json")
    sizes = [len(b) for b in baskets]
    print(f"ingested {len(baskets)} baskets over {len(catalog)} products "
          f"(mean size {np.mean(sizes):.2f}); dropped {stats.baskets_dropped_small} small "
          f"baskets, {stats.products_dropped_empty_title} empty-title products, "
          f"skipped {stats.rows_skipped} malformed rows")
    return 0


def cmd_split(args) -> int:
    catalog, baskets = _load_corpus(Path(args.out))
    ratios = tuple(float(x) for x in args.ratios.split(","))
    if args.cold:
        split = corpus.split_cold(baskets, ratios, args.cold_fraction, args.seed)
    else:
        split = corpus.split_warm(baskets, ratios, args.seed)
    out = Path(args.out) / "splits"
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_split_manifest(split, catalog, out / f"{split.mode}.manifest")
    _echo_config(args, out / f"{split.mode}_config.json")
    cases = sum(len(b) for b in split.test) if split.mode == "warm" else len(
        evaluation.form_test_cases(split))
    print(f"{split.mode} split: {len(split.train)} train / {len(split.validation)} "
          f"validation / {len(split.test)} test baskets, {cases} test cases")
    return 0


def _model_config(args) -> model.ModelConfig:
    return model.ModelConfig(
        k=args.k, negatives=args.neg, encoder=args.encoder,
        pretrained=args.pretrained is not None,
        finetune_pretrained=args.finetune_pretrained,
        batch_size=args.batch_size, learning_rate=args.lr, dropout=args.dropout,
        epochs=args.epochs, seed=args.seed, patience=args.patience)


def cmd_train(args) -> int:
    out = Path(args.out)
    catalog, baskets = _load_corpus(out)
    split = _load_split(out, "cold" if args.cold else "warm", catalog, baskets)
    vocab = corpus.build_vocabulary(catalog, args.min_count)
    table = None
    if args.pretrained is not None:
        table, coverage = load_pretrained_vectors(args.pretrained, vocab)
        print(f"pretrained vectors: dim {table.dim}, vocabulary coverage {coverage:.3f}")
    config = _model_config(args)
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    log_lines: list[str] = []
    state, lines = model.train(config, split.train, split.validation, catalog, vocab,
                               table, log=lambda s: print(s, flush=True))
    model.save_model(state, mdir / "model.bin")
    (mdir / "train_log.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _echo_config(args, mdir / "train_config.json")
    print(f"model saved to {mdir / 'model.bin'} (encoder {config.encoder}, K={config.k}, "
          f"n={config.negatives})")
    return 0


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    catalog, baskets = _load_corpus(out)
    split = _load_split(out, "cold" if args.cold else "warm", catalog, baskets)
    cases = evaluation.form_test_cases(split)
    m = len(catalog)
    if args.method == "bastext":
        state = model.load_model(out / "models" / "model.bin")
        if not model.check_catalog_hash(state, catalog):
            print("warning: catalog hash differs from the one the model was trained on",
                  file=sys.stderr)
        vectors = model.materialize_product_vectors(state, catalog)
        scorer = model.BastextScorer(vectors, float(state.bias[0]) if state.config.use_bias else 0.0)
    elif args.method == "pop":
        scorer = baselines.PopModel.fit(split.train, m)
    elif args.method == "itemknn":
        scorer = baselines.ItemKnnModel.fit(split.train, m, last_item_only=args.knn_last_item)
    elif args.method == "prod2vec":
        scorer = baselines.Prod2vecModel.fit(
            split.train, m, baselines.Prod2vecConfig(k=args.k, negatives=args.neg,
                                                     seed=args.seed))
    elif args.method == "external":
        if args.scores is None:
            raise SystemExit("error: --method external requires --scores <path>")
        scorer = evaluation.ExternalScorer.load(args.scores, m)
    else:
        raise SystemExit(f"error: unknown method {args.method!r}")

    ns = tuple(int(x) for x in args.ns.split(","))
    kwargs = dict(ns=ns, mode=split.mode, pool=args.pool,
                  test_product_ids=split.test_product_ids)
    if args.method == "external":
        report = evaluation.evaluate_external(scorer, cases, **kwargs)
    else:
        report = evaluation.evaluate(scorer, cases, method=args.method, **kwargs)
    rdir = out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / f"{args.method}.json").write_text(report.to_json(), encoding="utf-8")
    (rdir / f"{args.method}.txt").write_text(report.to_table(), encoding="utf-8")
    _echo_config(args, rdir / f"{args.method}_config.json")
    print(report.to_table(), end="")
    return 0


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def _load_for_query(args):
    out = Path(args.out)
    catalog, _ = _load_corpus(out)
    state = model.load_model(args.model or out / "models" / "model.bin")
    if not model.check_catalog_hash(state, catalog):
        print("warning: catalog hash differs from the one the model was trained on",
              file=sys.stderr)
    vectors = model.materialize_product_vectors(state, catalog)
    return catalog, state, vectors


def _resolve(catalog, external_id: str) -> int:
    pid = catalog.get(external_id)
    if pid is None:
        raise SystemExit(f"error: unknown product id {external_id!r}")
    return pid


def _print_top(catalog, ids, scores) -> None:
    for i, s in zip(ids, scores):
        p = catalog.products[i]
        print(f"{p.external_id}\t{s:.6f}\t{p.title}")


def cosine_to_all(vec: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Cosine of `vec` against every row; zero rows (or a zero query) score 0."""
    norms = np.linalg.norm(matrix, axis=1)
    vn = np.linalg.norm(vec)
    out = np.zeros(matrix.shape[0])
    nz = (norms > 0) & (vn > 0)
    out[nz] = (matrix @ vec)[nz] / (norms[nz] * vn)
    return out


def _top_k(scores: np.ndarray, k: int, exclude=()) -> np.ndarray:
    scores = scores.copy()
    for e in exclude:
        scores[e] = -np.inf
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k]


def cmd_similar(args) -> int:
    catalog, _, vectors = _load_for_query(args)
    pid = _resolve(catalog, args.product)
    sims = cosine_to_all(vectors.embedding[pid], vectors.embedding)
    top = _top_k(sims, args.top_n, exclude=[pid])
    _print_top(catalog, top, sims[top])
    return 0


def cmd_alsobuy(args) -> int:
    catalog, _, vectors = _load_for_query(args)
    pid = _resolve(catalog, args.product)
    scores = vectors.embedding @ vectors.context[pid]
    top = _top_k(scores, args.top_n, exclude=[pid])
    _print_top(catalog, top, scores[top])
    return 0


def cmd_search(args) -> int:
    from .encoders import encode_batch

    catalog, state, vectors = _load_for_query(args)
    tokens = state.vocab.encode(corpus.tokenize(args.query))
    if len(tokens) and (tokens == state.vocab.unk_index).all():
        print("warning: every query token is out of vocabulary", file=sys.stderr)
    q, _ = encode_batch(state.params_e, state.table, [tokens])
    sims = cosine_to_all(q[0], vectors.embedding)
    top = _top_k(sims, args.top_n)
    _print_top(catalog, top, sims[top])
    return 0


def cmd_next(args) -> int:
    from scipy.special import expit

    catalog, state, vectors = _load_for_query(args)
    ctx = np.array([_resolve(catalog, e) for e in args.context], dtype=np.int64)
    bias = float(state.bias[0]) if state.config.use_bias else 0.0
    scores = expit(vectors.embedding @ model.basket_vector(ctx, vectors.context) + bias)
    top = _top_k(scores, args.top_n, exclude=ctx)
    _print_top(catalog, top, scores[top])
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out", default="run", help="output directory (default: run)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap; results are bit-identical at any value")


def _add_model_flags(p):
    p.add_argument("--encoder", choices=["mov", "cnn"], default="mov")
    p.add_argument("--pretrained", default=None, help="pretrained word-vector file")
    p.add_argument("--finetune-pretrained", action="store_true")
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--neg", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--min-count", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bastext",
                                     description="Basket-text embedding pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize raw transactions into the canonical corpus")
    p.add_argument("--format", choices=["onlineretail", "instacart", "canonical"],
                   required=True)
    p.add_argument("paths", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="partition baskets into train/validation/test")
    p.add_argument("--ratios", default="0.85,0.05,0.10")
    p.add_argument("--cold", action="store_true")
    p.add_argument("--cold-fraction", type=float, default=0.10)
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the basket-text model")
    p.add_argument("--cold", action="store_true", help="train on the cold split")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank test cases and report Recall/MRR")
    p.add_argument("--method", choices=["bastext", "pop", "itemknn", "prod2vec", "external"],
                   default="bastext")
    p.add_argument("--cold", action="store_true")
    p.add_argument("--pool", choices=["all", "test-products"], default="all")
    p.add_argument("--knn-last-item", action="store_true",
                   help="ItemKNN scores with the last context item only")
    p.add_argument("--scores", default=None, help="external score file for --method external")
    p.add_argument("--ns", default="10,20", help="comma-separated N values")
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--neg", type=int, default=8)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    for name, fn, extra in (("similar", cmd_similar, "product"),
                            ("alsobuy", cmd_alsobuy, "product"),
                            ("search", cmd_search, "query"),
                            ("next", cmd_next, "context")):
        p = sub.add_parser(name, help=f"{name} query against a trained model")
        if extra == "context":
            p.add_argument("context", nargs="+", help="external ids of basket products")
        else:
            p.add_argument(extra)
        p.add_argument("--model", default=None, help="model file (default: <out>/models/model.bin)")
        p.add_argument("--top-n", type=int, default=10)
        _add_common(p)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (corpus.CorpusError, model.ModelError, evaluation.EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
