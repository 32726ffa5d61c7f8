"""Command-line interface: ingest | pairs | vocab | train | finetune |
embed | index | search | eval | ci | serve.

Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .corpus import (EQUALITIES, INEQUALITIES, RELATIONS, extract_relation_pairs,
                     ingest_directory, load_corpus, load_pairs, save_corpus, save_pairs)
from .graph import Vocabulary, build_vocabulary
from .index import RpTreeIndex, bow_embed_corpus, embed_corpus, load_store, save_index, save_store
from .latex import LatexSyntaxError
from .metrics import QuerySpec, keyword_relevant, precision_at_k, umap_score
from .model import load_checkpoint, save_checkpoint
from .sampling import load_triplets, materialize_triplets
from .service import load_artifacts, run_search, serve
from .training import FinetuneConfig, TrainConfig, finetune_contrastive, train
from .ustats import (COMPLETE_LIMIT, DependencyGraph, EvalItem, complete_ustat,
                     greedy_coloring, incomplete_ustat, janson_margin_complete,
                     janson_margin_incomplete)

RELATION_PRESETS = {"eq": EQUALITIES, "ineq": INEQUALITIES, "all": RELATIONS}


def _cmd_ingest(args: argparse.Namespace) -> int:
    corpus, diag = ingest_directory(args.src, subject_tag=args.subject)
    save_corpus(corpus, args.out)
    print(f"ingested {len(corpus.papers)} papers, {corpus.n_equations} equations "
          f"({diag.unmatched_environments} unmatched environments, "
          f"{diag.macros_defined} macros)")
    return 0


def _cmd_pairs(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pairs = extract_relation_pairs(corpus, RELATION_PRESETS[args.relations])
    save_pairs(pairs, args.out)
    print(f"wrote {len(pairs)} relation pairs to {args.out}")
    return 0


def _cmd_vocab(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    vocab = build_vocabulary(corpus)
    vocab.save(args.out)
    print(f"vocabulary: {len(vocab.tags)} tags, {len(vocab.attrs)} attrs, "
          f"{len(vocab.chars)} chars -> {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr0,
        loss=args.loss, seed=args.seed, augmentation=not args.no_augmentation,
        masking=not args.no_masking, holdout_fraction=args.holdout,
        triplets_per_epoch=args.triplets_per_epoch, bn_placement=args.bn_placement,
    )
    result = train(corpus, vocab, config, metrics_path=args.metrics)
    save_checkpoint(result.model, vocab.content_hash(), args.out,
                    extra={"epochs": config.epochs, "loss": config.loss})
    last = result.history[-1]
    ranking = f", holdout ranking {last.holdout_ranking:.3f}" if last.holdout_ranking is not None else ""
    print(f"trained {config.epochs} epochs, final loss {last.total_loss:.4f}{ranking}")
    if args.materialize:
        out = Path(args.out).with_suffix(".triplets.jsonl")
        materialize_triplets(corpus, args.materialize, config.seed, out)
        print(f"materialized {args.materialize} triplets to {out}")
    return 0


def _cmd_finetune(args: argparse.Namespace) -> int:
    vocab = Vocabulary.load(args.vocab)
    model, _ = load_checkpoint(args.checkpoint, vocab.content_hash())
    pairs = load_pairs(args.pairs)
    config = FinetuneConfig(epochs=args.epochs, batch_size=args.batch_size,
                            lr0=args.lr0, tau=args.tau, seed=args.seed)
    finetune_contrastive(pairs, model, vocab, config)
    save_checkpoint(model, vocab.content_hash(), args.out,
                    extra={"finetuned_on": str(args.pairs)})
    print(f"finetuned on {len(pairs)} pairs -> {args.out}")
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    if args.bow:
        store = bow_embed_corpus(corpus, vocab)
    else:
        model, header = load_checkpoint(args.checkpoint, vocab.content_hash())
        store = embed_corpus(corpus, model, vocab, header["vocab_hash"])
    save_store(store, args.out)
    print(f"embedded {store.n} equations ({store.dim}-d, {store.metric}) -> {args.out}")
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    store = load_store(args.store)
    index = RpTreeIndex(store, n_trees=args.trees, leaf_size=args.leaf_size,
                        seed=args.seed)
    save_index(index, args.out)
    print(f"built {args.trees} trees over {store.n} vectors -> {args.out}")
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    artifacts = load_artifacts(args.corpus, args.vocab, args.checkpoint,
                               args.store, args.index)
    results = run_search(artifacts, args.query, args.k)
    print(f"{'rank':>4}  {'score':>9}  latex")
    for rank, result in enumerate(results, start=1):
        print(f"{rank:>4}  {result.score:>9.4f}  {result.latex}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    artifacts = load_artifacts(args.corpus, args.vocab, args.checkpoint,
                               args.store, None)
    queries: list[QuerySpec] = []
    with open(args.queries, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            queries.append(QuerySpec(query_latex=rec["query"], keywords=rec["keywords"]))

    def section_text(eq_id: str) -> str:
        record = artifacts.corpus.equations[eq_id]
        paper = artifacts.corpus.paper(record.paper_id)
        section = paper.sections[record.section_index]
        return "\n".join(artifacts.corpus.equations[e].latex for e in section).lower()

    per_query = []
    for spec in queries:
        results = [r.eq_id for r in run_search(artifacts, spec.query_latex, 1000)]
        relevant = {eq for eq in results if keyword_relevant(section_text(eq), spec.keywords)}
        per_query.append({
            "query": spec.query_latex,
            "p10": precision_at_k(results, relevant, 10),
            "p100": precision_at_k(results, relevant, 100),
            "p1000": precision_at_k(results, relevant, 1000),
            "umap": umap_score(results, relevant),
        })
    report = {
        "p10": float(np.mean([q["p10"] for q in per_query])),
        "p100": float(np.mean([q["p100"] for q in per_query])),
        "p1000": float(np.mean([q["p1000"] for q in per_query])),
        "umap": float(np.mean([q["umap"] for q in per_query])),
        "per_query": per_query,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def _cmd_ci(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    store = load_store(args.store)

    def item(eq_id: str) -> EvalItem:
        record = corpus.equations[eq_id]
        return EvalItem(eq_id=eq_id, paper_id=record.paper_id,
                        section_index=record.section_index,
                        vector=store.vector(eq_id).astype(np.float64))

    citations = set(corpus.citation_edges())
    if args.mode == "complete":
        items = [item(eq) for eq in sorted(corpus.equations)]
        if len(items) > COMPLETE_LIMIT:
            print(f"error: complete mode needs n <= {COMPLETE_LIMIT}, corpus has {len(items)}",
                  file=sys.stderr)
            return 1
        s_hat = complete_ustat(items, citations, kernel=args.kernel)
        margin = janson_margin_complete(len(corpus.papers), args.delta)
        print(f"s_hat {s_hat:.6f}")
        print(f"upper_bound {s_hat + margin:.6f}")
    else:
        if not args.triplets:
            print("error: incomplete mode needs --triplets", file=sys.stderr)
            return 1
        triplets = load_triplets(args.triplets)
        triples = [(item(t.anchor), item(t.positive), item(t.negative)) for t in triplets]
        s_hat = incomplete_ustat(triples, citations, kernel=args.kernel)
        graph = DependencyGraph(paper_triples=[
            (a.paper_id, b.paper_id, c.paper_id) for a, b, c in triples
        ])
        chi = greedy_coloring(graph)
        margin = janson_margin_incomplete(chi, len(triples), args.delta)
        print(f"s_hat {s_hat:.6f}")
        print(f"chi_hat {chi}")
        print(f"upper_bound {s_hat + margin:.6f}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    artifacts = load_artifacts(args.corpus, args.vocab, args.checkpoint,
                               args.store, args.index)
    host = os.environ.get("HOST", args.host)
    port = int(os.environ.get("PORT", args.port))
    serve(artifacts, host=host, port=port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqsearch",
                                     description="search engine for mathematical expressions")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="parse .tex sources into a corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subject", default="unknown")
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("pairs", help="extract relation pairs from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--relations", choices=sorted(RELATION_PRESETS), default="eq")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_pairs)

    p = sub.add_parser("vocab", help="build the tag/attr/char vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_vocab)

    p = sub.add_parser("train", help="train the embedding model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr0", type=float, default=1e-4)
    p.add_argument("--loss", choices=("histogram", "triplet"), default="histogram")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--triplets-per-epoch", type=int, default=None)
    p.add_argument("--bn-placement", choices=("after_l1_l2", "before_l2_l4"),
                   default="after_l1_l2")
    p.add_argument("--no-augmentation", action="store_true")
    p.add_argument("--no-masking", action="store_true")
    p.add_argument("--materialize", type=int, default=0,
                   help="additionally write N sampled triplets next to the checkpoint")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("finetune", help="contrastive finetuning on relation pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--lr0", type=float, default=1e-4)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_finetune)

    p = sub.add_parser("embed", help="embed every corpus equation into a store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--bow", action="store_true",
                   help="bag-of-words baseline store instead of the model")
    p.set_defaults(handler=_cmd_embed)

    p = sub.add_parser("index", help="build the random-projection-tree forest")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=16)
    p.add_argument("--leaf-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_index)

    p = sub.add_parser("search", help="query a built store")
    p.add_argument("--query", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--store", required=True)
    p.add_argument("--index", default=None)
    p.set_defaults(handler=_cmd_search)

    p = sub.add_parser("eval", help="precision/uMAP over a query file")
    p.add_argument("--queries", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--store", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("ci", help="U-statistic estimate with a one-sided upper bound")
    p.add_argument("--triplets", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--mode", choices=("complete", "incomplete"), default="incomplete")
    p.add_argument("--kernel", choices=("ranking", "hist"), default="ranking")
    p.set_defaults(handler=_cmd_ci)

    p = sub.add_parser("serve", help="run the HTTP search service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--store", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if not getattr(args, "handler", None):
        parser.print_usage()
        return 1
    try:
        return args.handler(args)
    except (FileNotFoundError, ValueError, KeyError, LatexSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
