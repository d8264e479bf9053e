"""Command-line entry point: ``taxalign <subcommand> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .align import (
    AlignError,
    AlignmentConfig,
    dictionary_from_codes,
    load_seed_pairs,
    prepare_spaces,
    procrustes_solve,
    refine,
    save_mapping,
    self_learn,
    vecmap_mapping,
)
from .embeddings import CategoryVectorSet, EmbeddingError, build_category_vectors, load_vectors, save_vectors
from .evaluate import (
    ContingencyTable,
    EvalError,
    accuracy,
    compare_methods,
    fisher_exact,
    load_annotations,
    screen_first_k,
)
from .match import MatchError, RetrievalError
from .pipeline import ConfigError, cmd_ingest, cmd_project, cmd_run, load_config
from .taxonomy import TaxonomyError, load_taxonomy, load_translations
from .trainer import TrainerConfig, TrainingError, load_corpus, train_cbow, train_pvdbow

log = logging.getLogger("taxalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML pipeline config")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--out", help="output directory or file (overrides config)")


def _overrides(args, extra: Optional[Dict[str, object]] = None) -> Dict[str, object]:
    ov: Dict[str, object] = {"seed": args.seed, "out": args.out}
    ov.update(extra or {})
    return ov


def do_ingest(args) -> int:
    cfg = load_config(args.config, _overrides(args, {
        "source.taxonomy": args.source, "source.scheme": args.source_scheme,
        "target.taxonomy": args.target, "target.scheme": args.target_scheme,
    }))
    summary = cmd_ingest(cfg)
    for side, counts in summary.items():
        total = sum(counts.values())
        depth = max(counts) if counts else 0
        per_level = " ".join(f"L{lvl}={n}" for lvl, n in counts.items())
        print(f"{side}: {total} categories, depth {depth} ({per_level})")
    return EXIT_OK


def do_vectors(args) -> int:
    if args.action == "load":
        table = load_vectors(args.vectors)
        print(f"{len(table)} tokens, d={table.d}, duplicates dropped={table.duplicates}")
        return EXIT_OK
    if args.action == "average":
        tax = load_taxonomy(args.taxonomy, args.scheme)
        table = load_vectors(args.vectors)
        tr = load_translations(args.translations) if args.translations else None
        vs = build_category_vectors(tax, table, tr)
        save_vectors(vs.codes, args.output, vs.matrix)
        print(f"{len(vs)} categories, {len(vs.uncovered)} without coverage")
        for code in vs.uncovered:
            print(f"uncovered\t{code}")
        return EXIT_OK
    cfg = TrainerConfig(d=args.dim, c=args.window, epochs=args.epochs,
                        negative_samples=args.negative, seed=args.seed or 1,
                        softmax_mode=args.softmax)
    corpus = load_corpus(args.corpus)
    table = train_cbow(corpus, cfg) if args.model == "cbow" else train_pvdbow(corpus, cfg)
    save_vectors(table, args.output)
    print(f"trained {args.model}: {len(table)} vectors, d={table.d}")
    return EXIT_OK


def do_align(args) -> int:
    xs = CategoryVectorSet.from_table("source", load_vectors(args.source_vectors))
    yt = CategoryVectorSet.from_table("target", load_vectors(args.target_vectors))
    cfg = AlignmentConfig(refinement_iterations=args.iterations, csls_k=args.k,
                          whitening=args.whiten, seed=args.seed or 0)
    X, Y = prepare_spaces(xs.matrix, yt.matrix, cfg)
    if args.method == "self-learn":
        mapping = self_learn(X, Y, cfg)
    else:
        if not args.seed_dictionary:
            raise ConfigError(f"align {args.method} needs --seed-dictionary")
        seed = dictionary_from_codes(load_seed_pairs(args.seed_dictionary), xs, yt)
        if args.method == "procrustes":
            mapping = procrustes_solve(X, Y, seed)
        elif args.method == "vecmap":
            mapping = vecmap_mapping(X, Y, seed)
        else:
            mapping = refine(X, Y, seed, cfg)
    out = Path(args.out or "mapping.tsv")
    save_mapping(mapping, out, {"normalization": ",".join(cfg.normalization)})
    print(f"{mapping.method}: {mapping.iterations} iteration(s), wrote {out}")
    return EXIT_OK


def do_match(args) -> int:
    cfg = load_config(args.config, _overrides(args, {"method": args.method,
                                                     "mapping": args.mapping,
                                                     "workers": args.workers}))
    result = cmd_run(cfg)
    print(f"{result['matches']} matches, {result['skipped']} skipped -> {cfg.out}")
    return EXIT_OK


def do_run(args) -> int:
    cfg = load_config(args.config, _overrides(args, {"workers": args.workers}))
    result = cmd_run(cfg)
    line = f"run {result['run_id']}: {result['matches']} matches, {result['skipped']} skipped"
    if "accuracy" in result:
        line += f", accuracy {100 * result['accuracy']:.1f}%"
    print(line)
    return EXIT_OK


def do_project(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    path = cmd_project(cfg)
    print(f"wrote {path}")
    return EXIT_OK


def do_eval(args) -> int:
    if args.action == "accuracy":
        for path in args.annotations:
            print(accuracy(load_annotations(path, Path(path).stem)).text())
        return EXIT_OK
    if args.action == "screen":
        for path in args.annotations:
            res = screen_first_k(load_annotations(path), args.k, args.threshold)
            verdict = "pass" if res.passed else "dropped"
            print(f"{Path(path).stem}: {res.correct}/{res.window} correct -> {verdict}")
        return EXIT_OK
    if args.table:
        res = fisher_exact(ContingencyTable(*args.table))
    else:
        if len(args.annotations) != 2:
            raise ConfigError("eval fisher needs two annotation files or --table a b c d")
        a, b = (accuracy(load_annotations(p)) for p in args.annotations)
        res = compare_methods(a, b)
    print(f"p={res.pvalue:.6g} ({res.sidedness}{', degenerate' if res.degenerate else ''})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taxalign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"taxalign {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load both taxonomies and print per-level counts")
    _common(p)
    p.add_argument("--source")
    p.add_argument("--source-scheme")
    p.add_argument("--target")
    p.add_argument("--target-scheme")
    p.set_defaults(func=do_ingest)

    p = sub.add_parser("vectors", help="load, average or train vectors")
    _common(p)
    p.add_argument("action", choices=("load", "average", "train"))
    p.add_argument("--vectors", help="word2vec text file")
    p.add_argument("--taxonomy")
    p.add_argument("--scheme", default="dotted")
    p.add_argument("--translations")
    p.add_argument("--corpus")
    p.add_argument("--model", choices=("cbow", "pvdbow"), default="cbow")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--negative", type=int, default=5)
    p.add_argument("--softmax", choices=("negative-sampling", "full"), default="negative-sampling")
    p.add_argument("--output", "-o")
    p.set_defaults(func=do_vectors)

    p = sub.add_parser("align", help="learn an orthogonal mapping between category vectors")
    _common(p)
    p.add_argument("method", choices=("procrustes", "vecmap", "refine", "self-learn"))
    p.add_argument("--source-vectors", required=True)
    p.add_argument("--target-vectors", required=True)
    p.add_argument("--seed-dictionary")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--whiten", action="store_true")
    p.set_defaults(func=do_align)

    p = sub.add_parser("match", help="match categories with one method (config driven)")
    _common(p)
    p.add_argument("method", choices=("cosine", "csls", "string", "hier-string",
                                      "hier-vector", "hier-csls"))
    p.add_argument("--mapping", help="precomputed mapping file")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=do_match)

    p = sub.add_parser("eval", help="accuracy, Fisher test or early screening")
    _common(p)
    p.add_argument("action", choices=("accuracy", "fisher", "screen"))
    p.add_argument("annotations", nargs="*")
    p.add_argument("--table", type=int, nargs=4, metavar=("A", "B", "C", "D"))
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--threshold", type=float, default=0.01)
    p.set_defaults(func=do_eval)

    p = sub.add_parser("project", help="emit 2-D PCA coordinates of both taxonomies")
    _common(p)
    p.set_defaults(func=do_project)

    p = sub.add_parser("run", help="full pipeline from a config file")
    _common(p)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=do_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TaxonomyError, EmbeddingError, EvalError, MatchError, TrainingError,
            FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AlignError, RetrievalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
