"""Command line entry point: ``landmark-post <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 bad data or configuration.
Logs go to stderr; metrics are printed on stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import List, Optional, Sequence

import numpy as np

from . import config as cfgmod
from .class_predict import DEFAULT_K, load_external_probs, load_predictions, predict_top3, save_predictions
from .embed_store import build_catalog, load_embeddings, load_labels, normalize, save_embeddings
from .errors import DataError
from .fusion import FusionMember, fuse_concat
from .knn import cosine_topk, load_ranked, save_ranked
from .metrics import gap, map_at_100
from .recognize import PreparedRecognition, recognize
from .rerank import PreparedRerank, rerank_lists
from .submission import (
    load_recognition_submission,
    load_recognition_truth,
    load_retrieval_submission,
    load_retrieval_truth,
    write_recognition_submission,
    write_retrieval_submission,
)
from .tuner import load_grid, tune_recognition, tune_rerank, write_table

logger = logging.getLogger("landmark_post")

SUBCOMMANDS = ("normalize", "fuse", "search", "predict-classes", "rerank", "recognize",
               "evaluate-retrieval", "evaluate-recognition", "tune", "synth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _member(spec: str) -> tuple[str, float]:
    path, sep, weight = spec.rpartition(":")
    if sep:
        try:
            return path, float(weight)
        except ValueError:
            pass
    return spec, 1.0


def _positive(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not an integer") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_positive, default=None,
                        help="worker threads (default: [io] threads or 1)")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="landmark-post",
                     description="Landmark retrieval/recognition post-processing.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("normalize", parents=[common], help="scale rows to unit norm")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", parents=[common], help="concatenate weighted members")
    p.add_argument("--member", action="append", required=True, metavar="PATH[:WEIGHT]")
    p.add_argument("--out", required=True)

    p = sub.add_parser("search", parents=[common], help="exact cosine top-k")
    p.add_argument("--queries", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--k", type=_positive, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--block-queries", type=_positive)
    p.add_argument("--block-gallery", type=_positive)

    p = sub.add_parser("predict-classes", parents=[common], help="kNN top-3 classes")
    p.add_argument("--images", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--K", type=_positive, default=DEFAULT_K)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerank", parents=[common], help="class-aware similarity adjustment")
    p.add_argument("--ranked", required=True)
    p.add_argument("--query-preds", required=True)
    p.add_argument("--index-preds", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("recognize", parents=[common], help="recognition post-processing")
    p.add_argument("--queries", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--nonlandmarks", required=True)
    p.add_argument("--probs")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    for name in ("evaluate-retrieval", "evaluate-recognition"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--submission", required=True)
        p.add_argument("--truth", required=True)

    p = sub.add_parser("tune", parents=[common], help="grid search on validation data")
    p.add_argument("--target", choices=cfgmod.TARGETS)
    p.add_argument("--grid", required=True)
    p.add_argument("--config", help="base config for parameters not in the grid")
    p.add_argument("--truth", required=True)
    p.add_argument("--out-table", required=True)
    p.add_argument("--out-config", required=True)
    p.add_argument("--ranked")
    p.add_argument("--query-preds")
    p.add_argument("--index-preds")
    p.add_argument("--queries")
    p.add_argument("--train")
    p.add_argument("--labels")
    p.add_argument("--nonlandmarks")
    p.add_argument("--probs")

    p = sub.add_parser("synth", parents=[common], help="write a seeded planted-cluster fixture")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--views", type=_positive, default=1)
    p.add_argument("--query-spread", type=float, default=1.6)
    return parser


def _threads(args, cfg: cfgmod.PipelineConfig) -> int:
    return args.threads if args.threads is not None else cfg.io.threads


def _warn_unnormalized(m, name: str) -> None:
    if len(m) and np.max(np.abs(m.norms() - 1.0)) > 1e-3:
        logger.warning("%s rows are not unit norm; scores are not cosines", name)


def cmd_normalize(args) -> None:
    save_embeddings(normalize(load_embeddings(args.input)), args.out)


def cmd_fuse(args) -> None:
    members = [FusionMember(load_embeddings(path), w) for path, w in map(_member, args.member)]
    save_embeddings(fuse_concat(members), args.out)


def cmd_search(args) -> None:
    cfg = cfgmod.load_config(args.config)
    q, g = load_embeddings(args.queries), load_embeddings(args.gallery)
    _warn_unnormalized(q, "query")
    _warn_unnormalized(g, "gallery")
    lists = cosine_topk(q, g, args.k, threads=_threads(args, cfg),
                        block_queries=args.block_queries or cfg.io.block_queries,
                        block_gallery=args.block_gallery or cfg.io.block_gallery)
    save_ranked(lists, args.out)


def cmd_predict(args) -> None:
    preds = predict_top3(load_embeddings(args.images), load_embeddings(args.train),
                         load_labels(args.labels), args.K, threads=args.threads or 1)
    save_predictions(preds, args.out)


def cmd_rerank(args) -> None:
    cfg = cfgmod.load_config(args.config)
    lists = rerank_lists(load_ranked(args.ranked), load_predictions(args.query_preds),
                         load_predictions(args.index_preds), cfg.rerank)
    write_retrieval_submission(lists, args.out)


def cmd_recognize(args) -> None:
    cfg = cfgmod.load_config(args.config)
    labels = load_labels(args.labels)
    probs = load_external_probs(args.probs) if args.probs else None
    results = recognize(load_embeddings(args.queries), load_embeddings(args.train), labels,
                        build_catalog(labels), load_embeddings(args.nonlandmarks), probs,
                        cfg.recognize, threads=_threads(args, cfg))
    write_recognition_submission(results, args.out)


def cmd_evaluate_retrieval(args) -> None:
    score = map_at_100(load_retrieval_submission(args.submission),
                       load_retrieval_truth(args.truth))
    print(f"{score:.6f}")


def cmd_evaluate_recognition(args) -> None:
    score = gap(load_recognition_submission(args.submission),
                load_recognition_truth(args.truth))
    print(f"{score:.6f}")


def _require(args, names: Sequence[str], target: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"tune --target {target} requires {' '.join(missing)}")


def cmd_tune(args) -> None:
    base = cfgmod.load_config(args.config)
    grid = load_grid(args.grid, target=args.target)
    threads = _threads(args, base)
    if grid.target == "map_at_100":
        _require(args, ["ranked", "query_preds", "index_preds"], grid.target)
        prepared = PreparedRerank(load_ranked(args.ranked), load_predictions(args.query_preds),
                                  load_predictions(args.index_preds))
        result = tune_rerank(grid, prepared, load_retrieval_truth(args.truth), base.rerank,
                             threads=threads)
        best = {"rerank": result.best_config.as_dict()}
    else:
        _require(args, ["queries", "train", "labels", "nonlandmarks"], grid.target)
        labels = load_labels(args.labels)
        k_max = max([base.recognize.K, *grid.params.get("K", [])])
        t_max = max([base.recognize.t_nl, *grid.params.get("t_nl", [])])
        prepared = PreparedRecognition(
            load_embeddings(args.queries), load_embeddings(args.train), labels,
            build_catalog(labels), load_embeddings(args.nonlandmarks),
            load_external_probs(args.probs) if args.probs else None,
            K=k_max, t_nl=t_max, threads=threads)
        result = tune_recognition(grid, prepared, load_recognition_truth(args.truth),
                                  base.recognize, threads=threads)
        best = {"recognize": result.best_config.as_dict()}
    write_table(result, list(grid.params), args.out_table)
    cfgmod.write_config(best, args.out_config)
    print(f"{result.best_score:.6f}")


def cmd_synth(args) -> None:
    from .synthetic import planted_clusters, write_dataset

    write_dataset(planted_clusters(args.seed, views=args.views,
                                   query_spread=args.query_spread), args.out_dir)


HANDLERS = {
    "normalize": cmd_normalize,
    "fuse": cmd_fuse,
    "search": cmd_search,
    "predict-classes": cmd_predict,
    "rerank": cmd_rerank,
    "recognize": cmd_recognize,
    "evaluate-retrieval": cmd_evaluate_retrieval,
    "evaluate-recognition": cmd_evaluate_recognition,
    "tune": cmd_tune,
    "synth": cmd_synth,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv or argv[0] not in SUBCOMMANDS:
            if argv and argv[0] in ("-h", "--help"):
                parser.print_help()
                return 0
            parser.error(f"expected a subcommand, one of: {', '.join(SUBCOMMANDS)}")
        args = parser.parse_args(argv)
        logging.basicConfig(stream=sys.stderr, level=args.log_level,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        logging.getLogger("landmark_post").setLevel(args.log_level)
        t0 = time.perf_counter()
        HANDLERS[args.command](args)
        logger.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        # argparse exits 0 after --help
        return 0 if exc.code in (0, None) else 1
    except (DataError, OSError) as exc:
        print(f"landmark-post: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
