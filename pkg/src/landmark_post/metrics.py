"""Competition metrics: mAP@100 for retrieval and GAP for recognition."""

from __future__ import annotations

import logging
from typing import Iterable, Mapping, Sequence, Set

from .class_predict import NO_CLASS
from .errors import DuplicateInListError, UnknownQueryError

logger = logging.getLogger(__name__)

MAP_CUTOFF = 100


def average_precision(ranked: Sequence[str], relevant: Set[str],
                      cutoff: int = MAP_CUTOFF) -> float:
    """AP@cutoff, normalized by ``min(len(relevant), cutoff)``."""
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for k, iid in enumerate(ranked[:cutoff], start=1):
        if iid in relevant:
            hits += 1
            total += hits / k
    return total / min(len(relevant), cutoff)


def map_at_100(submission: Mapping[str, Sequence[str]],
               truth: Mapping[str, Iterable[str]]) -> float:
    """Mean AP@100 over queries that have at least one relevant item.

    Queries missing from the submission score 0; submission entries for
    queries outside ``truth`` are ignored.
    """
    for qid, ranked in submission.items():
        if len(set(ranked)) != len(ranked):
            raise DuplicateInListError(f"duplicate index id in list of query {qid!r}")
    scored = [(qid, set(rel)) for qid, rel in truth.items()]
    scored = [(qid, rel) for qid, rel in scored if rel]
    if not scored:
        logger.warning("no query has a relevant item; mAP@100 defined as 0")
        return 0.0
    total = sum(average_precision(submission.get(qid, ()), rel) for qid, rel in scored)
    return total / len(scored)


def gap(results: Iterable, truth: Mapping[str, int]) -> float:
    """Global average precision (micro-AP) with one prediction per query.

    ``results`` holds objects with ``query_id``, ``klass`` and ``confidence``
    (see :class:`landmark_post.recognize.RecognitionResult`); predictions of
    ``NO_CLASS`` are skipped.  ``truth`` maps every query to its class or to
    ``NO_CLASS`` for non-landmark queries.
    """
    preds = []
    seen = set()
    for r in results:
        if r.query_id not in truth:
            raise UnknownQueryError(f"prediction for unknown query {r.query_id!r}")
        if r.query_id in seen:
            raise DuplicateInListError(f"more than one prediction for query {r.query_id!r}")
        seen.add(r.query_id)
        if r.klass != NO_CLASS:
            preds.append((-float(r.confidence), r.query_id, r.klass))
    n_landmark = sum(1 for c in truth.values() if c != NO_CLASS)
    if n_landmark == 0:
        logger.warning("no landmark queries in truth; GAP defined as 0")
        return 0.0
    preds.sort()
    correct = 0
    total = 0.0
    for i, (_, qid, klass) in enumerate(preds, start=1):
        t = truth[qid]
        if t != NO_CLASS and klass == t:
            correct += 1
            total += correct / i
    return total / n_landmark
