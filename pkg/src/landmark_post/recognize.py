"""Recognition post-processing: one (class, confidence) per query.

Per query, in order:

1. take the top-K train neighbors and lower each similarity by
   ``gamma * log(1 + count) / log(1 + max_count)`` of the neighbor's class;
2. vote as in :func:`landmark_post.class_predict.vote`;
3. blend with classifier probabilities, ``alpha * knn + (1 - alpha) * prob``;
4. subtract ``beta`` times the mean of the top ``t_nl`` non-landmark
   similarities, clamping at zero;
5. drop the query entirely when its ``t_nl``-th best non-landmark similarity
   exceeds ``theta``;
6. emit the best class (ties to the smaller class id).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Dict, List, Optional

import numpy as np

from .class_predict import NO_CLASS, Predictions, check_train_labels, neighbor_labels, vote
from .embed_store import NON_LANDMARK, ClassCatalog, EmbeddingMatrix, LabelTable
from .errors import CatalogError, ConfigError, NonLandmarkSetError
from .knn import cosine_topk, cross_max_topt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecognitionConfig:
    alpha: float = 1.0
    beta: float = 0.0
    t_nl: int = 5
    theta: float = 0.5
    gamma: float = 0.0
    K: int = 10

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("t_nl", "K"):
                if int(v) != v or v < 1:
                    raise ConfigError(f"{f.name} must be a positive integer, got {v!r}")
                object.__setattr__(self, f.name, int(v))
            else:
                v = float(v)
                if math.isnan(v) or (f.name != "theta" and math.isinf(v)):
                    raise ConfigError(f"{f.name} must be finite, got {v!r}")
                object.__setattr__(self, f.name, v)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be non-negative")
        if self.theta == -math.inf:
            raise ConfigError("theta must not be -inf")

    @property
    def hard_filter(self) -> bool:
        return math.isfinite(self.theta)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RecognitionResult:
    query_id: str
    klass: int
    confidence: float


def count_penalty(counts: np.ndarray, max_count: int) -> np.ndarray:
    """log(1 + count) / log(1 + max_count), in [0, 1] for 1 <= count <= max_count."""
    return np.log1p(counts) / math.log1p(max_count)


class PreparedRecognition:
    """Neighbor lists and non-landmark similarities, reusable across configs.

    ``K`` and ``t_nl`` here are upper bounds; :meth:`run` may use any
    smaller values.
    """

    def __init__(self, queries: EmbeddingMatrix, train: EmbeddingMatrix,
                 train_labels: LabelTable, catalog: ClassCatalog,
                 nonlandmarks: Optional[EmbeddingMatrix] = None,
                 external_probs: Optional[Predictions] = None, *,
                 K: int = 10, t_nl: int = 5, threads: int = 1) -> None:
        check_train_labels(train, train_labels)
        for iid in train.ids:
            c = train_labels[iid]
            if c != NON_LANDMARK and c not in catalog.counts:
                raise CatalogError(f"class {c} of train image {iid!r} missing from catalog")
        self.query_ids = list(queries.ids)
        self.K = K
        self.t_nl = t_nl
        lists = cosine_topk(queries, train, K, threads=threads)
        self.labels = np.array(neighbor_labels(lists, train_labels), dtype=np.int64)
        self.sims = np.array([rl.scores for rl in lists], dtype=np.float64)
        counts = np.array([[catalog.counts.get(c, 0) for c in row] for row in self.labels],
                          dtype=np.float64).reshape(self.labels.shape)
        self.penalty = count_penalty(counts, catalog.max_count)
        if nonlandmarks is not None and len(nonlandmarks) > 0:
            self.nl_top = cross_max_topt(queries, nonlandmarks, t_nl, threads=threads)
        else:
            self.nl_top = None
        self.probs = external_probs

    def run(self, cfg: RecognitionConfig) -> List[RecognitionResult]:
        if cfg.K > self.K or cfg.t_nl > self.t_nl:
            raise ConfigError("config asks for more neighbors than were prepared")
        if self.nl_top is None and (cfg.beta > 0 or cfg.hard_filter):
            raise NonLandmarkSetError(
                "a non-empty non-landmark set is required when beta > 0 "
                "or the hard filter is enabled")
        alpha = cfg.alpha if self.probs is not None else 1.0
        out = []
        for r, qid in enumerate(self.query_ids):
            sims = self.sims[r, :cfg.K] - cfg.gamma * self.penalty[r, :cfg.K]
            conf: Dict[int, float] = {
                c: alpha * p for c, p in vote(self.labels[r, :cfg.K], sims).items()}
            if alpha < 1.0:
                row = self.probs.index.get(qid)
                if row is not None:
                    for c, p in zip(self.probs.classes[row], self.probs.confidences[row]):
                        if c != NO_CLASS:
                            conf[int(c)] = conf.get(int(c), 0.0) + (1.0 - alpha) * float(p)

            if self.nl_top is not None:
                top = self.nl_top[r, :cfg.t_nl]
                if cfg.beta > 0:
                    shift = cfg.beta * float(top.mean())
                    conf = {c: max(0.0, v - shift) for c, v in conf.items()}
                if cfg.hard_filter and top.size >= cfg.t_nl and top[cfg.t_nl - 1] > cfg.theta:
                    out.append(RecognitionResult(qid, NO_CLASS, 0.0))
                    continue

            best = min(conf.items(), key=lambda cv: (-cv[1], cv[0]), default=None)
            if best is None or best[1] <= 0:
                out.append(RecognitionResult(qid, NO_CLASS, 0.0))
            else:
                out.append(RecognitionResult(qid, best[0], best[1]))
        return out


def recognize(queries: EmbeddingMatrix, train: EmbeddingMatrix, train_labels: LabelTable,
              catalog: ClassCatalog, nonlandmarks: Optional[EmbeddingMatrix] = None,
              external_probs: Optional[Predictions] = None,
              cfg: RecognitionConfig = RecognitionConfig(), *,
              threads: int = 1) -> List[RecognitionResult]:
    prepared = PreparedRecognition(queries, train, train_labels, catalog, nonlandmarks,
                                   external_probs, K=cfg.K, t_nl=cfg.t_nl, threads=threads)
    return prepared.run(cfg)
