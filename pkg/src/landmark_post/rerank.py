"""Class-aware adjustment of retrieval similarities.

For a query with top-3 predictions ``(c_j, p_j)`` and an index image with
``(s_k, q_k)``::

    score = cos + sum_{c_j == s_k} g[j][k] p_j q_k - sum_{COND} h[j][k] p_j q_k

where COND is ``c_j != s_k`` (``penalty_condition="mismatch"``, default) or
``c_j == s_k`` (``"match"``).  Empty prediction slots never take part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .class_predict import NO_CLASS, Predictions, PredictionTriple
from .errors import ConfigError, MissingPredictionError
from .knn import RankedList

logger = logging.getLogger(__name__)

SUBMISSION_LIMIT = 100
PENALTY_CONDITIONS = ("mismatch", "match")


def _table(values) -> np.ndarray:
    t = np.array(values, dtype=np.float64)
    if t.shape != (3, 3):
        raise ConfigError("boost/penalty tables must be 3x3")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ConfigError("boost/penalty entries must be finite and non-negative")
    t.flags.writeable = False
    return t


@dataclass(frozen=True, eq=False)
class AdjustmentConfig:
    """Boost table ``g`` and penalty table ``h``, indexed [query rank][index rank]."""

    g: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    h: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    penalty_condition: str = "mismatch"

    def __post_init__(self) -> None:
        object.__setattr__(self, "g", _table(self.g))
        object.__setattr__(self, "h", _table(self.h))
        if self.penalty_condition not in PENALTY_CONDITIONS:
            raise ConfigError(
                f"penalty_condition must be one of {PENALTY_CONDITIONS}, "
                f"got {self.penalty_condition!r}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdjustmentConfig):
            return NotImplemented
        return (np.array_equal(self.g, other.g) and np.array_equal(self.h, other.h)
                and self.penalty_condition == other.penalty_condition)

    @property
    def is_identity(self) -> bool:
        return not self.g.any() and not self.h.any()

    def as_dict(self) -> dict:
        d = {}
        for name, table in (("g", self.g), ("h", self.h)):
            for j in range(3):
                for k in range(3):
                    d[f"{name}{j + 1}{k + 1}"] = float(table[j, k])
        d["penalty_condition"] = self.penalty_condition
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AdjustmentConfig":
        g = np.zeros((3, 3))
        h = np.zeros((3, 3))
        for key, value in d.items():
            if key == "penalty_condition":
                continue
            if len(key) != 3 or key[0] not in "gh" or key[1] not in "123" or key[2] not in "123":
                raise ConfigError(f"unknown rerank key {key!r}")
            (g if key[0] == "g" else h)[int(key[1]) - 1, int(key[2]) - 1] = float(value)
        return cls(g, h, d.get("penalty_condition", "mismatch"))


def pair_weights(qc: np.ndarray, qp: np.ndarray, ic: np.ndarray, ip: np.ndarray):
    """Products ``p_j q_k`` split by whether the (j, k) classes agree.

    Inputs are ``(P, 3)`` arrays for P (query, index) pairs; outputs are two
    ``(P, 9)`` arrays in row-major (j, k) order.
    """
    valid = (qc[:, :, None] != NO_CLASS) & (ic[:, None, :] != NO_CLASS)
    same = qc[:, :, None] == ic[:, None, :]
    w = qp[:, :, None] * ip[:, None, :]
    n = qc.shape[0]
    match = np.where(valid & same, w, 0.0).reshape(n, 9)
    mismatch = np.where(valid & ~same, w, 0.0).reshape(n, 9)
    return match, mismatch


def adjust_scores(cos: np.ndarray, match: np.ndarray, mismatch: np.ndarray,
                  cfg: AdjustmentConfig) -> np.ndarray:
    penalized = mismatch if cfg.penalty_condition == "mismatch" else match
    return cos + match @ cfg.g.ravel() - penalized @ cfg.h.ravel()


def adjust_pair(cos: float, qp: PredictionTriple, ip: PredictionTriple,
                cfg: AdjustmentConfig) -> float:
    match, mismatch = pair_weights(
        np.array([qp.classes]), np.array([qp.confidences], dtype=np.float64),
        np.array([ip.classes]), np.array([ip.confidences], dtype=np.float64))
    return float(adjust_scores(np.array([cos], dtype=np.float64), match, mismatch, cfg)[0])


class PreparedRerank:
    """Ranked lists joined with their prediction triples.

    The per-pair weights do not depend on the config, so they are computed
    once and every :meth:`apply` costs two small matrix-vector products plus
    a sort.
    """

    def __init__(self, lists: Sequence[RankedList], query_preds: Predictions,
                 index_preds: Predictions, limit: int = SUBMISSION_LIMIT) -> None:
        self.query_ids = [rl.query_id for rl in lists]
        self.limit = limit
        sizes = np.array([len(rl) for rl in lists], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.group = np.repeat(np.arange(len(lists)), sizes)
        self.position = np.concatenate(
            [np.arange(n) for n in sizes]) if len(lists) else np.zeros(0, np.int64)
        self.index_ids = np.array(
            [iid for rl in lists for iid in rl.index_ids], dtype=object)
        self.cos = (np.concatenate([rl.scores for rl in lists])
                    if lists else np.zeros(0))

        q_rows = []
        for qid in self.query_ids:
            r = query_preds.index.get(qid)
            if r is None:
                raise MissingPredictionError(f"no prediction triple for query {qid!r}")
            q_rows.append(r)
        i_rows = []
        for iid in self.index_ids:
            r = index_preds.index.get(iid)
            if r is None:
                raise MissingPredictionError(f"no prediction triple for index image {iid!r}")
            i_rows.append(r)
        q_rows = np.asarray(q_rows, dtype=np.int64)[self.group]
        i_rows = np.asarray(i_rows, dtype=np.int64)
        self.match, self.mismatch = pair_weights(
            query_preds.classes[q_rows], query_preds.confidences[q_rows],
            index_preds.classes[i_rows], index_preds.confidences[i_rows])

    def scores(self, cfg: AdjustmentConfig) -> np.ndarray:
        return adjust_scores(self.cos, self.match, self.mismatch, cfg)

    def order(self, cfg: AdjustmentConfig) -> np.ndarray:
        """Flat pair order: by list, adjusted score desc, incoming position."""
        return np.lexsort((self.position, -self.scores(cfg), self.group))

    def apply_ids(self, cfg: AdjustmentConfig) -> List[List[str]]:
        ids = self.index_ids[self.order(cfg)]
        return [ids[a:b][: self.limit].tolist()
                for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def apply(self, cfg: AdjustmentConfig) -> List[RankedList]:
        adjusted = self.scores(cfg)
        order = np.lexsort((self.position, -adjusted, self.group))
        out = []
        for qid, a, b in zip(self.query_ids, self.offsets[:-1], self.offsets[1:]):
            sel = order[a:b][: self.limit]
            out.append(RankedList(qid, self.index_ids[sel].tolist(), adjusted[sel]))
        return out


def rerank_lists(lists: Sequence[RankedList], query_preds: Predictions,
                 index_preds: Predictions, cfg: AdjustmentConfig,
                 limit: int = SUBMISSION_LIMIT) -> List[RankedList]:
    """Replace every score by its adjusted value, re-sort and truncate.

    Items whose adjusted scores tie keep their incoming relative order.
    """
    return PreparedRerank(lists, query_preds, index_preds, limit).apply(cfg)
