"""Top-3 class predictions with confidences.

Predictions come either from kNN voting against a labeled train gallery or
from an external classifier's probabilities.  Both produce
:class:`Predictions`, a column-wise table of ``(n, 3)`` classes and
confidences that the reranker consumes directly.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .embed_store import (
    NON_LANDMARK,
    EmbeddingMatrix,
    LabelTable,
    format_class,
    parse_class,
)
from .errors import (
    CardinalityError,
    DuplicateIdError,
    FormatError,
    MissingLabelError,
    RangeError,
)
from .knn import RankedList, cosine_topk

NO_CLASS = NON_LANDMARK
TOP = 3
DEFAULT_K = 10


@dataclass(frozen=True)
class ClassPrediction:
    klass: int
    confidence: float


@dataclass(frozen=True)
class PredictionTriple:
    image_id: str
    predictions: Tuple[ClassPrediction, ClassPrediction, ClassPrediction]

    @property
    def classes(self) -> Tuple[int, ...]:
        return tuple(p.klass for p in self.predictions)

    @property
    def confidences(self) -> Tuple[float, ...]:
        return tuple(p.confidence for p in self.predictions)


def rank_scores(scores: Mapping[int, float]) -> List[Tuple[int, float]]:
    """Positive-score classes, best first (confidence desc, class asc)."""
    return sorted(((c, s) for c, s in scores.items() if s > 0),
                  key=lambda cs: (-cs[1], cs[0]))


def make_triple(image_id: str, ranked: Sequence[Tuple[int, float]]) -> PredictionTriple:
    slots = [ClassPrediction(int(c), float(p)) for c, p in ranked[:TOP]]
    slots += [ClassPrediction(NO_CLASS, 0.0)] * (TOP - len(slots))
    return PredictionTriple(image_id, tuple(slots))


class Predictions:
    """Prediction triples for a set of images, stored as arrays."""

    def __init__(self, ids: Sequence[str], classes, confidences) -> None:
        self.ids = tuple(ids)
        self.classes = np.asarray(classes, dtype=np.int64).reshape(-1, TOP)
        self.confidences = np.asarray(confidences, dtype=np.float64).reshape(-1, TOP)
        if not (len(self.ids) == self.classes.shape[0] == self.confidences.shape[0]):
            raise FormatError("prediction ids, classes and confidences differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateIdError("duplicate image id in predictions")

    @classmethod
    def from_triples(cls, triples: Iterable[PredictionTriple]) -> "Predictions":
        triples = list(triples)
        return cls([t.image_id for t in triples],
                   [t.classes for t in triples],
                   [t.confidences for t in triples])

    @cached_property
    def index(self) -> Dict[str, int]:
        return {i: n for n, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: object) -> bool:
        return image_id in self.index

    def __getitem__(self, image_id: str) -> PredictionTriple:
        r = self.index[image_id]
        return PredictionTriple(image_id, tuple(
            ClassPrediction(int(c), float(p))
            for c, p in zip(self.classes[r], self.confidences[r])))

    def triples(self) -> List[PredictionTriple]:
        return [self[i] for i in self.ids]


def vote(neighbor_labels: Sequence[int], sims: Sequence[float]) -> Dict[int, float]:
    """Per-class sum of positively clamped similarities, normalized to sum 1.

    Neighbors labeled non-landmark carry no vote.  Returns an empty dict when
    nothing has positive mass.
    """
    raw: Dict[int, float] = defaultdict(float)
    for c, s in zip(neighbor_labels, sims):
        if c != NON_LANDMARK and s > 0:
            raw[int(c)] += float(s)
    total = sum(raw.values())
    if total <= 0:
        return {}
    return {c: s / total for c, s in raw.items()}


def neighbor_labels(lists: Sequence[RankedList], labels: LabelTable) -> List[List[int]]:
    out = []
    for rl in lists:
        row = []
        for iid in rl.index_ids:
            c = labels.get(iid)
            if c is None:
                raise MissingLabelError(f"train image {iid!r} has no label")
            row.append(c)
        out.append(row)
    return out


def check_train_labels(train: EmbeddingMatrix, labels: LabelTable) -> None:
    for iid in train.ids:
        if iid not in labels:
            raise MissingLabelError(f"train image {iid!r} has no label")


def predict_top3(images: EmbeddingMatrix, train: EmbeddingMatrix,
                 train_labels: LabelTable, K: int = DEFAULT_K, *,
                 threads: int = 1) -> Predictions:
    """kNN class votes of every image against the labeled train gallery."""
    check_train_labels(train, train_labels)
    lists = cosine_topk(images, train, K, threads=threads)
    triples = []
    for rl, labs in zip(lists, neighbor_labels(lists, train_labels)):
        triples.append(make_triple(rl.query_id, rank_scores(vote(labs, rl.scores))))
    return Predictions.from_triples(triples)


def load_external_probs(path: str | Path) -> Predictions:
    """Read classifier probabilities from ``id,class,prob`` rows.

    A leading ``id,class,prob`` header line is optional.
    """
    per_id: Dict[str, Dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and [f.strip() for f in row] == ["id", "class", "prob"]:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected id,class,prob")
            image_id = row[0].strip()
            c = parse_class(row[1], f"{path}:{lineno}")
            if c == NON_LANDMARK:
                raise FormatError(f"{path}:{lineno}: missing class")
            try:
                p = float(row[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad probability {row[2]!r}") from None
            if not 0.0 <= p <= 1.0:
                raise RangeError(f"{path}:{lineno}: probability {p} outside [0, 1]")
            probs = per_id.setdefault(image_id, {})
            if c in probs:
                raise FormatError(f"{path}:{lineno}: class {c} repeated for {image_id!r}")
            if len(probs) == TOP:
                raise CardinalityError(f"more than {TOP} rows for image id {image_id!r}")
            probs[c] = p
    triples = []
    for image_id, probs in per_id.items():
        ranked = sorted(probs.items(), key=lambda cs: (-cs[1], cs[0]))
        triples.append(make_triple(image_id, ranked))
    return Predictions.from_triples(triples)


def save_predictions(preds: Predictions, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,rank,class,confidence\n")
        for image_id, cs, ps in zip(preds.ids, preds.classes, preds.confidences):
            for rank, (c, p) in enumerate(zip(cs, ps), start=1):
                fh.write(f"{image_id},{rank},{format_class(int(c))},{p:.9f}\n")


def load_predictions(path: str | Path) -> Predictions:
    """Read the ``id,rank,class,confidence`` file written by :func:`save_predictions`."""
    rows: Dict[str, Dict[int, Tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
                "id", "rank", "class", "confidence"]:
            raise FormatError(f"{path}: expected header id,rank,class,confidence")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields")
            where = f"{path}:{lineno}"
            try:
                rank, conf = int(row[1]), float(row[3])
            except ValueError:
                raise FormatError(f"{where}: bad rank or confidence") from None
            if not 1 <= rank <= TOP:
                raise FormatError(f"{where}: rank {rank} outside 1..{TOP}")
            if not np.isfinite(conf) or conf < 0:
                raise RangeError(f"{where}: confidence {conf} is not a finite non-negative value")
            slots = rows.setdefault(row[0], {})
            if rank in slots:
                raise CardinalityError(f"{where}: rank {rank} repeated for {row[0]!r}")
            slots[rank] = (parse_class(row[2], where), conf)
    ids, classes, confs = [], [], []
    for image_id, slots in rows.items():
        ids.append(image_id)
        classes.append([slots.get(r, (NO_CLASS, 0.0))[0] for r in range(1, TOP + 1)])
        confs.append([slots.get(r, (NO_CLASS, 0.0))[1] for r in range(1, TOP + 1)])
    return Predictions(ids, np.reshape(classes, (-1, TOP)), np.reshape(confs, (-1, TOP)))
