"""Kaggle-style submission and solution files.

Retrieval files are ``id,images`` with space-separated index ids; recognition
files are ``id,landmarks`` where a submission value is ``"<class> <confidence>"``
and a solution value is the class (both empty for non-landmark).
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Sequence

from .class_predict import NO_CLASS
from .embed_store import parse_class
from .errors import DuplicateIdError, FormatError
from .knn import RankedList
from .recognize import RecognitionResult


def _rows(path: str | Path, value_col: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:1] != ["id"] or value_col not in header:
            raise FormatError(f"{path}: header must start with id and contain {value_col}")
        col = header.index(value_col)
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) <= col:
                raise FormatError(f"{path}:{lineno}: too few fields")
            qid = row[0].strip()
            if qid in seen:
                raise DuplicateIdError(f"{path}:{lineno}: query {qid!r} repeated")
            seen.add(qid)
            yield f"{path}:{lineno}", qid, row[col].strip()


def write_retrieval_submission(lists: Sequence[RankedList], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,images\n")
        for rl in lists:
            fh.write(f"{rl.query_id},{' '.join(rl.index_ids)}\n")


def load_retrieval_submission(path: str | Path) -> Dict[str, List[str]]:
    return {qid: value.split() for _, qid, value in _rows(path, "images")}


def load_retrieval_truth(path: str | Path) -> Dict[str, set]:
    """``id,images`` solution file: the relevant index ids of every query."""
    return {qid: set(value.split()) for _, qid, value in _rows(path, "images")}


def write_retrieval_truth(truth: Dict[str, set], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,images\n")
        for qid, rel in truth.items():
            fh.write(f"{qid},{' '.join(sorted(rel))}\n")


def write_recognition_submission(results: Sequence[RecognitionResult],
                                 path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,landmarks\n")
        for r in results:
            value = "" if r.klass == NO_CLASS else f"{r.klass} {r.confidence:.6f}"
            fh.write(f"{r.query_id},{value}\n")


def load_recognition_submission(path: str | Path) -> List[RecognitionResult]:
    out = []
    for where, qid, value in _rows(path, "landmarks"):
        parts = value.split()
        if not parts:
            out.append(RecognitionResult(qid, NO_CLASS, 0.0))
            continue
        if len(parts) != 2:
            raise FormatError(f"{where}: expected '<class> <confidence>'")
        try:
            conf = float(parts[1])
        except ValueError:
            raise FormatError(f"{where}: bad confidence {parts[1]!r}") from None
        out.append(RecognitionResult(qid, parse_class(parts[0], where), conf))
    return out


def load_recognition_truth(path: str | Path) -> Dict[str, int]:
    return {qid: parse_class(value, where) for where, qid, value in _rows(path, "landmarks")}


def write_recognition_truth(truth: Dict[str, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,landmarks\n")
        for qid, c in truth.items():
            fh.write(f"{qid},{'' if c == NO_CLASS else c}\n")
