"""Embedding matrices, label tables and the train-set class catalog.

Binary layout of an embedding file (little-endian)::

    b"EMB1" | u32 version (=1) | u32 n | u32 dim | n*dim float32, row-major

The ids live in a UTF-8 sidecar, one id per line, line ``i`` naming row ``i``.
"""

from __future__ import annotations

import csv
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CountMismatchError,
    DuplicateIdError,
    EmptyCatalogError,
    FormatError,
    TruncationError,
    ZeroVectorError,
)

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sIII")

NON_LANDMARK = -1
ZERO_NORM = 1e-12
# Rows already this close to unit norm are left untouched so that
# normalize() is exactly idempotent on float32 data.
UNIT_SLACK = 1e-6


def ids_path_for(matrix_path: str | Path) -> Path:
    """Sidecar ids path used by the command line: ``<matrix>.ids``."""
    p = Path(matrix_path)
    return p.with_name(p.name + ".ids")


def _check_ids(ids: Sequence[str]) -> None:
    seen = set()
    for i in ids:
        if "," in i or "\n" in i or "\r" in i:
            raise FormatError(f"image id {i!r} contains a comma or newline")
        if not i:
            raise FormatError("empty image id")
        if i in seen:
            raise DuplicateIdError(f"duplicate image id {i!r}")
        seen.add(i)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Row-aligned image ids and float32 feature vectors.

    The vector array is made read-only on construction so a matrix can be
    shared between worker threads without copying.
    """

    ids: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2:
            raise FormatError("embedding vectors must be a 2-D array")
        if vecs.shape[1] < 1:
            raise FormatError("embedding dimension must be positive")
        ids = tuple(self.ids)
        if len(ids) != vecs.shape[0]:
            raise CountMismatchError(
                f"{len(ids)} ids for {vecs.shape[0]} embedding rows")
        _check_ids(ids)
        if vecs is self.vectors:
            vecs = vecs.copy()
        vecs.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def index(self) -> Dict[str, int]:
        return {i: n for n, i in enumerate(self.ids)}

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors.astype(np.float64), axis=1)


def save_embeddings(m: EmbeddingMatrix, matrix_path: str | Path,
                    ids_path: str | Path | None = None) -> None:
    ids_path = ids_path_for(matrix_path) if ids_path is None else ids_path
    n, dim = m.vectors.shape
    with open(matrix_path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, dim))
        fh.write(m.vectors.astype("<f4", copy=False).tobytes(order="C"))
    with open(ids_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(i + "\n" for i in m.ids)


def load_embeddings(matrix_path: str | Path,
                    ids_path: str | Path | None = None) -> EmbeddingMatrix:
    """Read an embedding file and its ids sidecar; rows are not normalized."""
    ids_path = ids_path_for(matrix_path) if ids_path is None else ids_path
    raw = Path(matrix_path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{matrix_path}: file shorter than header")
    magic, version, n, dim = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{matrix_path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{matrix_path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{matrix_path}: zero dimension")
    expected = HEADER.size + 4 * n * dim
    if len(raw) != expected:
        raise TruncationError(
            f"{matrix_path}: expected {expected} bytes for n={n}, dim={dim}, "
            f"found {len(raw)}")
    vecs = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=HEADER.size)
    vecs = vecs.reshape(n, dim).astype(np.float32)

    text = Path(ids_path).read_text(encoding="utf-8")
    ids = text.split("\n")
    if ids and ids[-1] == "":
        ids.pop()
    if len(ids) != n:
        raise CountMismatchError(
            f"{ids_path}: {len(ids)} ids but header says n={n}")
    return EmbeddingMatrix(tuple(ids), vecs)


def normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm."""
    v = m.vectors.astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    zero = np.flatnonzero(norms < ZERO_NORM)
    if zero.size:
        raise ZeroVectorError(f"zero vector for image id {m.ids[zero[0]]!r}")
    out = (v / norms[:, None]).astype(np.float32)
    keep = np.abs(norms - 1.0) <= UNIT_SLACK
    out[keep] = m.vectors[keep]
    return EmbeddingMatrix(m.ids, out)


@dataclass(frozen=True)
class LabelTable:
    """image id -> class id; ``NON_LANDMARK`` marks non-landmark images."""

    entries: Mapping[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, image_id: str) -> int:
        return self.entries[image_id]

    def __contains__(self, image_id: object) -> bool:
        return image_id in self.entries

    def get(self, image_id: str, default=None):
        return self.entries.get(image_id, default)


def parse_class(value: str, where: str) -> int:
    value = value.strip()
    if value == "":
        return NON_LANDMARK
    try:
        c = int(value)
    except ValueError:
        raise FormatError(f"{where}: class {value!r} is not an integer") from None
    if c < 0:
        raise FormatError(f"{where}: negative class {c}")
    return c


def format_class(c: int) -> str:
    return "" if c == NON_LANDMARK else str(c)


def labels_from_pairs(pairs: Iterable[tuple[str, int]]) -> LabelTable:
    entries: Dict[str, int] = {}
    for image_id, c in pairs:
        if image_id in entries:
            raise DuplicateIdError(f"duplicate label for image id {image_id!r}")
        entries[image_id] = int(c)
    return LabelTable(entries)


def load_labels(path: str | Path) -> LabelTable:
    """Read an ``id,landmark_id`` CSV (extra columns are ignored)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty labels file") from None
        try:
            id_col = header.index("id")
            cls_col = header.index("landmark_id")
        except ValueError:
            raise FormatError(
                f"{path}: header must contain id and landmark_id") from None
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) <= max(id_col, cls_col):
                raise FormatError(f"{path}:{lineno}: too few fields")
            pairs.append((row[id_col].strip(),
                          parse_class(row[cls_col], f"{path}:{lineno}")))
    return labels_from_pairs(pairs)


def save_labels(labels: LabelTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,landmark_id\n")
        for image_id, c in labels.entries.items():
            fh.write(f"{image_id},{format_class(c)}\n")


@dataclass(frozen=True)
class ClassCatalog:
    """Train-set image count per landmark class."""

    counts: Mapping[int, int]
    max_count: int

    def count(self, c: int) -> int:
        return self.counts[c]


def build_catalog(labels: LabelTable) -> ClassCatalog:
    counts = Counter(c for c in labels.entries.values() if c != NON_LANDMARK)
    if not counts:
        raise EmptyCatalogError("no landmark labels to build a class catalog")
    return ClassCatalog(dict(counts), max(counts.values()))
