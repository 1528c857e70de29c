"""Exact top-k cosine search over a gallery.

Scores are computed in two passes.  A float32 matrix product over
(query block x gallery block) tiles keeps a slightly oversized candidate
buffer per query; the candidates are then re-scored in float64 and sorted by
(score desc, index id asc).  The float32 rounding error of a dot product is
bounded, so a buffer is provably complete when its weakest entry sits more
than twice that bound below the k-th float32 score.  Rows failing that check
fall back to a full float64 scan.  Results therefore do not depend on block
sizes, thread count or BLAS kernels.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .embed_store import EmbeddingMatrix
from .errors import DimError, EmptyGalleryError, FormatError

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_QUERIES = 256
DEFAULT_BLOCK_GALLERY = 16384
_F32_UNIT = 2.0 ** -24
_RESCORE_ROWS = 64


@dataclass(frozen=True)
class Neighbor:
    index_id: str
    score: float


@dataclass
class RankedList:
    """Gallery hits for one query, best first.

    Stored column-wise since lists are typically handled in bulk.
    """

    query_id: str
    index_ids: List[str] = field(default_factory=list)
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.index_ids = list(self.index_ids)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.index_ids),):
            raise FormatError(
                f"query {self.query_id!r}: {len(self.index_ids)} ids but "
                f"{self.scores.size} scores")

    def __len__(self) -> int:
        return len(self.index_ids)

    @property
    def neighbors(self) -> List[Neighbor]:
        return [Neighbor(i, float(s)) for i, s in zip(self.index_ids, self.scores)]

    def __iter__(self) -> Iterator[Neighbor]:
        return iter(self.neighbors)


def _dot_exact(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    # Elementwise product then a last-axis reduction: the summation order per
    # pair is fixed by d alone, independent of how many rows are batched.
    return np.sum(rows.astype(np.float64) * q.astype(np.float64), axis=-1)


def _top_buffer(s: np.ndarray, idx: np.ndarray, width: int):
    """Keep the ``width`` largest entries of every row (unordered)."""
    if s.shape[1] <= width:
        return s, idx
    cut = s.shape[1] - width
    part = np.argpartition(s, cut, axis=1)[:, cut:]
    return (np.take_along_axis(s, part, axis=1),
            np.take_along_axis(idx, part, axis=1))


def _order_rows(idx: np.ndarray, exact: np.ndarray, k: int):
    # idx is the gallery position in id-sorted order, so ascending idx is
    # ascending index id.
    order = np.lexsort((idx, -exact), axis=-1)[:, :k]
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(exact, order, axis=1)


class _Searcher:
    def __init__(self, gallery: np.ndarray, k: int, block_gallery: int) -> None:
        self.gallery = gallery
        self.k = min(k, gallery.shape[0])
        self.block_gallery = block_gallery
        n, d = gallery.shape
        self.width = min(n, self.k + max(8, self.k // 4))
        gmax = float(np.max(np.linalg.norm(gallery.astype(np.float64), axis=1)))
        gamma = d * _F32_UNIT / max(1e-12, 1.0 - d * _F32_UNIT)
        self.err_scale = 1.01 * gamma * gmax

    def _full_scan(self, q: np.ndarray):
        n = self.gallery.shape[0]
        exact = np.empty(n, dtype=np.float64)
        step = 4096
        for g0 in range(0, n, step):
            exact[g0:g0 + step] = _dot_exact(self.gallery[g0:g0 + step], q)
        idx = np.arange(n)
        order = np.lexsort((idx, -exact))[: self.k]
        return idx[order], exact[order]

    def search_block(self, q: np.ndarray):
        g = self.gallery
        n = g.shape[0]
        bq = q.shape[0]
        best_s = np.empty((bq, 0), dtype=np.float32)
        best_i = np.empty((bq, 0), dtype=np.int64)
        for g0 in range(0, n, self.block_gallery):
            blk = g[g0:g0 + self.block_gallery]
            s = q @ blk.T
            cols = np.broadcast_to(np.arange(g0, g0 + blk.shape[0]), s.shape)
            s, i = _top_buffer(s, cols, self.width)
            best_s, best_i = _top_buffer(np.concatenate([best_s, s], axis=1),
                                         np.concatenate([best_i, i], axis=1),
                                         self.width)

        k = self.k
        if best_s.shape[1] == n:
            complete = np.ones(bq, dtype=bool)
        else:
            w = best_s.shape[1]
            kth = np.partition(best_s, w - k, axis=1)[:, w - k].astype(np.float64)
            eps = self.err_scale * np.linalg.norm(q.astype(np.float64), axis=1) + 1e-12
            complete = best_s.min(axis=1).astype(np.float64) < kth - 2.0 * eps

        out_i = np.empty((bq, k), dtype=np.int64)
        out_s = np.empty((bq, k), dtype=np.float64)
        for r0 in range(0, bq, _RESCORE_ROWS):
            sl = slice(r0, r0 + _RESCORE_ROWS)
            cand = best_i[sl]
            exact = _dot_exact(g[cand], q[sl][:, None, :])
            out_i[sl], out_s[sl] = _order_rows(cand, exact, k)
        for r in np.flatnonzero(~complete):
            out_i[r], out_s[r] = self._full_scan(q[r])
        return out_i, out_s, int(np.count_nonzero(~complete))


def topk_search(queries: np.ndarray, gallery: np.ndarray, k: int, *,
                threads: int = 1,
                block_queries: int = DEFAULT_BLOCK_QUERIES,
                block_gallery: int = DEFAULT_BLOCK_GALLERY):
    """Exact top-k inner products on raw arrays.

    Ties are broken by ascending gallery row position.  Returns
    ``(positions, scores)`` of shape ``(n_queries, min(k, n_gallery))``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if block_queries < 1 or block_gallery < 1:
        raise ValueError("block sizes must be >= 1")
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    gallery = np.ascontiguousarray(gallery, dtype=np.float32)
    if gallery.shape[0] == 0:
        raise EmptyGalleryError("gallery is empty")
    if queries.shape[1] != gallery.shape[1]:
        raise DimError(
            f"query dim {queries.shape[1]} != gallery dim {gallery.shape[1]}")
    searcher = _Searcher(gallery, k, block_gallery)
    nq = queries.shape[0]
    starts = range(0, nq, block_queries)
    positions = np.empty((nq, searcher.k), dtype=np.int64)
    scores = np.empty((nq, searcher.k), dtype=np.float64)

    def run(q0: int) -> int:
        i, s, fallbacks = searcher.search_block(queries[q0:q0 + block_queries])
        positions[q0:q0 + block_queries] = i
        scores[q0:q0 + block_queries] = s
        return fallbacks

    threads = max(1, int(threads))
    with threadpool_limits(limits=1, user_api="blas"):
        if threads == 1:
            fallbacks = sum(run(q0) for q0 in starts)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                fallbacks = sum(pool.map(run, starts))
    if fallbacks:
        logger.debug("%d queries needed a full float64 rescan", fallbacks)
    return positions, scores


def _sorted_gallery(gallery: EmbeddingMatrix):
    order = sorted(range(len(gallery)), key=gallery.ids.__getitem__)
    ids = [gallery.ids[i] for i in order]
    vecs = gallery.vectors[np.asarray(order, dtype=np.int64)]
    return ids, vecs


def _check_pair(queries: EmbeddingMatrix, gallery: EmbeddingMatrix) -> None:
    if len(gallery) == 0:
        raise EmptyGalleryError("gallery is empty")
    if queries.dim != gallery.dim:
        raise DimError(f"query dim {queries.dim} != gallery dim {gallery.dim}")


def cosine_topk(queries: EmbeddingMatrix, gallery: EmbeddingMatrix, k: int, *,
                threads: int = 1,
                block_queries: int = DEFAULT_BLOCK_QUERIES,
                block_gallery: int = DEFAULT_BLOCK_GALLERY) -> List[RankedList]:
    """For every query, the ``k`` most similar gallery items (both inputs unit-norm)."""
    _check_pair(queries, gallery)
    t0 = time.perf_counter()
    ids, vecs = _sorted_gallery(gallery)
    pos, scores = topk_search(queries.vectors, vecs, k, threads=threads,
                              block_queries=block_queries,
                              block_gallery=block_gallery)
    ids_arr = np.asarray(ids, dtype=object)
    lists = [RankedList(qid, ids_arr[p].tolist(), s)
             for qid, p, s in zip(queries.ids, pos, scores)]
    logger.info("searched %d queries x %d gallery (d=%d, k=%d) in %.2fs",
                len(queries), len(gallery), queries.dim, k,
                time.perf_counter() - t0)
    return lists


def cross_max_topt(queries: EmbeddingMatrix, reference: EmbeddingMatrix, t: int, *,
                   threads: int = 1) -> np.ndarray:
    """The ``t`` highest cosines of each query against ``reference``, descending.

    Returns an array of shape ``(n_queries, min(t, len(reference)))``.
    """
    _check_pair(queries, reference)
    _, scores = topk_search(queries.vectors, reference.vectors, t, threads=threads)
    return scores


def default_threads() -> int:
    return os.cpu_count() or 1


def save_ranked(lists: Sequence[RankedList], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query_id,index_id,rank,score\n")
        for rl in lists:
            for rank, (iid, s) in enumerate(zip(rl.index_ids, rl.scores), start=1):
                fh.write(f"{rl.query_id},{iid},{rank},{s:.6f}\n")


def load_ranked(path: str | Path) -> List[RankedList]:
    """Read a ranked CSV; query order follows first appearance."""
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
                "query_id", "index_id", "rank", "score"]:
            raise FormatError(f"{path}: expected header query_id,index_id,rank,score")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields")
            try:
                rank, score = int(row[2]), float(row[3])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
            rows.setdefault(row[0], []).append((rank, row[1], score))
    out = []
    for qid, items in rows.items():
        items.sort()
        ranks = [r for r, _, _ in items]
        if ranks != list(range(1, len(items) + 1)):
            raise FormatError(f"{path}: ranks of query {qid!r} are not 1..n")
        out.append(RankedList(qid, [i for _, i, _ in items], [s for _, _, s in items]))
    return out
