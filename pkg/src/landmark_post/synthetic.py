"""Seeded planted-cluster fixtures for tests and demos.

Every class has a random center per model view.  Gallery images sit close to
their center, queries further away so that raw cosine ranking makes
mistakes the class votes can repair, and a fraction of gallery labels is
flipped to another class.  Non-landmark distractors form their own tight
groups away from the landmark centers; non-landmark queries are drawn from
those groups.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Set

import numpy as np

from .embed_store import (
    NON_LANDMARK,
    EmbeddingMatrix,
    LabelTable,
    save_embeddings,
    save_labels,
)


@dataclass
class PlantedDataset:
    gallery_views: List[EmbeddingMatrix]
    query_views: List[EmbeddingMatrix]
    nonlandmark_views: List[EmbeddingMatrix]
    gallery_classes: Dict[str, int]
    labels: LabelTable
    query_classes: Dict[str, int]
    retrieval_truth: Dict[str, Set[str]]

    @property
    def gallery(self) -> EmbeddingMatrix:
        return self.gallery_views[0]

    @property
    def queries(self) -> EmbeddingMatrix:
        return self.query_views[0]

    @property
    def nonlandmarks(self) -> EmbeddingMatrix:
        return self.nonlandmark_views[0]


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def planted_clusters(seed: int = 0, *, n_classes: int = 50, per_class: int = 20,
                     dim: int = 64, queries_per_class: int = 2,
                     n_nonlandmark_queries: int = 20, n_nonlandmarks: int = 200,
                     label_noise: float = 0.1, gallery_spread: float = 0.35,
                     query_spread: float = 1.6, views: int = 1) -> PlantedDataset:
    rng = np.random.default_rng(seed)
    n_gal = n_classes * per_class
    gal_class = np.repeat(np.arange(n_classes), per_class)
    q_class = np.repeat(np.arange(n_classes), queries_per_class)
    gal_ids = [f"g{i:05d}" for i in range(n_gal)]
    q_ids = [f"q{i:05d}" for i in range(q_class.size + n_nonlandmark_queries)]
    nl_ids = [f"n{i:05d}" for i in range(n_nonlandmarks)]
    nl_groups = max(1, n_nonlandmarks // 10)
    nl_group = np.arange(n_nonlandmarks) % nl_groups
    q_group = rng.integers(0, nl_groups, size=n_nonlandmark_queries)

    gallery_views, query_views, nl_views = [], [], []
    for _ in range(views):
        centers = _unit(rng.standard_normal((n_classes, dim)))
        nl_centers = _unit(rng.standard_normal((nl_groups, dim)))
        noise = rng.standard_normal((n_nonlandmarks, dim)) / np.sqrt(dim)
        nl = _unit(nl_centers[nl_group] + 0.3 * noise)
        noise = rng.standard_normal((n_gal, dim)) / np.sqrt(dim)
        gal = centers[gal_class] + gallery_spread * noise
        noise = rng.standard_normal((q_class.size, dim)) / np.sqrt(dim)
        q_land = centers[q_class] + query_spread * noise
        noise = rng.standard_normal((n_nonlandmark_queries, dim)) / np.sqrt(dim)
        q_nl = nl_centers[q_group] + 0.3 * noise
        q = np.concatenate([q_land, q_nl])
        # arbitrary positive scale per row: the pipeline must normalize
        gal *= rng.uniform(0.5, 3.0, size=(n_gal, 1))
        q *= rng.uniform(0.5, 3.0, size=(q.shape[0], 1))
        gallery_views.append(EmbeddingMatrix(gal_ids, gal.astype(np.float32)))
        query_views.append(EmbeddingMatrix(q_ids, q.astype(np.float32)))
        nl_views.append(EmbeddingMatrix(nl_ids, nl.astype(np.float32)))

    noisy = gal_class.copy()
    flip = rng.random(n_gal) < label_noise
    shift = rng.integers(1, n_classes, size=n_gal)
    noisy[flip] = (gal_class[flip] + shift[flip]) % n_classes

    gallery_classes = dict(zip(gal_ids, gal_class.tolist()))
    query_classes = dict(zip(q_ids, q_class.tolist() + [NON_LANDMARK] * n_nonlandmark_queries))
    by_class: Dict[int, Set[str]] = {}
    for iid, c in gallery_classes.items():
        by_class.setdefault(c, set()).add(iid)
    retrieval_truth = {qid: set(by_class.get(c, ())) if c != NON_LANDMARK else set()
                       for qid, c in query_classes.items()}
    return PlantedDataset(
        gallery_views, query_views, nl_views, gallery_classes,
        LabelTable(dict(zip(gal_ids, noisy.tolist()))), query_classes, retrieval_truth)


def write_dataset(ds: PlantedDataset, out_dir: str | Path) -> Dict[str, Path]:
    """Write every view and table of ``ds`` under ``out_dir``; returns the paths."""
    from .submission import write_recognition_truth, write_retrieval_truth

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {}
    for v, (g, q, n) in enumerate(zip(ds.gallery_views, ds.query_views, ds.nonlandmark_views)):
        for name, m in (("gallery", g), ("queries", q), ("nonlandmarks", n)):
            p = out / f"{name}_v{v}.emb"
            save_embeddings(m, p)
            paths[f"{name}_v{v}"] = p
    paths["labels"] = out / "labels.csv"
    save_labels(ds.labels, paths["labels"])
    paths["retrieval_truth"] = out / "retrieval_truth.csv"
    write_retrieval_truth(
        {q: r for q, r in ds.retrieval_truth.items()}, paths["retrieval_truth"])
    paths["recognition_truth"] = out / "recognition_truth.csv"
    write_recognition_truth(ds.query_classes, paths["recognition_truth"])
    return paths
