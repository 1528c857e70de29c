"""Feature-level ensembling of several models' embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embed_store import EmbeddingMatrix, normalize
from .errors import AlignmentError, DegenerateWeightsError, FormatError


@dataclass(frozen=True)
class FusionMember:
    matrix: EmbeddingMatrix
    weight: float = 1.0


def fuse_concat(members: Sequence[FusionMember | EmbeddingMatrix]) -> EmbeddingMatrix:
    """Concatenate weighted unit-norm members and renormalize.

    For unit-norm member rows the fused cosine of two images is
    ``sum(w**2 * cos_m) / sum(w**2)``, so this also covers weighted
    similarity averaging.
    """
    members = [m if isinstance(m, FusionMember) else FusionMember(m)
               for m in members]
    if not members:
        raise FormatError("fusion needs at least one member")
    weights = np.array([m.weight for m in members], dtype=np.float64)
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise FormatError("fusion weights must be finite and non-negative")
    if not np.any(weights > 0):
        raise DegenerateWeightsError("all fusion weights are zero")
    ids = members[0].matrix.ids
    for m in members[1:]:
        if m.matrix.ids != ids:
            raise AlignmentError("fusion members do not share the same id order")

    parts = [m.matrix.vectors.astype(np.float64) * w
             for m, w in zip(members, weights)]
    fused = np.concatenate(parts, axis=1)
    return normalize(EmbeddingMatrix(ids, fused.astype(np.float32)))
