"""Post-processing pipeline for landmark retrieval and recognition.

Embedding fusion, exact cosine kNN, class-aware reranking, recognition
scoring with non-landmark suppression, GAP / mAP@100 and a grid tuner.
"""

from .class_predict import (
    ClassPrediction,
    PredictionTriple,
    Predictions,
    load_external_probs,
    predict_top3,
)
from .embed_store import (
    NON_LANDMARK,
    ClassCatalog,
    EmbeddingMatrix,
    LabelTable,
    build_catalog,
    load_embeddings,
    load_labels,
    normalize,
    save_embeddings,
)
from .fusion import FusionMember, fuse_concat
from .knn import Neighbor, RankedList, cosine_topk, cross_max_topt
from .metrics import gap, map_at_100
from .recognize import RecognitionConfig, RecognitionResult, recognize
from .rerank import AdjustmentConfig, adjust_pair, rerank_lists
from .tuner import Grid, tune_recognition, tune_rerank

__version__ = "0.1.0"

__all__ = [
    "AdjustmentConfig", "ClassCatalog", "ClassPrediction", "EmbeddingMatrix", "FusionMember",
    "Grid", "LabelTable", "NON_LANDMARK", "Neighbor", "PredictionTriple", "Predictions",
    "RankedList", "RecognitionConfig", "RecognitionResult", "adjust_pair", "build_catalog",
    "cosine_topk", "cross_max_topt", "fuse_concat", "gap", "load_embeddings",
    "load_external_probs", "load_labels", "map_at_100", "normalize", "predict_top3",
    "recognize", "rerank_lists", "save_embeddings", "tune_recognition", "tune_rerank",
]
