import math

import numpy as np
import pytest

from landmark_post.class_predict import NO_CLASS, Predictions, predict_top3
from landmark_post.embed_store import ClassCatalog, EmbeddingMatrix, build_catalog, labels_from_pairs
from landmark_post.errors import CatalogError, ConfigError, NonLandmarkSetError
from landmark_post.recognize import PreparedRecognition, RecognitionConfig, recognize

from conftest import matrix, unit_rows

INF = math.inf


def basis(d, i):
    e = np.zeros(d)
    e[i] = 1.0
    return e


def at_cosine(c, d, other_axis):
    """Unit vector with cosine ``c`` to the first basis vector."""
    return c * basis(d, 0) + math.sqrt(1 - c * c) * basis(d, other_axis)


@pytest.fixture
def single_class():
    d = 8
    q = EmbeddingMatrix(["q"], [basis(d, 0)])
    train = EmbeddingMatrix(["t0", "t1", "t2"], [at_cosine(c, d, 1) for c in (0.9, 0.8, 0.7)])
    labels = labels_from_pairs((i, 7) for i in train.ids)
    return q, train, labels


def test_default_recognition_constants():
    cfg = RecognitionConfig()
    assert cfg.t_nl == 5 and cfg.theta == 0.5


def test_hard_filter_example(single_class):
    q, train, labels = single_class
    nl = EmbeddingMatrix([f"n{i}" for i in range(5)],
                         [at_cosine(c, 8, i + 1) for i, c in enumerate((0.9, 0.8, 0.7, 0.65, 0.6))])
    (r,) = recognize(q, train, labels, build_catalog(labels), nl, None, RecognitionConfig())
    assert (r.klass, r.confidence) == (NO_CLASS, 0.0)


def test_threshold_equality_does_not_fire(single_class):
    q, train, labels = single_class
    nl = EmbeddingMatrix([f"n{i}" for i in range(5)], [at_cosine(0.5, 8, i + 1) for i in range(5)])
    prepared = PreparedRecognition(q, train, labels, build_catalog(labels), nl)
    prepared.nl_top = np.full((1, 5), 0.5)
    assert prepared.run(RecognitionConfig(theta=0.5))[0].klass == 7
    assert prepared.run(RecognitionConfig(theta=0.4999))[0].klass == NO_CLASS


def test_fewer_than_t_nl_cannot_fire(single_class):
    q, train, labels = single_class
    nl = EmbeddingMatrix(["n0", "n1"], [at_cosine(0.99, 8, 1), at_cosine(0.99, 8, 2)])
    (r,) = recognize(q, train, labels, build_catalog(labels), nl, None, RecognitionConfig())
    assert r.klass == 7


def test_degenerate_single_class(single_class):
    q, train, labels = single_class
    cfg = RecognitionConfig(alpha=1, beta=0, gamma=0, theta=INF)
    (r,) = recognize(q, train, labels, build_catalog(labels), None, None, cfg)
    assert (r.klass, r.confidence) == (7, 1.0)


def test_class_count_penalty_example():
    d = 8
    q = EmbeddingMatrix(["q"], [basis(d, 0)])
    rows = [at_cosine(0.8, d, 1), at_cosine(0.8, d, 2)] + [-basis(d, 0)] * 3
    train = EmbeddingMatrix(["rare", "common", "c1", "c2", "c3"], rows)
    labels = labels_from_pairs([("rare", 1), ("common", 2), ("c1", 2), ("c2", 2), ("c3", 2)])
    cat = build_catalog(labels)
    assert cat.max_count == 4
    prepared = PreparedRecognition(q, train, labels, cat, K=2)
    penalized = prepared.sims[0] - 1.0 * prepared.penalty[0]
    by_label = dict(zip(prepared.labels[0].tolist(), penalized))
    assert by_label[1] == pytest.approx(0.8 - math.log(2) / math.log(5), abs=1e-6)
    assert by_label[2] == pytest.approx(0.8 - 1.0, abs=1e-6)
    (r,) = prepared.run(RecognitionConfig(gamma=1.0, K=2, theta=INF))
    assert r.klass == 1
    assert r.confidence == pytest.approx(1.0)


def test_soft_penalty_example(single_class):
    q, train, labels = single_class
    nl = EmbeddingMatrix([f"n{i}" for i in range(5)], [at_cosine(0.4, 8, i + 1) for i in range(5)])
    (r,) = recognize(q, train, labels, build_catalog(labels), nl, None,
                     RecognitionConfig(beta=0.5))
    assert r.klass == 7
    assert r.confidence == pytest.approx(1.0 - 0.5 * 0.4, abs=1e-6)


def test_blend_with_external_probs(single_class):
    q, train, labels = single_class
    probs = Predictions(["q"], [[3, 7, NO_CLASS]], [[0.9, 0.1, 0.0]])
    cfg = RecognitionConfig(alpha=0.25, theta=INF)
    (r,) = recognize(q, train, labels, build_catalog(labels), None, probs, cfg)
    # class 7: .25 * 1 + .75 * .1 = .325; class 3: .75 * .9 = .675
    assert r.klass == 3
    assert r.confidence == pytest.approx(0.675)


def test_alpha_forced_to_one_without_probs(single_class):
    q, train, labels = single_class
    (r,) = recognize(q, train, labels, build_catalog(labels), None, None,
                     RecognitionConfig(alpha=0.0, theta=INF))
    assert (r.klass, r.confidence) == (7, 1.0)


def test_catalog_error(single_class):
    q, train, labels = single_class
    with pytest.raises(CatalogError):
        recognize(q, train, labels, ClassCatalog({1: 3}, 3), None, None,
                  RecognitionConfig(theta=INF))


def test_non_landmark_set_required(single_class):
    q, train, labels = single_class
    cat = build_catalog(labels)
    with pytest.raises(NonLandmarkSetError):
        recognize(q, train, labels, cat, None, None, RecognitionConfig())
    with pytest.raises(NonLandmarkSetError):
        recognize(q, train, labels, cat, EmbeddingMatrix([], np.zeros((0, 8))), None,
                  RecognitionConfig(beta=0.1, theta=INF))


def test_config_validation():
    with pytest.raises(ConfigError):
        RecognitionConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        RecognitionConfig(K=0)
    with pytest.raises(ConfigError):
        RecognitionConfig(beta=math.nan)


class TestInvariants:
    def setup_method(self):
        rng = np.random.default_rng(21)
        self.train = matrix(unit_rows(rng, 300, 8), prefix="t")
        self.labels = labels_from_pairs(
            (i, int(c)) for i, c in zip(self.train.ids, rng.integers(0, 15, 300)))
        self.queries = matrix(unit_rows(rng, 80, 8), prefix="q")
        self.nl = matrix(unit_rows(rng, 40, 8), prefix="n")
        self.catalog = build_catalog(self.labels)

    def test_reduces_to_predict_top3(self):
        cfg = RecognitionConfig(alpha=1, beta=0, gamma=0, theta=INF, K=10)
        results = recognize(self.queries, self.train, self.labels, self.catalog, None, None, cfg)
        preds = predict_top3(self.queries, self.train, self.labels, K=10)
        for r in results:
            assert r.klass == preds[r.query_id].classes[0]
            assert r.confidence == pytest.approx(preds[r.query_id].confidences[0], abs=1e-12)

    def test_confidence_bounds(self):
        prepared = PreparedRecognition(self.queries, self.train, self.labels, self.catalog,
                                       self.nl, K=10)
        for gamma in (0.0, 0.3, 2.0):
            for r in prepared.run(RecognitionConfig(gamma=gamma, theta=0.9)):
                assert 0.0 <= r.confidence <= 1.0
                assert (r.klass == NO_CLASS) == (r.confidence == 0.0)
