import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.linear_model import LogisticRegression

from fusionsketch.estimators import (
    MultimodalFusionClassifier,
    ScoreFusionClassifier,
    TensorSketchFusion,
    check_multimodal,
)
from fusionsketch.exceptions import DimensionError
from fusionsketch.fusion import FusionLayer, FusionSpec

FAST = dict(embedding_dim=12, joint_dim=12, sketch_dim=32, learning_rate=0.05, learning_rate_stage2=0.01,
            epochs_stage1=6, epochs_stage2=3, batch_size=8)


def blobs(n_per=15, classes=3, dims=(4, 3), seed=0, labels=None):
    rng = np.random.default_rng(seed)
    centers = [rng.standard_normal((classes, c)) * 3 for c in dims]
    idx = np.repeat(np.arange(classes), n_per)
    X = [c[idx] + 0.3 * rng.standard_normal((len(idx), c.shape[1])) for c in centers]
    y = idx if labels is None else np.asarray(labels)[idx]
    return X, y


def test_check_multimodal_forms():
    a, b = np.ones((3, 2)), np.zeros((3, 4))
    xs = check_multimodal([a, b])
    assert [x.shape for x in xs] == [(3, 2), (3, 4)]
    split = check_multimodal(np.hstack([a, b]), [2, 4])
    np.testing.assert_array_equal(split[1], b)
    with pytest.raises(DimensionError):
        check_multimodal([a, np.ones((2, 4))])
    with pytest.raises(DimensionError):
        check_multimodal(np.hstack([a, b]), [2, 3])
    with pytest.raises(DimensionError):
        check_multimodal([a, b], [2, 5])
    with pytest.raises(ValueError):
        check_multimodal(np.hstack([a, b]))
    with pytest.raises(ValueError):
        check_multimodal([np.array([[np.inf, 1.0]])])


def test_transformer_equals_fusion_layer():
    X, _ = blobs()
    t = TensorSketchFusion("generalized", 16, seed=3).fit(X)
    ref = FusionLayer(FusionSpec("generalized", 16, seed=3), [4, 3]).forward(X)
    np.testing.assert_array_equal(t.transform(X), ref)
    assert t.output_dim_ == 4 + 3 + 16


def test_transformer_in_pipeline_with_flat_input():
    X, y = blobs()
    flat = np.hstack(X)
    pipe = make_pipeline(TensorSketchFusion("tensor_sketch", 32, modality_dims=[4, 3]), LogisticRegression(max_iter=500))
    pipe.fit(flat, y)
    assert pipe.score(flat, y) > 0.9


def test_transformer_not_fitted():
    with pytest.raises(NotFittedError):
        TensorSketchFusion().transform([np.ones((1, 2)), np.ones((1, 2))])


def test_get_params_and_clone():
    clf = MultimodalFusionClassifier(fusion="concat", sketch_dim=64, random_state=5)
    params = clf.get_params()
    assert params["fusion"] == "concat" and params["random_state"] == 5
    assert clone(clf).get_params() == params
    assert set(params) >= {"embedding_dim", "joint_dim", "learning_rate", "epochs_stage1", "epochs_stage2"}


@pytest.mark.parametrize("fusion", ["concat", "bilinear", "tensor_sketch", "generalized"])
def test_classifier_fits_separable_data(fusion):
    X, y = blobs()
    clf = MultimodalFusionClassifier(fusion=fusion, **FAST).fit(X, y)
    assert clf.score(X, y) >= 0.9
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(1), 1.0)
    assert proba.shape == (len(y), 3)
    assert len(clf.history_) == FAST["epochs_stage1"] + FAST["epochs_stage2"]


def test_classifier_keeps_arbitrary_labels():
    X, y = blobs(labels=np.array([10, 42, 7]))
    clf = MultimodalFusionClassifier(fusion="concat", **FAST).fit(X, y)
    np.testing.assert_array_equal(clf.classes_, [7, 10, 42])
    assert set(clf.predict(X)) <= {7, 10, 42}


def test_classifier_deterministic_per_random_state():
    X, y = blobs()
    a = MultimodalFusionClassifier(**FAST, random_state=1).fit(X, y).predict_proba(X)
    b = MultimodalFusionClassifier(**FAST, random_state=1).fit(X, y).predict_proba(X)
    c = MultimodalFusionClassifier(**FAST, random_state=2).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_classifier_flat_input():
    X, y = blobs()
    clf = MultimodalFusionClassifier(**FAST, modality_dims=[4, 3]).fit(np.hstack(X), y)
    assert clf.score(np.hstack(X), y) >= 0.9


def test_classifier_input_errors():
    X, y = blobs()
    clf = MultimodalFusionClassifier(**FAST)
    with pytest.raises(NotFittedError):
        clf.predict(X)
    with pytest.raises(DimensionError):
        clf.fit(X, y[:-1])
    clf.fit(X, y)
    with pytest.raises(DimensionError):
        clf.predict(X[:1])
    with pytest.raises(DimensionError):
        clf.predict([X[0], np.ones((len(y), 5))])


@pytest.mark.parametrize("rule", ["sum", "majority"])
def test_score_fusion(rule):
    X, y = blobs()
    template = MultimodalFusionClassifier(**FAST)
    clf = ScoreFusionClassifier(rule, template).fit(X, y)
    assert clf.score(X, y) >= 0.9
    probs = clf.modality_proba(X)
    assert len(probs) == 2 and all(p.shape == (len(y), 3) for p in probs)
    assert all(e.fusion == "concat" for e in clf.estimators_)


def test_score_fusion_bad_rule():
    X, y = blobs()
    with pytest.raises(ValueError):
        ScoreFusionClassifier("product").fit(X, y)
