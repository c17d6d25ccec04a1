import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gaeor import GAEorClassifier
from gaeor.exceptions import ConfigurationError

FAST = dict(epochs=2, batch_size=4, stage_channels=(8, 16, 16, 32), stride_per_stage=(2, 2, 2, 1))


@pytest.fixture(scope="module")
def data():
    from gaeor.data import generate_synthetic

    bench = generate_synthetic(3, 2, 1, 32, seed=4)
    X, y = bench.train.arrays()
    Xt, yt = bench.test.arrays()
    names = np.array(["oak", "ash", "elm"])
    return X, names[y], Xt, names[yt]


@pytest.fixture(scope="module")
def fitted(data):
    X, y, Xt, yt = data
    return GAEorClassifier(**FAST).fit(X, y, eval_set=(Xt, yt))


def test_params_round_trip():
    est = GAEorClassifier(lr=0.1, gae=False)
    params = est.get_params()
    assert params["lr"] == 0.1 and params["gae"] is False
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(alpha=0.5)
    assert est.alpha == 0.5


def test_fit_predict_shapes(fitted, data):
    X, y, Xt, _ = data
    assert list(fitted.classes_) == ["ash", "elm", "oak"]
    proba = fitted.predict_proba(Xt)
    assert proba.shape == (len(Xt), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-5)
    pred = fitted.predict(Xt)
    assert set(pred) <= set(fitted.classes_)
    assert np.array_equal(pred, fitted.classes_[proba.argmax(axis=1)])
    assert 0.0 <= fitted.score(Xt, data[3]) <= 1.0
    assert len(fitted.history_) == 2 and fitted.history_[-1].test_acc is not None


def test_score_matches_trainer_evaluate(fitted, data):
    from gaeor.data import DatasetManifest, LabeledSample
    from gaeor.trainer import evaluate

    _, _, Xt, yt = data
    enc = np.searchsorted(fitted.classes_, yt)
    manifest = DatasetManifest("test", [LabeledSample(x, int(k), 3) for x, k in zip(Xt, enc)], 3, 1)
    assert fitted.score(Xt, yt) == pytest.approx(evaluate(fitted.model_, manifest))


def test_transform_gives_pooled_features(fitted, data):
    feats = fitted.transform(data[2])
    assert feats.shape == (len(data[2]), 32)
    assert np.isfinite(feats).all()


def test_channels_last_uint8_input(fitted, data):
    Xt = data[2]
    as_uint8 = np.round(Xt.transpose(0, 2, 3, 1) * 255).astype(np.uint8)
    np.testing.assert_allclose(fitted.predict_proba(as_uint8), fitted.predict_proba(Xt), atol=1e-4)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GAEorClassifier().predict(np.zeros((1, 3, 32, 32), dtype=np.float32))


@pytest.mark.parametrize(
    "X, msg",
    [
        (np.zeros((2, 3, 32), dtype=np.float32), "4-d"),
        (np.zeros((2, 5, 32, 32), dtype=np.float32), "channels"),
        (np.full((2, 3, 32, 32), 2.0, dtype=np.float32), r"\[0, 1\]"),
        (np.full((2, 3, 32, 32), np.nan, dtype=np.float32), "NaN"),
    ],
)
def test_input_validation(X, msg):
    with pytest.raises(ValueError, match=msg):
        GAEorClassifier(**FAST).fit(X, [0, 1])


def test_label_validation(data):
    X = data[0]
    with pytest.raises(ValueError, match="samples"):
        GAEorClassifier(**FAST).fit(X, data[1][:-1])
    with pytest.raises(ConfigurationError):
        GAEorClassifier(**FAST).fit(X, np.zeros(len(X)))


def test_predict_rejects_wrong_size(fitted):
    with pytest.raises(ValueError, match="32px"):
        fitted.predict(np.zeros((1, 3, 48, 48), dtype=np.float32))


def test_refit_is_deterministic(data):
    X, y, Xt, _ = data
    a = GAEorClassifier(**FAST).fit(X, y).predict_proba(Xt)
    b = GAEorClassifier(**FAST).fit(X, y).predict_proba(Xt)
    assert np.array_equal(a, b)
