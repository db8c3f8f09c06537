import numpy as np
import pytest
from sklearn.base import clone

from astvuln import BPETokenizer, VulnerabilityClassifier
from astvuln.exceptions import InvalidInputError

from conftest import marker_dataset

TINY = dict(layers=1, heads=2, model_dim=32, ffn_dim=64, window=8, dropout=0.0, lr=3e-3,
            epochs=15, batch_size=4, vocab_size=320)


def test_get_params_and_clone():
    clf = VulnerabilityClassifier(**TINY)
    params = clf.get_params()
    assert params["window"] == 8 and params["vocab_size"] == 320
    assert clone(clf).get_params() == params


def test_fit_predict():
    data = marker_dataset(32, seed=2)
    X = [s.decode() for s, _ in data]
    y = np.array(["safe", "vuln"])[[label for _, label in data]]
    clf = VulnerabilityClassifier(**TINY).fit(X, y, X[:8], y[:8])
    assert list(clf.classes_) == ["safe", "vuln"]
    assert clf.n_parameters_ > 0 and clf.history_
    proba = clf.predict_proba(X)
    assert proba.shape == (32, 2) and np.allclose(proba.sum(1), 1)
    assert clf.score(X, y) == 1.0
    assert isinstance(clf.vocabulary_, type(BPETokenizer(300).fit(["ab"]).vocabulary_))


def test_input_validation():
    clf = VulnerabilityClassifier(**TINY)
    with pytest.raises(InvalidInputError):
        clf.fit("int f(){}", [1])
    with pytest.raises(ValueError):
        clf.fit(["a", "b"], [0])
    with pytest.raises(InvalidInputError):
        clf.fit(["a", "b", "c"], [0, 1, 2])
    with pytest.raises(Exception):
        clf.predict(["int f(){}"])
