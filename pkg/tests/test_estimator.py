import numpy as np
import pytest
from sklearn.base import clone
from sklearn.datasets import make_blobs
from sklearn.exceptions import NotFittedError

from p2pagg import FixedPointEncoder, SecureP2PClassifier


@pytest.fixture(scope="module")
def blobs():
    X, y = make_blobs(600, n_features=4, centers=3, random_state=0)
    return X, np.array(["a", "b", "c"])[y]


def _clf(**kw):
    base = dict(n_peers=8, rounds=15, committee_size=7, random_state=0)
    base.update(kw)
    return SecureP2PClassifier(**base)


@pytest.mark.parametrize("protocol", ["rsa", "cc", "flt"])
def test_fit_predict(blobs, protocol):
    X, y = blobs
    clf = _clf(protocol=protocol).fit(X, y)
    assert list(clf.classes_) == ["a", "b", "c"]
    assert set(clf.predict(X)) <= set(clf.classes_)
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 3) and np.allclose(proba.sum(axis=1), 1)
    assert clf.score(X, y) > 0.8
    assert clf.n_aborts_ == 0 and len(clf.history_) == 15


def test_deterministic_and_clonable(blobs):
    X, y = blobs
    a = _clf().fit(X, y)
    b = clone(a).fit(X, y)
    assert np.array_equal(a.coef_, b.coef_)
    assert clone(a).get_params() == a.get_params()


def test_not_fitted(blobs):
    with pytest.raises(NotFittedError):
        _clf().predict(blobs[0])


def test_rejects_bad_input(blobs):
    X, y = blobs
    with pytest.raises(ValueError):
        _clf().fit(X[:, :2], y[:-1])
    with pytest.raises(ValueError):
        _clf(protocol="krum").fit(X, y)
    X2 = X.copy()
    X2[0, 0] = np.nan
    with pytest.raises(ValueError):
        _clf().fit(X2, y)


def test_feature_count_checked(blobs):
    X, y = blobs
    clf = _clf(rounds=2).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :3])


@pytest.mark.parametrize("mode", ["box", "sign_magnitude"])
def test_encoder_round_trip(mode, rng):
    enc = FixedPointEncoder(theta=16, frac_bits=10, mode=mode, lo=-4.0, hi=4.0)
    x = rng.uniform(-3, 3, size=(5, 6))
    bits = enc.fit_transform(x)
    assert set(np.unique(bits)) <= {0, 1}
    back = enc.inverse_transform(bits)
    assert np.max(np.abs(back - x)) <= 2.0 ** -10
