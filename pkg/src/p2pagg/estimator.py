"""scikit-learn style front end.

:class:`SecureP2PClassifier` trains a model by simulating committee-based
secure aggregation among peers holding shards of ``X``;
:class:`FixedPointEncoder` exposes the fixed-point codec as a transformer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attacks import AttackConfig
from .codec import FixedPointCodec
from .learner import Dataset, build_model
from .protocols.cc import CcParams
from .protocols.flt import FltParams
from .protocols.rsa import RsaParams
from .simulator import DataConfig, ModelConfig, SimConfig, run_simulation
from .validation import check_positive_int


class SecureP2PClassifier(ClassifierMixin, BaseEstimator):
    """Classifier trained by simulated robust secure aggregation.

    Args:
        protocol: ``"rsa"``, ``"cc"`` or ``"flt"``.
        n_peers: number of simulated peers; ``X`` is split evenly among them.
        rounds: aggregation rounds.
        committee_size: committee override; ``None`` sizes it from the
            committee policy (which needs many peers).
        attack, n_malicious: Byzantine behaviour and coalition size.
        engine: ``"secure"`` (default), ``"plaintext"`` or ``"float"``.
        validation_fraction: held-out share of ``X`` scored every round.
    """

    def __init__(self, protocol="cc", n_peers=20, rounds=50, committee_size=7, attack="none",
                 n_malicious=0, engine="secure", model="softmax", hidden=32, lam=0.05, eta0=0.01,
                 gamma=0.001, rho=0.0, beta=0.9, tau=0.05, theta=32, eta=1.0, lr=0.1, alpha=1.0,
                 root_fraction=0.05, validation_fraction=0.2, random_state=0):
        self.protocol = protocol
        self.n_peers = n_peers
        self.rounds = rounds
        self.committee_size = committee_size
        self.attack = attack
        self.n_malicious = n_malicious
        self.engine = engine
        self.model = model
        self.hidden = hidden
        self.lam = lam
        self.eta0 = eta0
        self.gamma = gamma
        self.rho = rho
        self.beta = beta
        self.tau = tau
        self.theta = theta
        self.eta = eta
        self.lr = lr
        self.alpha = alpha
        self.root_fraction = root_fraction
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self, dim: int, classes: int) -> SimConfig:
        check_positive_int(self.n_peers, "n_peers")
        check_positive_int(self.rounds, "rounds", minimum=0)
        return SimConfig(
            peers=self.n_peers, rounds=self.rounds, protocol=self.protocol, seed=self.random_state,
            engine=self.engine, committee_size=self.committee_size,
            attack=AttackConfig(self.attack, self.n_malicious),
            data=DataConfig(source="array", classes=classes, dim=dim, test_fraction=self.validation_fraction),
            model=ModelConfig(self.model, self.hidden),
            rsa=RsaParams(self.lam, self.eta0, self.gamma, self.rho),
            cc=CcParams(self.beta, self.tau, self.theta, self.eta, self.lr),
            flt=FltParams(self.alpha, 16, self.lr, self.root_fraction, self.random_state),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        codes = self._encoder.transform(y)
        self.n_features_in_ = X.shape[1]
        config = self._config(X.shape[1], len(self.classes_))
        result = run_simulation(config, Dataset(X, codes, len(self.classes_)))
        self._model = build_model(self.model, X.shape[1], len(self.classes_), self.hidden)
        self.coef_ = result.final_w
        self.history_ = list(result.accuracy)
        self.transcripts_ = result.transcripts
        self.n_aborts_ = result.aborts
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._model.predict_proba(self.coef_, X)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class FixedPointEncoder(TransformerMixin, BaseEstimator):
    """Encode each feature as ``theta`` little-endian bits.

    In ``"box"`` mode features are clipped to ``[lo, hi]``. In
    ``"sign_magnitude"`` mode each row is the magnitude bits of every feature
    followed by one sign bit per feature (1 for negative).
    """

    def __init__(self, theta=32, frac_bits=None, mode="box", lo=-1.0, hi=1.0):
        self.theta = theta
        self.frac_bits = frac_bits
        self.mode = mode
        self.lo = lo
        self.hi = hi

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.codec_ = FixedPointCodec(self.theta, self.frac_bits, self.mode, self.lo, self.hi)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codec_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        q, sat = self.codec_.encode(X)
        self.saturated_ = int(sat.sum())
        bits = np.stack([self.codec_.to_bits(row) for row in q]) if len(q) else np.zeros((0, 0), np.uint8)
        if self.mode == "sign_magnitude":
            bits = np.hstack([bits, np.signbit(X).astype(np.uint8)])
        return bits

    def inverse_transform(self, B):
        check_is_fitted(self, "codec_")
        B = np.asarray(B)
        d = self.n_features_in_
        width = d * self.theta
        q = np.stack([self.codec_.from_bits(row[:width]) for row in B]).astype(np.int64)
        negative = B[:, width:].astype(bool) if self.mode == "sign_magnitude" else None
        return self.codec_.decode(q, negative)
