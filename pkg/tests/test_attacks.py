from statistics import NormalDist

import numpy as np
import pytest

from p2pagg.attacks import AttackConfig, alie_z, flip_labels, malicious_delta
from p2pagg.learner import Dataset


def test_config_validation():
    assert not AttackConfig().active
    assert AttackConfig("bf", 2).active
    with pytest.raises(ValueError):
        AttackConfig("gauss", 1)
    with pytest.raises(ValueError):
        AttackConfig("bf", -1)


def test_alie_z_formula():
    # n=20, f=4: s = 11 - 4 = 7, z = Phi^-1(13/20)
    assert alie_z(20, 4) == pytest.approx(NormalDist().inv_cdf(13 / 20))
    assert alie_z(50, 10) > 0


def test_deltas(rng):
    own = rng.standard_normal(4)
    honest = [rng.standard_normal(4) for _ in range(6)]
    mean, std = np.mean(honest, 0), np.std(honest, 0)
    assert np.allclose(malicious_delta(AttackConfig("bf", 1), own, honest, 10), -own)
    assert np.allclose(malicious_delta(AttackConfig("lf", 1), own, honest, 10), own)
    assert np.allclose(malicious_delta(AttackConfig("ipm", 1, epsilon=0.5), own, honest, 10), -0.5 * mean)
    assert np.allclose(malicious_delta(AttackConfig("alie", 1, z=1.5), own, honest, 10), mean + 1.5 * std)


def test_flip_labels():
    d = Dataset(np.zeros((3, 1)), np.array([0, 1, 3]), 4)
    assert flip_labels(d).y.tolist() == [3, 2, 0]
