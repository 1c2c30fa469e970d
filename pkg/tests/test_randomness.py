import hashlib
from collections import Counter

import numpy as np
import pytest

from p2pagg import randomness
from p2pagg.field import P
from p2pagg.randomness import JointSeed, Prg


def _seed(tag=b"x"):
    return JointSeed(hashlib.sha256(tag).digest())


def test_commit_verify_and_binding(rng):
    c, o = randomness.commit(b"a" * 32, rng)
    assert randomness.verify(c, o)
    assert not randomness.verify(c, randomness.Opening(b"b" * 32, o.nonce))
    assert not randomness.verify(c, randomness.Opening(o.value, bytes(len(o.nonce))))


def test_joint_seed_is_order_sensitive_hash(rng):
    pairs = [randomness.commit(bytes([i]) * 32, rng) for i in range(4)]
    cs, os_ = zip(*pairs)
    s1 = randomness.derive_joint_seed(os_, cs)
    assert s1 == randomness.derive_joint_seed(os_, cs)
    assert s1 != randomness.derive_joint_seed(os_[::-1])
    assert len(s1.hex()) == 64


def test_joint_seed_rejects_bad_reveals(rng):
    pairs = [randomness.commit(bytes([i]) * 32, rng) for i in range(3)]
    cs, os_ = map(list, zip(*pairs))
    os_[1] = randomness.Opening(b"z" * 32, os_[1].nonce)
    with pytest.raises(randomness.OpeningError) as exc:
        randomness.derive_joint_seed(os_, cs)
    assert exc.value.peers == (1,)
    with pytest.raises(randomness.OpeningError):
        randomness.derive_joint_seed(os_[:2], cs)


def test_prg_counter_mode_matches_hashlib():
    key = b"k" * 32
    prg = Prg(key)
    want = b"".join(hashlib.sha256(key + i.to_bytes(8, "little")).digest() for i in range(3))
    assert prg.read(40) + prg.read(56) == want


def test_prg_randbelow_uniform():
    prg = Prg.keyed(b"test", _seed())
    counts = Counter(prg.randbelow(6) for _ in range(12000))
    assert set(counts) == set(range(6))
    assert all(1800 < c < 2200 for c in counts.values())


def test_prg_field_elements_canonical():
    x = Prg.keyed(b"f", _seed()).field_elements(5000)
    assert x.dtype == np.uint64 and x.size == 5000 and x.max() < P


def test_committee_election_deterministic_and_distinct():
    ids = list(range(1, 101))
    a = randomness.elect_committee(_seed(), ids, 46)
    assert a == randomness.elect_committee(_seed(), ids, 46)
    assert len(set(a)) == 46 and set(a) <= set(ids)
    assert a != randomness.elect_committee(_seed(b"y"), ids, 46)
    with pytest.raises(ValueError):
        randomness.elect_committee(_seed(), ids, 101)


def test_committee_election_is_unbiased():
    ids = list(range(1, 11))
    hits = Counter()
    for s in range(3000):
        hits.update(randomness.elect_committee(_seed(s.to_bytes(4, "little")), ids, 3))
    # each peer is chosen with probability 3/10
    assert all(abs(c / 3000 - 0.3) < 0.04 for c in hits.values())


def test_challenges_depend_on_round():
    a = randomness.derive_challenges(_seed(), 0, 10)
    assert np.array_equal(a, randomness.derive_challenges(_seed(), 0, 10))
    assert not np.array_equal(a, randomness.derive_challenges(_seed(), 1, 10))


def test_subsample():
    ids = list(range(1, 21))
    s = randomness.subsample_clients(_seed(), 3, ids, 5)
    assert len(set(s)) == 5
    assert s != randomness.subsample_clients(_seed(), 4, ids, 5)
