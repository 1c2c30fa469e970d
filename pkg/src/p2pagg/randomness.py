"""Commit-reveal coin flipping and everything keyed off the joint seed.

Hashing is SHA-256 with 4-byte ASCII domain tags. The PRG is SHA-256 in
counter mode, so every derived quantity (committee, client subsample, DZK
challenges) is reproducible bit for bit from the revealed contributions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .field import P

TAG_COMMIT = b"cmt0"
TAG_SEED = b"seed"
TAG_COMMITTEE = b"comm"
TAG_CHALLENGE = b"chal"
TAG_SUBSAMPLE = b"subs"

CONTRIBUTION_BYTES = 32
NONCE_BYTES = 32


class OpeningError(ValueError):
    """A reveal is missing or does not match its commitment."""

    def __init__(self, message, peers=()):
        super().__init__(message)
        self.peers = tuple(peers)


def _h(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


@dataclass(frozen=True)
class Commitment:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("commitment digest must be 32 bytes")


@dataclass(frozen=True)
class Opening:
    value: bytes
    nonce: bytes


def commit(value: bytes, rng: np.random.Generator) -> tuple[Commitment, Opening]:
    nonce = rng.bytes(NONCE_BYTES)
    return Commitment(_h(TAG_COMMIT, value, nonce)), Opening(bytes(value), nonce)


def verify(commitment: Commitment, opening: Opening) -> bool:
    if len(opening.nonce) != NONCE_BYTES:
        return False
    return _h(TAG_COMMIT, opening.value, opening.nonce) == commitment.digest


@dataclass(frozen=True)
class JointSeed:
    seed: bytes

    def __post_init__(self):
        if len(self.seed) != 32:
            raise ValueError("joint seed must be 32 bytes")

    def hex(self) -> str:
        return self.seed.hex()


def derive_joint_seed(
    openings: Sequence[Opening], commitments: Sequence[Commitment] | None = None
) -> JointSeed:
    """Hash of all contributions, in the given (peer-id) order.

    With ``commitments`` supplied every opening is verified first; a missing
    or mismatching reveal raises :class:`OpeningError` naming the positions.
    """
    if commitments is not None:
        if len(commitments) != len(openings):
            raise OpeningError("reveals incomplete")
        bad = [i for i, (c, o) in enumerate(zip(commitments, openings)) if o is None or not verify(c, o)]
        if bad:
            raise OpeningError(f"invalid openings at positions {bad}", bad)
    for i, o in enumerate(openings):
        if o is None or len(o.value) != CONTRIBUTION_BYTES:
            raise OpeningError(f"contribution {i} missing or not {CONTRIBUTION_BYTES} bytes", [i])
    return JointSeed(_h(TAG_SEED, *(o.value for o in openings)))


class Prg:
    """SHA-256 in counter mode: block ``i`` is ``H(key || i as u64 LE)``."""

    def __init__(self, key: bytes):
        self._key = key
        self._counter = 0
        self._buf = b""

    @classmethod
    def keyed(cls, tag: bytes, seed: JointSeed, *extra: int) -> "Prg":
        return cls(_h(tag, seed.seed, *(int(e).to_bytes(8, "little") for e in extra)))

    def _block(self) -> bytes:
        out = _h(self._key, self._counter.to_bytes(8, "little"))
        self._counter += 1
        return out

    def read(self, n: int) -> bytes:
        while len(self._buf) < n:
            blocks = max(1, (n - len(self._buf) + 31) // 32)
            self._buf += b"".join(self._block() for _ in range(blocks))
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def u64(self) -> int:
        return int.from_bytes(self.read(8), "little")

    def randbelow(self, k: int) -> int:
        """Uniform integer in ``[0, k)`` by rejection (no modulo bias)."""
        if k <= 0:
            raise ValueError("k must be positive")
        limit = (1 << 64) - ((1 << 64) % k)
        while True:
            v = self.u64()
            if v < limit:
                return v % k

    def field_elements(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.uint64)
        filled = 0
        while filled < count:
            need = count - filled
            words = np.frombuffer(self.read(8 * need), dtype="<u8") >> np.uint64(3)
            words = words[words < np.uint64(P)]
            out[filled:filled + words.size] = words
            filled += words.size
        return out


def _sample_without_replacement(prg: Prg, items: Sequence, k: int) -> list:
    if k > len(items):
        raise ValueError(f"cannot choose {k} of {len(items)}")
    pool = list(items)
    n = len(pool)
    # forward partial Fisher-Yates
    for i in range(k):
        j = i + prg.randbelow(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def elect_committee(seed: JointSeed, peer_ids: Sequence[int], m: int) -> list[int]:
    return _sample_without_replacement(Prg.keyed(TAG_COMMITTEE, seed), peer_ids, m)


def subsample_clients(seed: JointSeed, round: int, peer_ids: Sequence[int], k: int) -> list[int]:
    return _sample_without_replacement(Prg.keyed(TAG_SUBSAMPLE, seed, round), peer_ids, k)


def derive_challenges(seed: JointSeed, round: int, count: int) -> np.ndarray:
    """Public batching coefficients ``r_1..r_count`` for the DZK checks.

    Must only be called once every update share for the round is delivered.
    """
    return Prg.keyed(TAG_CHALLENGE, seed, round).field_elements(count)
