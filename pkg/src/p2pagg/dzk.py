"""Batched membership checks run by the committee on shared updates.

Each check turns per-entry shares into shares of a quantity that is zero
exactly when the entry is valid (``x(1-x)`` for bits, ``b^2 - 1`` for signs,
``sum(mag^2) - C`` for unit length). Members weight those terms with public
challenges, sum them locally and open the single result at degree ``2t``.
A nonzero opening rejects the batch; the optional bisection fallback then
re-opens partial sums over halves of the client set to name the offenders.

All share arrays here are member-major: axis 0 indexes committee members and
every operation is row-local, i.e. exactly what each member computes on its
own shares.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from . import field
from .field import FieldElement
from .sharing import DegreeError, open_vector

_ONE = np.uint64(1)


@dataclass
class BatchVerdict:
    name: str
    accepted: bool
    revealed_check_value: FieldElement
    flagged_clients: list[int] = dc_field(default_factory=list)
    openings: int = 1
    verified: bool = True

    def __post_init__(self):
        if self.accepted != (self.revealed_check_value.value == 0):
            raise ValueError("accepted must equal (revealed value == 0)")

    def to_json(self) -> dict:
        return {
            "check": self.name,
            "accepted": self.accepted,
            "revealed": self.revealed_check_value.value,
            "flagged": list(self.flagged_clients),
            "openings": self.openings,
            "verified": self.verified,
        }


# -- local term constructions (degree t in, degree 2t out) --------------------------


def binary_terms(x: np.ndarray) -> np.ndarray:
    """Shares of ``x * (1 - x)``."""
    return field.vmul(x, field.vsub(_ONE, x))


def sign_terms(b: np.ndarray) -> np.ndarray:
    """Shares of ``(b + 1)(b - 1) = b^2 - 1``."""
    return field.vsub(field.vmul(b, b), _ONE)


def recompose_bits(bits: np.ndarray, width: int) -> np.ndarray:
    """Public linear map from little-endian bit shares to value shares.

    ``bits[..., h*width + j]`` is bit ``j`` of value ``h``.
    """
    bits = np.asarray(bits, dtype=np.uint64)
    grouped = bits.reshape(bits.shape[:-1] + (bits.shape[-1] // width, width))
    out = np.zeros(grouped.shape[:-1], dtype=np.uint64)
    for j in range(width):
        out = field.vadd(out, field.vshift(grouped[..., j], j))
    return out


def unit_length_terms(mags: np.ndarray, constant: int) -> np.ndarray:
    """Shares of ``sum_h mag_h^2 - C`` over the last axis."""
    sq = field.vsum(field.vmul(mags, mags), axis=-1)
    return field.vsub(sq, np.uint64(constant % field.P))


# -- opening and bisection ---------------------------------------------------------


def _check_budget(party_ids: Sequence[int], degree: int) -> None:
    if degree + 1 > len(party_ids):
        raise DegreeError(f"check at degree {degree} needs {degree + 1} online members, have {len(party_ids)}")


def _open_scalar(party_ids, column, degree) -> tuple[int, bool]:
    opened = open_vector(party_ids, column[:, None], degree)
    return int(opened.value[0]), opened.verified


def batch_check(
    name: str,
    partials: np.ndarray,
    party_ids: Sequence[int],
    degree: int,
    client_ids: Sequence[int] | None = None,
    fallback: bool = True,
) -> BatchVerdict:
    """Open the sum of per-client weighted check values and decide.

    Args:
        partials: ``(members, clients)`` shares of each client's
            challenge-weighted sum of terms.
        party_ids: evaluation points of the rows of ``partials``.
        degree: polynomial degree of the terms (``2t``).
        client_ids: labels reported in ``flagged_clients``.
        fallback: bisect the client set on rejection.
    """
    partials = np.asarray(partials, dtype=np.uint64)
    _check_budget(party_ids, degree)
    n_clients = partials.shape[1]
    client_ids = list(range(n_clients)) if client_ids is None else list(client_ids)
    total = field.vsum(partials, axis=1) if n_clients else np.zeros(len(party_ids), dtype=np.uint64)
    value, verified = _open_scalar(party_ids, total, degree)
    verdict = BatchVerdict(name, value == 0, FieldElement(value), verified=verified)
    if verdict.accepted or not fallback or n_clients == 0:
        return verdict

    openings = 1
    flagged: list[int] = []

    def bisect(idx: list[int], known_nonzero: bool):
        nonlocal openings
        if not known_nonzero:
            v, _ = _open_scalar(party_ids, field.vsum(partials[:, idx], axis=1), degree)
            openings += 1
            if v == 0:
                return
        if len(idx) == 1:
            flagged.append(client_ids[idx[0]])
            return
        half = len(idx) // 2
        bisect(idx[:half], False)
        bisect(idx[half:], False)

    bisect(list(range(n_clients)), True)
    verdict.flagged_clients = flagged
    verdict.openings = openings
    return verdict


def weighted_partials(terms: Sequence[np.ndarray], challenges: np.ndarray) -> np.ndarray:
    """Per-client weighted sums ``sum_j r_j * term_j``.

    ``terms[i]`` is ``(members, N_i)``; challenges are consumed in order, so
    ``len(challenges) == sum(N_i)``.
    """
    challenges = np.asarray(challenges, dtype=np.uint64)
    need = sum(t.shape[1] for t in terms)
    if need != challenges.size:
        raise ValueError(f"need {need} challenges, got {challenges.size}")
    members = terms[0].shape[0] if terms else 0
    out = np.zeros((members, len(terms)), dtype=np.uint64)
    pos = 0
    for i, t in enumerate(terms):
        r = challenges[pos:pos + t.shape[1]]
        pos += t.shape[1]
        out[:, i] = field.vsum(field.vmul(t, r[None, :]), axis=1)
    return out


def _run(name, term_fn, shares, challenges, party_ids, t, client_ids, fallback):
    if len(shares) == 0:
        return BatchVerdict(name, True, FieldElement(0))
    terms = [term_fn(s) for s in shares]
    partials = weighted_partials(terms, challenges)
    return batch_check(name, partials, party_ids, 2 * t, client_ids, fallback)


def batch_binary_check(
    bit_shares: Sequence[np.ndarray],
    challenges: np.ndarray,
    party_ids: Sequence[int],
    t: int,
    client_ids: Sequence[int] | None = None,
    fallback: bool = True,
) -> BatchVerdict:
    """Accept iff every shared entry is 0 or 1.

    ``bit_shares[i]`` is client ``i``'s ``(members, N_i)`` degree-``t`` shares.
    """
    return _run("binary", binary_terms, bit_shares, challenges, party_ids, t, client_ids, fallback)


def batch_sign_check(
    sign_shares: Sequence[np.ndarray],
    challenges: np.ndarray,
    party_ids: Sequence[int],
    t: int,
    client_ids: Sequence[int] | None = None,
    fallback: bool = True,
) -> BatchVerdict:
    """Accept iff every shared entry is +1 or -1."""
    return _run("sign", sign_terms, sign_shares, challenges, party_ids, t, client_ids, fallback)


def batch_unit_length_check(
    mag_shares: Sequence[np.ndarray],
    constant: int,
    challenges: np.ndarray,
    party_ids: Sequence[int],
    t: int,
    client_ids: Sequence[int] | None = None,
    fallback: bool = True,
) -> BatchVerdict:
    """Accept iff each client's magnitudes satisfy ``sum(mag^2) == constant``.

    ``mag_shares[i]`` is ``(members, d)``; one challenge per client.
    """
    def terms(m):
        return unit_length_terms(m, constant)[:, None]

    return _run("unit_length", terms, mag_shares, challenges, party_ids, t, client_ids, fallback)
