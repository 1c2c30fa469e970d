"""Shamir secret sharing over GF(p) with explicit degree bookkeeping.

Scalar helpers (:func:`share`, :func:`reconstruct_checked`, ...) follow the
textbook definitions and are used as the reference path. The ``*_vector``
functions carry the same semantics over share matrices of shape
``(parties, length)`` and are what the protocols run on.

Evaluation points are the party ids ``1..n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import field
from .field import P, FieldElement

SHARE_DTYPE = np.dtype([("party", "<u2"), ("degree", "<u2"), ("value", "<u8")])
SHARE_BYTES = SHARE_DTYPE.itemsize


class SharingError(ValueError):
    pass


class InconsistentSharingError(SharingError):
    def __init__(self, message="inconsistent sharing", parties=()):
        super().__init__(message)
        self.parties = tuple(parties)


class InsufficientSharesError(SharingError):
    def __init__(self, have: int, need: int):
        super().__init__(f"insufficient shares: have {have}, need {need}")
        self.have = have
        self.need = need


class UndecodableError(SharingError):
    def __init__(self, message="undecodable"):
        super().__init__(message)


class DegreeError(SharingError):
    pass


@dataclass(frozen=True)
class SharingParams:
    """Party count ``n`` and privacy threshold (polynomial degree) ``t``."""

    n: int
    t: int

    def __post_init__(self):
        if not 1 <= self.t < self.n:
            raise ValueError(f"need 1 <= t < n, got t={self.t}, n={self.n}")
        if self.n >= 1 << 16:
            raise ValueError("party ids must fit in two bytes")

    @classmethod
    def for_committee(cls, n: int, depth: int = 1, tolerated_dropouts: int = 0) -> "SharingParams":
        """Largest threshold that leaves ``(depth+1)*t + 1`` shares online.

        ``depth`` is the number of share multiplications the committee must
        reconstruct after: 1 gives ``t = (n-1)//2``, 2 gives ``t = (n-1)//3``.
        """
        online = n - tolerated_dropouts
        t = (online - 1) // (depth + 1)
        return cls(n=n, t=t)


@dataclass(frozen=True)
class Share:
    party_id: int
    value: int
    degree: int

    def __post_init__(self):
        if not 0 <= self.value < P:
            raise ValueError("share value outside [0, p)")
        if self.party_id < 1:
            raise ValueError("party ids start at 1")

    def to_bytes(self) -> bytes:
        return (
            self.party_id.to_bytes(2, "little")
            + self.degree.to_bytes(2, "little")
            + self.value.to_bytes(8, "little")
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Share":
        if len(data) != SHARE_BYTES:
            raise ValueError(f"share record is {SHARE_BYTES} bytes, got {len(data)}")
        return cls(
            party_id=int.from_bytes(data[0:2], "little"),
            degree=int.from_bytes(data[2:4], "little"),
            value=int.from_bytes(data[4:12], "little"),
        )


# -- polynomial helpers --------------------------------------------------------


def _poly_eval(coeffs: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % P
    return acc


def lagrange_coefficients(xs: Sequence[int], at: int = 0) -> list[int]:
    """Weights ``l_i(at)`` such that ``f(at) = sum_i l_i(at) * f(xs[i])``."""
    return list(_lagrange_cached(tuple(int(x) % P for x in xs), int(at) % P))


# committees reuse the same evaluation points every round
@lru_cache(maxsize=4096)
def _lagrange_cached(xs: tuple[int, ...], at: int) -> tuple[int, ...]:
    if len(set(xs)) != len(xs):
        raise SharingError("evaluation points must be distinct")
    out = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                num = num * (at - xj) % P
                den = den * (xi - xj) % P
        out.append(num * pow(den, P - 2, P) % P)
    return tuple(out)


def interpolate_at(xs: Sequence[int], ys: Sequence[int], at: int = 0) -> int:
    lam = lagrange_coefficients(xs, at)
    return sum(l * (int(y) % P) for l, y in zip(lam, ys)) % P


def interpolate_poly(xs: Sequence[int], ys: Sequence[int]) -> list[int]:
    """Coefficients (low to high) of the interpolating polynomial."""
    n = len(xs)
    coeffs = [0] * n
    for i in range(n):
        basis = [1]
        den = 1
        for j in range(n):
            if i == j:
                continue
            basis = _poly_mul(basis, [(-xs[j]) % P, 1])
            den = den * (xs[i] - xs[j]) % P
        scale = int(ys[i]) % P * pow(den, P - 2, P) % P
        for k, c in enumerate(basis):
            coeffs[k] = (coeffs[k] + c * scale) % P
    return coeffs


def _poly_mul(a: Sequence[int], b: Sequence[int]) -> list[int]:
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] = (out[i + j] + x * y) % P
    return out


def _poly_divmod(num: Sequence[int], den: Sequence[int]) -> tuple[list[int], list[int]]:
    num = list(num)
    while len(den) > 1 and den[-1] == 0:
        den = den[:-1]
    inv_lead = pow(den[-1], P - 2, P)
    q = [0] * max(len(num) - len(den) + 1, 1)
    for k in range(len(num) - len(den), -1, -1):
        c = num[k + len(den) - 1] * inv_lead % P
        q[k] = c
        for j, d in enumerate(den):
            num[k + j] = (num[k + j] - c * d) % P
    rem = num[: len(den) - 1] or [0]
    return q, rem


def _solve_mod_p(rows: list[list[int]], rhs: list[int]) -> list[int] | None:
    """Gaussian elimination mod p; returns one solution or None if inconsistent."""
    n_rows, n_cols = len(rows), len(rows[0])
    aug = [list(r) + [b] for r, b in zip(rows, rhs)]
    pivots = []
    r = 0
    for c in range(n_cols):
        piv = next((i for i in range(r, n_rows) if aug[i][c] % P), None)
        if piv is None:
            continue
        aug[r], aug[piv] = aug[piv], aug[r]
        inv_p = pow(aug[r][c], P - 2, P)
        aug[r] = [v * inv_p % P for v in aug[r]]
        for i in range(n_rows):
            if i != r and aug[i][c]:
                f = aug[i][c]
                aug[i] = [(vi - f * vr) % P for vi, vr in zip(aug[i], aug[r])]
        pivots.append(c)
        r += 1
        if r == n_rows:
            break
    for i in range(r, n_rows):
        if aug[i][-1] % P:
            return None
    sol = [0] * n_cols
    for i, c in enumerate(pivots):
        sol[c] = aug[i][-1]
    return sol


def berlekamp_welch(xs: Sequence[int], ys: Sequence[int], degree: int, max_errors: int) -> list[int]:
    """Decode a Reed-Solomon word: the degree-``degree`` polynomial agreeing with
    all but at most ``max_errors`` of the points ``(xs[i], ys[i])``."""
    n = len(xs)
    if n < degree + 2 * max_errors + 1:
        raise InsufficientSharesError(n, degree + 2 * max_errors + 1)
    e = max_errors
    # unknowns: Q_0..Q_{degree+e}, E_0..E_{e-1}; E is monic of degree e
    rows, rhs = [], []
    for x, y in zip(xs, ys):
        x %= P
        y = int(y) % P
        row = [pow(x, k, P) for k in range(degree + e + 1)]
        row += [(-y * pow(x, k, P)) % P for k in range(e)]
        rows.append(row)
        rhs.append(y * pow(x, e, P) % P)
    sol = _solve_mod_p(rows, rhs)
    if sol is None:
        raise UndecodableError()
    q = sol[: degree + e + 1]
    err = sol[degree + e + 1:] + [1]
    poly, rem = _poly_divmod(q, err)
    if any(rem):
        raise UndecodableError()
    poly = (poly + [0] * (degree + 1))[: degree + 1]
    disagree = sum(1 for x, y in zip(xs, ys) if _poly_eval(poly, x) != int(y) % P)
    if disagree > max_errors:
        raise UndecodableError()
    return poly


# -- scalar API ------------------------------------------------------------------


def share(secret, params: SharingParams, rng: np.random.Generator) -> list[Share]:
    """Evaluations at ``1..n`` of a uniformly random degree-``t`` polynomial with
    constant term ``secret``."""
    coeffs = [FieldElement.of(secret).value]
    coeffs += [field.sample_uniform(rng).value for _ in range(params.t)]
    return [Share(i, _poly_eval(coeffs, i), params.t) for i in range(1, params.n + 1)]


def _check_distinct(shares: Sequence[Share]) -> None:
    ids = [s.party_id for s in shares]
    if len(set(ids)) != len(ids):
        raise SharingError("duplicate party ids")


def reconstruct_checked(shares: Sequence[Share], degree: int) -> FieldElement:
    shares = list(shares)
    _check_distinct(shares)
    if len(shares) < degree + 1:
        raise InsufficientSharesError(len(shares), degree + 1)
    base = shares[: degree + 1]
    xs = [s.party_id for s in base]
    ys = [s.value for s in base]
    bad = []
    for extra in shares[degree + 1:]:
        if interpolate_at(xs, ys, extra.party_id) != extra.value:
            bad.append(extra.party_id)
    if bad:
        raise InconsistentSharingError(parties=bad)
    return FieldElement(interpolate_at(xs, ys, 0))


def reconstruct_corrected(shares: Sequence[Share], degree: int, max_errors: int) -> FieldElement:
    shares = list(shares)
    _check_distinct(shares)
    if len(shares) < degree + 2 * max_errors + 1:
        raise InsufficientSharesError(len(shares), degree + 2 * max_errors + 1)
    xs = [s.party_id for s in shares]
    ys = [s.value for s in shares]
    if max_errors == 0:
        try:
            return reconstruct_checked(shares, degree)
        except InconsistentSharingError as exc:
            raise UndecodableError() from exc
    poly = berlekamp_welch(xs, ys, degree, max_errors)
    return FieldElement(poly[0])


def _same_slot(a: Share, b: Share) -> None:
    if a.party_id != b.party_id:
        raise SharingError(f"party mismatch: {a.party_id} != {b.party_id}")


def add_shares(a: Share, b: Share) -> Share:
    _same_slot(a, b)
    if a.degree != b.degree:
        raise DegreeError(f"degree mismatch: {a.degree} != {b.degree}")
    return Share(a.party_id, (a.value + b.value) % P, a.degree)


def scale_share(a: Share, c) -> Share:
    return Share(a.party_id, a.value * FieldElement.of(c).value % P, a.degree)


def add_public(a: Share, c) -> Share:
    # every party adds c: the constant term shifts, degree is unchanged
    return Share(a.party_id, (a.value + FieldElement.of(c).value) % P, a.degree)


def mul_local(a: Share, b: Share, n: int) -> Share:
    """Pointwise product; the result lies on a polynomial of summed degree."""
    _same_slot(a, b)
    degree = a.degree + b.degree
    if degree >= n:
        raise DegreeError(f"degree overflow: {degree} needs {degree + 1} parties, have {n}")
    return Share(a.party_id, a.value * b.value % P, degree)


# -- vector API ------------------------------------------------------------------


def share_vector(secrets: np.ndarray, params: SharingParams, rng: np.random.Generator) -> np.ndarray:
    """Share every entry of ``secrets`` independently; returns ``(n, len)``."""
    secrets = field.asfield(np.asarray(secrets).ravel())
    coeffs = field.sample_uniform_array(rng, (params.t, secrets.size))
    xs = np.arange(1, params.n + 1, dtype=np.uint64)[:, None]
    # Horner over all parties at once: one (n, len) product per coefficient.
    acc = np.broadcast_to(coeffs[-1], (params.n, secrets.size))
    for c in coeffs[-2::-1]:
        acc = field.vadd(field.vmul(acc, xs), c)
    return field.vadd(field.vmul(acc, xs), secrets)


def _interp_matrix(xs: Sequence[int], targets: Sequence[int]) -> list[list[int]]:
    return [lagrange_coefficients(xs, at) for at in targets]


def _combine(weights: Sequence[int], rows: np.ndarray) -> np.ndarray:
    if rows[0].size * len(weights) <= 1 << 16:
        # narrow blocks: one vectorised pass instead of a call per row
        w = np.array(weights, dtype=np.uint64).reshape((-1,) + (1,) * (rows.ndim - 1))
        return field.vsum(field.vmul(rows[: len(weights)], w), axis=0)
    acc = field.Accumulator(rows.shape[1:])
    for w, row in zip(weights, rows):
        if w:
            acc.add(field.vmul(row, np.uint64(w)))
    return acc.value()


def _sketch_weights(length: int, seed) -> np.ndarray:
    return field.sample_uniform_array(np.random.default_rng(seed), length)


def inconsistent_parties(party_ids: Sequence[int], matrix: np.ndarray, degree: int) -> list[int]:
    """Extra parties (beyond the first ``degree+1``) whose rows disagree anywhere."""
    xs = list(party_ids[: degree + 1])
    extras = list(party_ids[degree + 1:])
    if not extras:
        return []
    coeff = _interp_matrix(xs, extras)
    bad = []
    for k, pid in enumerate(extras):
        expected = _combine(coeff[k], matrix[: degree + 1])
        if not np.array_equal(expected, matrix[degree + 1 + k]):
            bad.append(pid)
    return bad


def reconstruct_vector(
    party_ids: Sequence[int],
    matrix: np.ndarray,
    degree: int,
    check: str = "exact",
    sketch_seed=None,
) -> np.ndarray:
    """Reconstruct a shared vector from rows of ``matrix`` held by ``party_ids``.

    ``check="exact"`` verifies every extra share coordinatewise. ``"sketch"``
    verifies one random linear combination of the coordinates instead, which
    costs one multiplication per share entry and misses an inconsistency
    with probability at most 1/p for weights the sender could not predict.
    ``"none"`` skips verification.
    """
    party_ids = [int(x) for x in party_ids]
    matrix = np.asarray(matrix, dtype=np.uint64)
    if len(set(party_ids)) != len(party_ids):
        raise SharingError("duplicate party ids")
    if len(party_ids) < degree + 1:
        raise InsufficientSharesError(len(party_ids), degree + 1)
    if check == "exact":
        bad = inconsistent_parties(party_ids, matrix, degree)
        if bad:
            raise InconsistentSharingError(parties=bad)
    elif check == "sketch" and len(party_ids) > degree + 1:
        w = _sketch_weights(matrix.shape[1], sketch_seed)
        folded = np.array([field.vdot(row, w) for row in matrix], dtype=np.uint64)
        if inconsistent_parties(party_ids, folded[:, None], degree):
            raise InconsistentSharingError()
    elif check not in ("none", "sketch"):
        raise ValueError(f"unknown check mode {check!r}")
    lam = lagrange_coefficients(party_ids[: degree + 1], 0)
    return _combine(lam, matrix[: degree + 1])


def locate_corrupt_parties(
    party_ids: Sequence[int], matrix: np.ndarray, degree: int, max_errors: int, probe: int = 4
) -> list[int]:
    """Identify parties whose rows deviate from the majority codeword.

    Runs Berlekamp-Welch on up to ``probe`` coordinates that fail the parity
    check and returns the union of disagreeing parties.
    """
    party_ids = [int(x) for x in party_ids]
    xs = party_ids[: degree + 1]
    extras = party_ids[degree + 1:]
    coeff = _interp_matrix(xs, extras)
    suspect_cols: set[int] = set()
    for k in range(len(extras)):
        expected = _combine(coeff[k], matrix[: degree + 1])
        diff = np.flatnonzero(expected != matrix[degree + 1 + k])
        suspect_cols.update(diff[:probe].tolist())
        if len(suspect_cols) >= probe:
            break
    bad: set[int] = set()
    for col in sorted(suspect_cols)[:probe]:
        ys = [int(v) for v in matrix[:, col]]
        poly = berlekamp_welch(party_ids, ys, degree, max_errors)
        for pid, y in zip(party_ids, ys):
            if _poly_eval(poly, pid) != y:
                bad.add(pid)
    return sorted(bad)


def pack_share_vector(party_id: int, degree: int, values: np.ndarray) -> bytes:
    """Serialise a vector of shares as consecutive 12-byte share records."""
    rec = np.empty(len(values), dtype=SHARE_DTYPE)
    rec["party"] = party_id
    rec["degree"] = degree
    rec["value"] = values
    return rec.tobytes()


def unpack_share_vector(data: bytes) -> tuple[int, int, np.ndarray]:
    if len(data) % SHARE_BYTES:
        raise ValueError(f"payload length {len(data)} not a multiple of {SHARE_BYTES}")
    rec = np.frombuffer(data, dtype=SHARE_DTYPE)
    if rec.size == 0:
        raise ValueError("empty share vector")
    party = int(rec["party"][0])
    degree = int(rec["degree"][0])
    if np.any(rec["party"] != party) or np.any(rec["degree"] != degree):
        raise ValueError("share records disagree on party or degree")
    values = rec["value"].astype(np.uint64)
    if np.any(values >= np.uint64(P)):
        raise ValueError("share value outside [0, p)")
    return party, degree, values


def shares_from_column(party_ids: Iterable[int], column: np.ndarray, degree: int) -> list[Share]:
    return [Share(int(pid), int(v), degree) for pid, v in zip(party_ids, column)]


@dataclass(frozen=True)
class Opened:
    """Result of :func:`open_vector`.

    ``verified`` is False when exactly ``degree + 1`` shares were available,
    so no redundancy existed to check them. ``corrupt`` lists parties whose
    shares were located as wrong and excluded.
    """

    value: np.ndarray
    verified: bool
    corrupt: tuple[int, ...] = ()


def open_vector(
    party_ids: Sequence[int],
    matrix: np.ndarray,
    degree: int,
    check: str = "exact",
    sketch_seed=None,
) -> Opened:
    """Reconstruct with detection, then correction when redundancy allows.

    Raises :class:`InconsistentSharingError` if corruption is detected but
    there are too few spare shares to locate it, and
    :class:`UndecodableError` if location fails.
    """
    party_ids = [int(x) for x in party_ids]
    matrix = np.asarray(matrix, dtype=np.uint64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if len(party_ids) < degree + 1:
        raise InsufficientSharesError(len(party_ids), degree + 1)
    if len(party_ids) == degree + 1:
        return Opened(reconstruct_vector(party_ids, matrix, degree, check="none"), False)
    try:
        return Opened(reconstruct_vector(party_ids, matrix, degree, check, sketch_seed), True)
    except InconsistentSharingError as exc:
        max_errors = (len(party_ids) - degree - 1) // 2
        if max_errors == 0:
            raise InconsistentSharingError("inconsistent sharing: detected, too few shares to correct") from exc
        bad = locate_corrupt_parties(party_ids, matrix, degree, max_errors)
        if not bad or len(bad) > max_errors:
            raise UndecodableError(f"undecodable: located {len(bad)} corrupt shares, budget {max_errors}")
        keep = [k for k, pid in enumerate(party_ids) if pid not in bad]
        value = reconstruct_vector([party_ids[k] for k in keep], matrix[keep], degree, "exact")
        return Opened(value, True, tuple(bad))
