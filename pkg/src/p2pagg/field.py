"""Arithmetic in the prime field GF(p), p = 2**61 - 1.

Scalar values are wrapped in :class:`FieldElement`; bulk share arithmetic
uses ``uint64`` numpy arrays whose entries are always reduced into
``[0, p)``. Reduction exploits the Mersenne form: ``2**61 == 1 (mod p)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

P = (1 << 61) - 1
ELEMENT_BYTES = 8

_P64 = np.uint64(P)
_M32 = np.uint64(0xFFFFFFFF)
_M29 = np.uint64((1 << 29) - 1)
_S3 = np.uint64(3)
_S29 = np.uint64(29)
_S32 = np.uint64(32)
_S61 = np.uint64(61)

IntLike = Union[int, np.integer, "FieldElement"]


class NoInverseError(ZeroDivisionError):
    """Raised when inverting the zero element."""


@dataclass(frozen=True, order=True)
class FieldElement:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < P:
            raise ValueError(f"field value {self.value} outside [0, p)")

    @classmethod
    def of(cls, x: IntLike) -> "FieldElement":
        """Reduce any integer (negative allowed) into the field."""
        if isinstance(x, FieldElement):
            return x
        return cls(int(x) % P)

    def __int__(self):
        return self.value

    def __index__(self):
        return self.value

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return FieldElement((self.value - _val(other)) % P)

    def __rsub__(self, other):
        return FieldElement((_val(other) - self.value) % P)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement((-self.value) % P)

    def __truediv__(self, other):
        return mul(self, inv(FieldElement.of(other)))

    def __pow__(self, e: int):
        if e < 0:
            return inv(self) ** (-e)
        return FieldElement(pow(self.value, e, P))

    def signed(self) -> int:
        """Centered representative in (-p/2, p/2]."""
        return self.value - P if self.value > P // 2 else self.value

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(ELEMENT_BYTES, "little")

    @classmethod
    def from_bytes(cls, data: bytes) -> "FieldElement":
        if len(data) != ELEMENT_BYTES:
            raise ValueError(f"expected {ELEMENT_BYTES} bytes, got {len(data)}")
        return cls(int.from_bytes(data, "little"))


def _val(x: IntLike) -> int:
    if isinstance(x, FieldElement):
        return x.value
    return int(x) % P


def add(a: IntLike, b: IntLike) -> FieldElement:
    return FieldElement((_val(a) + _val(b)) % P)


def sub(a: IntLike, b: IntLike) -> FieldElement:
    return FieldElement((_val(a) - _val(b)) % P)


def mul(a: IntLike, b: IntLike) -> FieldElement:
    return FieldElement((_val(a) * _val(b)) % P)


def inv(a: IntLike) -> FieldElement:
    """Multiplicative inverse via Fermat, ``a**(p-2)``."""
    v = _val(a)
    if v == 0:
        raise NoInverseError("no inverse: zero has no multiplicative inverse")
    return FieldElement(pow(v, P - 2, P))


def _draw_words(rng: np.random.Generator, size: int) -> np.ndarray:
    words = rng.integers(0, np.iinfo(np.uint64).max, size=size, dtype=np.uint64, endpoint=True)
    return words >> _S3


def sample_uniform(rng: np.random.Generator) -> FieldElement:
    """Uniform element by rejection sampling 61-bit slices of 64-bit words."""
    while True:
        v = int(_draw_words(rng, 1)[0])
        if v < P:
            return FieldElement(v)


def sample_uniform_array(rng: np.random.Generator, size) -> np.ndarray:
    """Vectorised :func:`sample_uniform`; returns reduced ``uint64`` values."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    total = int(np.prod(shape))
    out = _draw_words(rng, total)
    bad = np.flatnonzero(out >= _P64)
    while bad.size:
        out[bad] = _draw_words(rng, bad.size)
        bad = bad[out[bad] >= _P64]
    return out.reshape(shape)


# -- vector arithmetic on uint64 arrays ---------------------------------------


def _reduce(x: np.ndarray) -> np.ndarray:
    # valid for any x < 2**64
    x = (x & _P64) + (x >> _S61)
    return x - _P64 * (x >= _P64)


def asfield(x) -> np.ndarray:
    """Map integers (possibly negative, any int dtype or Python ints) into the field."""
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return _reduce(arr)
    if arr.dtype == object:
        return np.array([int(v) % P for v in arr.ravel()], dtype=np.uint64).reshape(arr.shape)
    arr = arr.astype(np.int64)
    out = np.remainder(arr, P).astype(np.uint64)
    return out


def to_signed(x: np.ndarray) -> np.ndarray:
    """Centered ``int64`` representatives of field values."""
    x = np.asarray(x, dtype=np.uint64)
    out = x.astype(np.int64)
    neg = x > np.uint64(P // 2)
    out[neg] = out[neg] - P
    return out


def vadd(a: np.ndarray, b) -> np.ndarray:
    s = np.add(a, b, dtype=np.uint64)
    return s - _P64 * (s >= _P64)


def vsub(a: np.ndarray, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    # a + (p - b) < 2**62, reduce once
    return _reduce(a + (_P64 - b))


def vneg(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    return (_P64 - a) * (a != 0)


def vmul(a, b) -> np.ndarray:
    """Elementwise product mod p using 32-bit limbs; inputs must be reduced."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a0 = a & _M32
    a1 = a >> _S32
    b0 = b & _M32
    b1 = b >> _S32
    lo = a0 * b0  # < 2**64
    mid = a1 * b0 + a0 * b1  # < 2**62
    hi = a1 * b1  # < 2**58
    r = (lo & _P64) + (lo >> _S61)
    r += (mid >> _S29) + ((mid & _M29) << _S32)  # 2**64 == 8 (mod p), 2**61 == 1
    r += hi << _S3
    return _reduce(r)


def vshift(a: np.ndarray, j: int) -> np.ndarray:
    """Multiply by ``2**j``: a 61-bit rotation, since ``2**61 == 1`` mod p."""
    if j < 0:
        raise ValueError("shift must be non-negative")
    j %= 61
    if j == 0:
        return np.array(a, dtype=np.uint64, copy=True)
    a = np.asarray(a, dtype=np.uint64)
    sj = np.uint64(j)
    r = ((a << sj) & _P64) | (a >> np.uint64(61 - j))
    return r * (r != _P64)


def vsum(stack: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum reduced values along ``axis`` with lazy reduction (7 terms per pass)."""
    stack = np.moveaxis(np.asarray(stack, dtype=np.uint64), axis, 0)
    rest = stack.shape[1:]
    if stack.shape[0] == 0:
        return np.zeros(rest, dtype=np.uint64)
    if int(np.prod(rest)) >= 1024:
        acc = np.zeros(rest, dtype=np.uint64)
        for start in range(0, stack.shape[0], 7):
            acc = _reduce(acc + stack[start:start + 7].sum(axis=0, dtype=np.uint64))
        return acc
    # long, thin input: reduce groups of 7 at a time as a tree
    while stack.shape[0] > 1:
        pad = (-stack.shape[0]) % 7
        if pad:
            stack = np.concatenate([stack, np.zeros((pad,) + rest, dtype=np.uint64)])
        stack = _reduce(stack.reshape((-1, 7) + rest).sum(axis=1, dtype=np.uint64))
    return stack[0]


class Accumulator:
    """Running field sum over many vectors, reducing every seventh addition."""

    def __init__(self, shape):
        self.acc = np.zeros(shape, dtype=np.uint64)
        self._pending = 0

    def add(self, x: np.ndarray) -> None:
        np.add(self.acc, x, out=self.acc)
        self._pending += 1
        if self._pending == 7:
            self.acc = _reduce(self.acc)
            self._pending = 0

    def value(self) -> np.ndarray:
        if self._pending:
            self.acc = _reduce(self.acc)
            self._pending = 0
        return self.acc


def vdot(a: np.ndarray, b: np.ndarray, axis: int = -1) -> np.ndarray:
    """Field inner product along ``axis``."""
    return vsum(vmul(a, b), axis=axis)


def encode_elements(x: np.ndarray) -> bytes:
    return np.asarray(x, dtype="<u8").tobytes()


def decode_elements(data: bytes) -> np.ndarray:
    if len(data) % ELEMENT_BYTES:
        raise ValueError(f"byte length {len(data)} is not a multiple of {ELEMENT_BYTES}")
    out = np.frombuffer(data, dtype="<u8").astype(np.uint64)
    if np.any(out >= _P64):
        raise ValueError("encoded element outside [0, p)")
    return out
