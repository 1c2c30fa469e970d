"""Fixed-point encodings and bit decompositions.

Two modes are supported. ``"box"`` maps an interval ``[lo, hi]`` affinely
onto the unsigned integers ``0..2**theta - 1``. ``"sign_magnitude"`` stores
``rint(|x| * 2**frac_bits)`` in ``theta`` bits plus a separate sign.
Quantisation is round-half-to-even throughout (``np.rint``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Mode = Literal["box", "sign_magnitude"]


@dataclass(frozen=True)
class FixedPointCodec:
    theta: int = 32
    frac_bits: int | None = None
    mode: Mode = "box"
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.theta not in (16, 32):
            raise ValueError(f"theta must be 16 or 32, got {self.theta}")
        if self.mode not in ("box", "sign_magnitude"):
            raise ValueError(f"unknown codec mode {self.mode!r}")
        if self.mode == "box" and not self.hi > self.lo:
            raise ValueError("box codec needs hi > lo")
        if self.frac_bits is None:
            object.__setattr__(self, "frac_bits", self.theta - 2)
        if not 0 <= self.frac_bits < self.theta:
            raise ValueError("frac_bits must lie in [0, theta)")

    @property
    def levels(self) -> int:
        return (1 << self.theta) - 1

    @property
    def step(self) -> float:
        """Decode resolution: one integer step in real units."""
        if self.mode == "box":
            return (self.hi - self.lo) / self.levels
        return 2.0 ** -self.frac_bits

    @property
    def max_abs(self) -> float:
        return self.levels * 2.0 ** -self.frac_bits

    def encode(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Quantise ``x``; returns ``(ints, saturated)``.

        In sign-magnitude mode ``ints`` are magnitudes; recover signs with
        :func:`numpy.signbit` on the input.
        """
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("cannot encode non-finite values")
        if self.mode == "box":
            clipped = np.clip(x, self.lo, self.hi)
            q = np.rint((clipped - self.lo) / (self.hi - self.lo) * self.levels)
            return q.astype(np.int64), clipped != x
        mag = np.rint(np.abs(x) * 2.0 ** self.frac_bits)
        sat = mag > self.levels
        return np.minimum(mag, self.levels).astype(np.int64), sat

    def decode(self, q, negative=None) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if self.mode == "box":
            return q / self.levels * (self.hi - self.lo) + self.lo
        out = q * 2.0 ** -self.frac_bits
        if negative is not None:
            out = np.where(negative, -out, out)
        return out

    def to_bits(self, q) -> np.ndarray:
        return int_to_bits(q, self.theta)

    def from_bits(self, bits) -> np.ndarray:
        return bits_to_int(bits, self.theta)


def int_to_bits(q, width: int) -> np.ndarray:
    """Little-endian bits of each entry, concatenated: shape ``(len(q) * width,)``."""
    q = np.asarray(q, dtype=np.uint64).ravel()
    if width < 64 and np.any(q >> np.uint64(width)):
        raise ValueError(f"value does not fit in {width} bits")
    shifts = np.arange(width, dtype=np.uint64)
    return ((q[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()


def bits_to_int(bits, width: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint64)
    if bits.size % width:
        raise ValueError(f"bit count {bits.size} not a multiple of {width}")
    grouped = bits.reshape(-1, width)
    return (grouped << np.arange(width, dtype=np.uint64)).sum(axis=1, dtype=np.uint64)


def encode_fixed(x, codec: FixedPointCodec) -> tuple[np.ndarray, np.ndarray]:
    """Encode reals to concatenated bit vectors; returns ``(bits, saturated)``."""
    q, sat = codec.encode(x)
    return codec.to_bits(q), sat


def decode_fixed(bits, codec: FixedPointCodec, negative=None) -> np.ndarray:
    return codec.decode(codec.from_bits(bits).astype(np.int64), negative)
