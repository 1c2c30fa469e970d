"""Committee sizing from exact binomial tails.

The number of adversaries landing in a uniformly elected committee of size
``m`` is modelled as ``X ~ Binomial(m, p)``. The committee is safe when the
adversarial count stays below a threshold fraction of ``m`` except with
probability ``2**-security_bits``. All probabilities are exact rationals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Literal

Convention = Literal["strict", "ceil"]
DropoutRule = Literal["honest_share", "scaled", "online"]

MAX_COMMITTEE = 100_000


def _frac(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


@dataclass(frozen=True)
class CommitteePolicy:
    """Adversarial fraction ``p``, tolerated fraction ``threshold`` (1/2 or 1/3),
    target failure probability ``2**-security_bits``, and tolerated honest
    dropout ``dropout`` (fraction of the committee).

    ``convention`` picks the failure event: ``"strict"`` fails when
    ``X > m*threshold``; ``"ceil"`` fails when ``X >= ceil(m*threshold)``.
    """

    p: Fraction = Fraction(1, 10)
    threshold: Fraction = Fraction(1, 2)
    security_bits: int = 40
    dropout: Fraction = Fraction(0)
    convention: Convention = "strict"
    dropout_rule: DropoutRule = "honest_share"

    def __post_init__(self):
        object.__setattr__(self, "p", _frac(self.p))
        object.__setattr__(self, "threshold", _frac(self.threshold))
        object.__setattr__(self, "dropout", _frac(self.dropout))
        if not 0 < self.p < self.threshold <= Fraction(1, 2):
            raise ValueError("need 0 < p < threshold <= 1/2")
        if self.security_bits < 1:
            raise ValueError("security_bits must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.convention not in ("strict", "ceil"):
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.dropout_rule not in ("honest_share", "scaled", "online"):
            raise ValueError(f"unknown dropout rule {self.dropout_rule!r}")

    @property
    def depth(self) -> int:
        """Share multiplications supported: 1 for threshold 1/2, 2 for 1/3."""
        return 1 if self.threshold == Fraction(1, 2) else 2

    def effective_threshold(self) -> Fraction:
        thr, q = self.threshold, self.dropout
        if self.dropout_rule == "honest_share":
            # the dropped members come out of the honest (1 - thr) share
            return thr - q * (1 - thr)
        if self.dropout_rule == "scaled":
            return thr * (1 - q)
        # X / (m - q*(m - X)) < thr  <=>  X < thr*m*(1-q) / (1 - thr*q)
        return thr * (1 - q) / (1 - thr * q)


def binomial_tail_geq(m: int, p, k: int) -> Fraction:
    """``Pr[X >= k]`` for ``X ~ Binomial(m, p)``, exactly."""
    p = _frac(p)
    if m < 0:
        raise ValueError("m must be non-negative")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if k < 0 or k > m + 1:
        raise ValueError(f"k={k} outside [0, m+1]")
    return Fraction(_tail_numerator(m, p.numerator, p.denominator, k), p.denominator ** m)


def _tail_numerator(m: int, a: int, b: int, k: int) -> int:
    # sum_{i>=k} C(m,i) a^i (b-a)^(m-i), the tail scaled by b^m
    c = b - a
    return sum(comb(m, i) * a ** i * c ** (m - i) for i in range(k, m + 1))


def failure_count(m: int, threshold: Fraction, convention: Convention = "strict") -> int:
    """Smallest adversary count that breaks a committee of size ``m``."""
    x = m * threshold
    if convention == "strict":
        return x.numerator // x.denominator + 1
    return -((-x.numerator) // x.denominator)


def committee_is_safe(m: int, policy: CommitteePolicy, threshold: Fraction | None = None) -> bool:
    thr = policy.threshold if threshold is None else threshold
    k = failure_count(m, thr, policy.convention)
    if k > m:
        return True
    a, b = policy.p.numerator, policy.p.denominator
    # Pr[X >= k] < 2^-bits  <=>  num * 2^bits < b^m
    return _tail_numerator(m, a, b, k) << policy.security_bits < b ** m


def _search(policy: CommitteePolicy, threshold: Fraction) -> int:
    for m in range(1, MAX_COMMITTEE):
        if committee_is_safe(m, policy, threshold):
            return m
    raise ValueError("no committee size below the search bound satisfies the policy")


def min_committee_size(policy: CommitteePolicy) -> int:
    if policy.dropout:
        raise ValueError("policy has dropout; use min_committee_size_with_dropout")
    return _search(policy, policy.threshold)


def min_committee_size_with_dropout(policy: CommitteePolicy) -> int:
    if policy.dropout == 0:
        return min_committee_size(policy)
    return _search(policy, policy.effective_threshold())


def committee_size(policy: CommitteePolicy) -> int:
    """Dispatch on whether the policy tolerates dropout."""
    return min_committee_size_with_dropout(policy)


def tolerated_dropouts(m: int, policy: CommitteePolicy) -> int:
    """Members that may go offline in a committee of size ``m``."""
    x = m * policy.dropout
    return x.numerator // x.denominator
