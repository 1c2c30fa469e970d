"""Byzantine client behaviours for the robustness experiments.

Model-poisoning attacks act on update *deltas* (the change a client proposes
relative to the current global model); each protocol converts between its
raw update and a delta. Label flipping instead poisons the attacker's data
before training.

Formulations:

* ``bf``   bit flip: submit the negated own delta.
* ``lf``   label flip: train on ``y -> L - 1 - y``.
* ``ipm``  inner-product manipulation: ``-epsilon * mean(honest deltas)``.
* ``alie`` "a little is enough": ``mean + z * std`` of honest deltas per
  coordinate, with ``z`` from the coalition-size percentile rule unless given.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .learner import Dataset

KINDS = ("none", "bf", "lf", "ipm", "alie")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    f: int = 0
    epsilon: float = 0.5
    z: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.f < 0:
            raise ValueError("f must be non-negative")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.f > 0


def alie_z(n: int, f: int) -> float:
    """Largest deviation (in honest std units) that still looks like a majority member.

    ``s = floor(n/2 + 1) - f`` honest workers must be out-voted; ``z`` is the
    normal quantile at ``(n - s) / n``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    s = (n // 2 + 1) - f
    frac = min(max((n - s) / n, 1e-6), 1 - 1e-6)
    return NormalDist().inv_cdf(frac)


def flip_labels(data: Dataset) -> Dataset:
    return Dataset(data.X.copy(), data.classes - 1 - data.y, data.classes)


def malicious_delta(config: AttackConfig, own: np.ndarray, honest: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Delta submitted by one attacker.

    Args:
        own: the delta this attacker computed on its own (possibly poisoned) data.
        honest: deltas of this round's honest clients (omniscient coalition).
        n: number of clients in the round, used by the ALIE percentile rule.
    """
    kind = config.kind
    if kind in ("none", "lf"):
        return np.array(own, dtype=np.float64)
    if kind == "bf":
        return -np.asarray(own, dtype=np.float64)
    if len(honest) == 0:
        return np.array(own, dtype=np.float64)
    stack = np.asarray(honest, dtype=np.float64)
    mean = stack.mean(axis=0)
    if kind == "ipm":
        return -config.epsilon * mean
    z = config.z if config.z is not None else alie_z(n, config.f)
    return mean + z * stack.std(axis=0)
