"""Trust-weighted aggregation against a public root update.

Every peer derives the same root update ``g0`` from the public root dataset
and the same reflection ``M`` sending ``g0/|g0|`` to the first axis. Clients
submit the reflected unit direction of their own update in sign-magnitude
fixed point; the first coordinate carries no sign, so its magnitude is a
non-negative trust score by construction. Clients pointing away from ``g0``
submit the zero-trust vector ``e_2`` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import dzk, field
from ..codec import FixedPointCodec, bits_to_int, int_to_bits
from ..core import AggregationSpec, CheckSpec, Peer, RoundContext
from ..learner import Dataset, local_epoch


@dataclass(frozen=True)
class FltParams:
    alpha: float = 1.0
    theta: int = 16
    lr: float = 0.1
    root_fraction: float = 0.05
    root_seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0 < self.root_fraction < 1:
            raise ValueError("root_fraction must lie in (0, 1)")


class Householder:
    """``I - 2 v v^T / |v|^2`` with ``v = a - e_1``; maps unit ``a`` to ``e_1``."""

    def __init__(self, unit: np.ndarray):
        v = np.array(unit, dtype=np.float64)
        v[0] -= 1.0
        self.v = v
        self.vv = float(v @ v)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.vv < 1e-300:
            return x.copy()
        return x - (2.0 * float(self.v @ x) / self.vv) * self.v


def lattice_repair(mags: np.ndarray, exact: np.ndarray, target: int) -> np.ndarray:
    """Move rounded magnitudes to an integer point with ``sum(m^2) == target``.

    Tries a fix on a single coordinate (the one that stays closest to its
    unrounded value). Otherwise the three largest coordinates are re-fit
    jointly by a grid search around their rounded values, after nudging the
    fourth and fifth largest so that the remainder is a sum of three squares.
    Two nudged coordinates are needed because four squares summing to a
    multiple of 8 must all be even, which leaves almost no nearby points.
    """
    m = np.asarray(mags, dtype=np.int64).copy()
    exact = np.asarray(exact, dtype=np.float64)
    diff = target - int(np.dot(m, m))
    if diff == 0:
        return m
    h = _single_fix(m, exact, diff)
    if h is not None:
        m[h[0]] = h[1]
        return m
    order = [int(x) for x in np.argsort(-m, kind="stable")[:5]]
    fit, nudge = order[:3], order[3:]
    limit = math.isqrt(target)
    base = target - int(np.dot(m, m)) + sum(int(m[x]) ** 2 for x in fit + nudge)
    # A remainder divisible by 4^j only has representations on multiples of
    # 2^j, so remainders not divisible by 4 are tried first.
    best = None
    for coarse_ok in (False, True):
        viable = 0
        for values in _nudges(m[nudge], exact[nudge], limit):
            rest = base - int(np.dot(values, values))
            if rest < 0 or (len(fit) == 3 and not _three_square(rest)):
                continue
            if rest % 4 == 0 and not coarse_ok:
                continue
            found = _fit_squares(rest, m[fit], exact[fit], limit)
            if found is None:
                continue
            cost = float(np.abs(found - exact[fit]).sum() + np.abs(values - exact[nudge]).sum())
            if best is None or cost < best[0]:
                best = (cost, found, values)
            viable += 1
            if viable >= 4:
                break
        if best is not None:
            m[fit] = best[1]
            m[nudge] = best[2]
            return m
    # Only reachable with very few coordinates, where the sphere carries
    # few lattice points: fall back to the nearest axis point.
    axis = np.zeros_like(m)
    axis[int(np.argmax(exact))] = limit
    if limit * limit != target:
        raise ArithmeticError(f"no lattice point with squared norm {target}")
    return axis


def _nudges(start: np.ndarray, exact: np.ndarray, limit: int):
    """Candidate values for the nudged coordinates in a small window, cheapest first."""
    if start.size == 0:
        yield start
        return
    axes = [_window(s, 8, limit) for s in start]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, start.size)
    cost = np.abs(grid - exact).sum(axis=1)
    yield from grid[np.argsort(cost, kind="stable")]


def _three_square(n: int) -> bool:
    """Whether ``n`` is a sum of three squares (not of the form 4^a (8b + 7))."""
    while n and n % 4 == 0:
        n //= 4
    return n % 8 != 7


def _fit_squares(total: int, start: np.ndarray, exact: np.ndarray, limit: int,
                 max_radius: int = 1024) -> np.ndarray | None:
    """Two or three values near ``exact`` whose squares sum to ``total``.

    The first and (if present) third values are scanned on a grid around
    ``start``; the second is the exact square root of what is left. The
    window widens fourfold up to ``max_radius``.
    """
    three = len(start) == 3
    radius = 64
    while True:
        a = _window(start[0], radius, limit)[None, :]
        cs = _window(start[2], radius, limit) if three else np.zeros(1, np.int64)
        best = None
        rows = max(1, (1 << 20) // a.size)
        for lo in range(0, cs.size, rows):
            c = cs[lo:lo + rows, None]
            b, ok = _isqrt_exact(total - c * c - a * a)
            if not ok.any():
                continue
            cost = np.abs(a - exact[0]) + np.abs(b - exact[1])
            if three:
                cost = cost + np.abs(c - exact[2])
            cost = np.where(ok, cost, np.inf)
            r, s = np.unravel_index(int(np.argmin(cost)), ok.shape)
            if best is None or cost[r, s] < best[0]:
                best = (cost[r, s], [a[0, s], b[r, s], c[r, 0]])
        if best is not None:
            return np.array(best[1][: len(start)], dtype=np.int64)
        if radius >= max_radius:
            return None
        radius *= 4


def _window(center: int, radius: int, limit: int) -> np.ndarray:
    return np.arange(max(0, int(center) - radius), min(limit, int(center) + radius) + 1, dtype=np.int64)


def _isqrt_exact(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integer square roots of ``n`` and a mask of where they are exact."""
    n = np.asarray(n, dtype=np.int64)
    r = np.floor(np.sqrt(np.maximum(n, 0).astype(np.float64))).astype(np.int64)
    r = np.where(r * r > n, r - 1, r)
    r = np.where((r + 1) * (r + 1) <= n, r + 1, r)
    return r, (n >= 0) & (r * r == n)


def _single_fix(m, exact, diff):
    """A coordinate ``j`` and value ``r`` with ``r^2 == m[j]^2 + diff``, or None."""
    cand = m * m + diff
    idx = np.flatnonzero(cand >= 0)
    if idx.size == 0:
        return None
    roots, hit = _isqrt_exact(cand[idx])
    if not hit.any():
        return None
    j = idx[hit]
    rj = roots[hit]
    best = int(np.argmin(np.abs(rj - exact[j])))
    return int(j[best]), int(rj[best])


class FltSpec(AggregationSpec):
    name = "flt"
    depth = 2

    def __init__(self, model, root: Dataset, params: FltParams = FltParams()):
        self.model = model
        self.root = root
        self.params = params
        self.codec = FixedPointCodec(params.theta, frac_bits=params.theta - 2, mode="sign_magnitude")

    @property
    def scale(self) -> int:
        return 1 << self.codec.frac_bits

    @property
    def unit(self) -> int:
        return self.scale * self.scale

    def model_update(self, w, data: Dataset, rng) -> np.ndarray:
        return local_epoch(self.model, w, data, self.params.lr, rng) - w

    def round_context(self, w, round_index):
        w = np.asarray(w, dtype=np.float64)
        if w.size < 2:
            raise ValueError("trust-weighted aggregation needs at least two parameters")
        g0 = self.model_update(w, self.root, np.random.default_rng([self.params.root_seed, round_index]))
        norm = float(np.linalg.norm(g0))
        if norm == 0 or not np.isfinite(norm):
            return None
        return RoundContext(round_index, w, {"g0": g0, "norm": norm, "M": Householder(g0 / norm)})

    def client_update(self, peer: Peer, ctx: RoundContext) -> np.ndarray:
        g = self.model_update(ctx.w, peer.data, peer.rng)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite update at peer {peer.peer_id}")
        return g

    def to_delta(self, u, ctx):
        return np.asarray(u, dtype=np.float64)

    def from_delta(self, delta, ctx):
        return np.asarray(delta, dtype=np.float64)

    def bottom(self, d: int) -> dict[str, np.ndarray]:
        mags = np.zeros(d, dtype=np.int64)
        mags[1] = self.scale
        return self._pack(mags, np.ones(d - 1, dtype=np.int64))

    def _pack(self, mags, signs):
        return {"mag_bits": int_to_bits(mags, self.params.theta).astype(np.int64), "signs": signs}

    def encode_unit(self, r: np.ndarray) -> dict[str, np.ndarray]:
        """Sign-magnitude lattice point nearest the unit vector ``r`` (``r[0] >= 0``)."""
        exact = np.abs(r) * self.scale
        mags = lattice_repair(np.rint(exact).astype(np.int64), exact, self.unit)
        signs = np.where(r[1:] < 0, -1, 1).astype(np.int64)
        return self._pack(mags, signs)

    def rotated(self, g, ctx) -> np.ndarray | None:
        norm = float(np.linalg.norm(g))
        if norm == 0:
            return None
        return ctx.extra["M"].apply(np.asarray(g, dtype=np.float64) / norm)

    def preprocess(self, u, ctx):
        d = ctx.w.size
        r = self.rotated(u, ctx)
        if r is None:
            return self.bottom(d)
        if r[0] < 0 and np.rint(-r[0] * self.scale) > 0:
            return self.bottom(d)
        return self.encode_unit(r)

    def magnitudes(self, v) -> np.ndarray:
        return bits_to_int(v["mag_bits"], self.params.theta).astype(np.int64)

    def layout(self, ctx):
        d = ctx.w.size
        return [("mag_bits", d * self.params.theta), ("signs", d - 1)]

    def in_domain(self, v, ctx) -> bool:
        d = ctx.w.size
        bits = np.asarray(v["mag_bits"])
        signs = np.asarray(v["signs"])
        if bits.shape != (d * self.params.theta,) or signs.shape != (d - 1,):
            return False
        if not np.all((bits == 0) | (bits == 1)) or not np.all((signs == 1) | (signs == -1)):
            return False
        mags = self.magnitudes(v)
        return int(np.dot(mags, mags)) == self.unit

    def checks(self, ctx):
        return [
            CheckSpec("binary", "mag_bits"),
            CheckSpec("sign", "signs"),
            CheckSpec("unit_length", "mag_bits", width=self.params.theta, constant=self.unit),
        ]

    def member_aggregate(self, parts, t):
        n_clients = parts["signs"].shape[1]
        assert n_clients * self.unit < field.P // 2, "weighted sum would wrap the field"
        mags = dzk.recompose_bits(parts["mag_bits"], self.params.theta)  # degree t
        trust = mags[..., 0]
        signed = field.vmul(parts["signs"], mags[..., 1:])  # degree 2t
        weighted = np.concatenate(
            [field.vmul(trust, trust)[..., None], field.vmul(trust[..., None], signed)], axis=-1
        )  # degree 3t (2t in the first slot)
        return [
            ("trust_sum", field.vsum(trust, axis=1)[:, None], t),
            ("weighted", field.vsum(weighted, axis=1), 3 * t),
        ]

    def plaintext_aggregate(self, vs: Sequence[dict], ctx):
        trust_sum = 0
        weighted = np.zeros(ctx.w.size, dtype=np.int64)
        for v in vs:
            mags = self.magnitudes(v)
            signed = mags.copy()
            signed[1:] *= np.asarray(v["signs"], dtype=np.int64)
            trust_sum += int(mags[0])
            weighted += int(mags[0]) * signed
        return {"trust_sum": np.array([trust_sum], dtype=np.int64), "weighted": weighted}

    def postprocess(self, revealed, ctx, n_clients):
        trust_sum = int(np.asarray(revealed["trust_sum"]).ravel()[0])
        if trust_sum < 0:
            raise ValueError("negative total trust")
        if trust_sum == 0:
            return ctx.w.copy()
        direction = np.asarray(revealed["weighted"], dtype=np.float64) / (trust_sum * self.scale)
        g = ctx.extra["M"].apply(direction) * ctx.extra["norm"]
        return ctx.w + self.params.alpha * g

    def preimage(self, v, ctx):
        mags = self.magnitudes(v)
        signs = np.asarray(v["signs"], dtype=np.float64)
        r = mags.astype(np.float64) / self.scale
        r[1:] *= signs
        # keep the sign of zero magnitudes visible without moving them off zero
        zero = mags[1:] == 0
        r[1:][zero] = signs[zero] * 2.0 ** -(self.codec.frac_bits + 4)
        return ctx.extra["M"].apply(r) * ctx.extra["norm"]

    def sample_valid(self, ctx, rng):
        r = rng.normal(size=ctx.w.size)
        r[0] = abs(r[0])
        r /= np.linalg.norm(r)
        v = self.encode_unit(r)
        zero = self.magnitudes(v)[1:] == 0
        v["signs"][zero] = rng.choice([-1, 1], size=int(zero.sum()))
        return v

    def real_aggregate(self, us, ctx):
        g0, norm = ctx.extra["g0"], ctx.extra["norm"]
        num = np.zeros_like(ctx.w)
        total = 0.0
        for g in us:
            n = float(np.linalg.norm(g))
            if n == 0:
                continue
            ts = max(0.0, float(g @ g0) / (n * norm))
            num += ts * np.asarray(g) / n * norm
            total += ts
        if total == 0:
            return ctx.w.copy()
        return ctx.w + self.params.alpha * num / total
