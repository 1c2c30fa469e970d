"""Timing of one committee member's local aggregation work.

A single member's share of any degree-``t >= 1`` sharing is a uniform field
element, so member inputs are drawn uniformly; a small pool of buffers is
cycled so that memory stays bounded at large client counts. Only the member
computation is timed: accumulation, local products, bit recomposition, and
the Lagrange combination that opens the aggregate (with a sketch check).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import field, sharing
from .dzk import recompose_bits

COMMITTEE = {"rsa": 46, "cc": 46, "flt": 121}
DEPTH = {"rsa": 1, "cc": 1, "flt": 2}
POOL = 4
CHUNK = 1 << 16


@dataclass(frozen=True)
class BenchRow:
    protocol: str
    d: int
    n: int
    committee: int
    trials: int
    mean_seconds: float
    min_seconds: float


def _member_work(protocol: str, pool: list[np.ndarray], n: int, d: int, theta: int) -> np.ndarray:
    if protocol in ("rsa", "cc"):
        acc = field.Accumulator(pool[0].shape)
        for i in range(n):
            acc.add(pool[i % len(pool)])
        return acc.value()
    acc_w = field.Accumulator((d,))
    acc_t = field.Accumulator((1,))
    for i in range(n):
        buf = pool[i % len(pool)]
        mags = recompose_bits(buf[: d * theta], theta)
        trust = mags[:1]
        signed = field.vmul(buf[d * theta:], mags[1:])
        acc_w.add(np.concatenate([field.vmul(trust, trust), field.vmul(trust, signed)]))
        acc_t.add(trust)
    return acc_w.value()


def _opening_block(m: int, degree: int, width: int, rng) -> tuple[int, np.ndarray]:
    """Consistent degree-``degree`` shares of a ``width``-column block.

    Every column uses the same polynomial scaled by a random vector, which
    is cheap to build and indistinguishable in cost from a general sharing.
    """
    coeffs = [int(c) for c in field.sample_uniform_array(rng, degree + 1)]
    base = field.sample_uniform_array(rng, width)
    rows = []
    for x in range(1, m + 1):
        ev = 0
        for c in reversed(coeffs):
            ev = (ev * x + c) % field.P
        rows.append(field.vmul(base, np.uint64(ev)))
    return width, np.stack(rows)


def bench_fr(protocol: str, d: int, n: int, trials: int = 3, committee: int | None = None,
             seed: int = 0) -> BenchRow:
    if protocol not in COMMITTEE:
        raise ValueError(f"unknown protocol {protocol!r}")
    m = committee or COMMITTEE[protocol]
    depth = DEPTH[protocol]
    t = (m - 1) // (depth + 1)
    degree = 3 * t if protocol == "flt" else t
    theta = 32 if protocol == "cc" else 16
    rng = np.random.default_rng(seed)
    length = {"rsa": d, "cc": d * 32, "flt": d * theta + d - 1}[protocol]
    pool = [field.sample_uniform_array(rng, length) for _ in range(min(POOL, n))]
    out_len = d * 32 if protocol == "cc" else d
    chunk, agg = _opening_block(m, degree, min(out_len, CHUNK), rng)
    ids = list(range(1, m + 1))

    def open_all():
        for start in range(0, out_len, chunk):
            width = min(chunk, out_len - start)
            sharing.reconstruct_vector(ids, agg[:, :width], degree, check="sketch", sketch_seed=seed + start)

    # untimed pass over every buffer shape; a fixed roster also precomputes
    # its interpolation constants once
    _member_work(protocol, pool, len(pool), d, theta)
    open_all()
    times = []
    for trial in range(trials):
        t0 = time.perf_counter()
        _member_work(protocol, pool, n, d, theta)
        open_all()
        times.append(time.perf_counter() - t0)
    return BenchRow(protocol, d, n, m, trials, float(np.mean(times)), float(np.min(times)))


def grid_cells(d_list, n_list) -> list[tuple[int, int]]:
    """Cells varying ``d`` at the first ``n`` and ``n`` at the last ``d``."""
    return sorted({(d, n_list[0]) for d in d_list} | {(d_list[-1], n) for n in n_list})


def bench_grid(protocols, d_list, n_list, trials: int = 3, seed: int = 0, report=None) -> list[BenchRow]:
    """Time every protocol over :func:`grid_cells`.

    One discarded run per protocol at the largest ``d`` comes first: the first
    large-array workload in a process runs measurably slower than later ones
    (allocator and page-cache warm-up), which would bend the scaling fits.
    """
    rows = []
    for protocol in protocols:
        bench_fr(protocol, max(d_list), min(n_list), trials=1, seed=seed)
        for d, n in grid_cells(d_list, n_list):
            row = bench_fr(protocol, d, n, trials, seed=seed)
            rows.append(row)
            if report is not None:
                report(row)
    return rows


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = a x + b``; returns ``(a, b, r2)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2
