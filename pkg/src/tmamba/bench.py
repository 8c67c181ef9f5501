"""Timing comparison: selective scan vs naive quadratic self-attention.

Both paths run in float64 on one core at equal channel width.  The scan is
linear in sequence length; the attention baseline materializes the L x L
score matrix (in row chunks to bound memory), so its time grows
quadratically.

Shared machines stall workloads for tens of milliseconds at a time, so a
single stopwatch read is meaningless.  Each reported time is the median of
`repeats` runs where one run is the best of several back-to-back
executions, and each doubling ratio is measured pairwise: the two lengths
alternate within a run so both see the same machine conditions.
"""

from __future__ import annotations

import time

import numpy as np

from .numcore import Tensor, no_grad
from .ssm import init_ssm_params, selective_scan


def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                      chunk: int = 2048) -> np.ndarray:
    """softmax(q kᵀ / sqrt(d)) v computed in row chunks."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    out = np.empty_like(v)
    for lo in range(0, q.shape[0], chunk):
        hi = min(lo + chunk, q.shape[0])
        scores = (q[lo:hi] @ k.T) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        out[lo:hi] = scores @ v
    return out


def attention_direct(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-at-a-time reference for validating the chunked implementation."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    out = np.empty_like(v)
    for i in range(q.shape[0]):
        s = np.array([float(q[i] @ k[j]) * scale for j in range(k.shape[0])])
        s = np.exp(s - s.max())
        s /= s.sum()
        out[i] = s @ v
    return out


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _best_of(fn, inner: int) -> float:
    return min(_timed(fn) for _ in range(inner))


def _median_time(fn, repeats: int, inner: int = 3) -> float:
    fn()                       # warm-up: allocator growth and page faults
    return float(np.median([_best_of(fn, inner) for _ in range(repeats)]))


def _paired_ratio(fa, fb, repeats: int, inner: int):
    """Median over runs of best_b / best_a with a and b tightly alternated.

    Returns (ratio, floor_a, floor_b); the floors are the overall minima and
    serve as the per-length time estimates.
    """
    fa()
    fb()
    ratios, floor_a, floor_b = [], np.inf, np.inf
    for _ in range(max(1, repeats)):
        best_a = best_b = np.inf
        for _ in range(inner):
            best_a = min(best_a, _timed(fa))
            best_b = min(best_b, _timed(fb))
        ratios.append(best_b / best_a)
        floor_a = min(floor_a, best_a)
        floor_b = min(floor_b, best_b)
    return float(np.median(ratios)), floor_a, floor_b


def _scan_runner(length: int, width: int, state: int, seed: int):
    rng = np.random.default_rng(seed)
    params = init_ssm_params(rng, width, state)
    x = Tensor(rng.normal(0.0, 1.0, (1, length, width)))

    def go():
        with no_grad():
            selective_scan(x, params)

    return go


def _attn_runner(length: int, width: int, seed: int):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(0.0, 1.0, (length, width)) for _ in range(3))
    return lambda: attention_forward(q, k, v)


def time_scan(length: int, width: int = 16, state: int = 16,
              repeats: int = 5, seed: int = 0) -> float:
    return _median_time(_scan_runner(length, width, state, seed), repeats)


def time_attention(length: int, width: int = 16, repeats: int = 5,
                   seed: int = 0) -> float:
    return _median_time(_attn_runner(length, width, seed), repeats)


def run_bench(lengths, repeats: int = 5, width: int = 16,
              state: int = 16, seed: int = 0) -> list[dict]:
    """One row per length with time floors and pairwise doubling ratios."""
    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ValueError("lengths must be ascending")
    scans = [_scan_runner(n, width, state, seed) for n in lengths]
    attns = [_attn_runner(n, width, seed) for n in lengths]
    rows = [{"length": n, "scan_s": None, "attn_s": None,
             "scan_ratio": None, "attn_ratio": None} for n in lengths]

    def put(row, key, value):
        row[key] = value if row[key] is None else min(row[key], value)

    if len(lengths) == 1:
        rows[0]["scan_s"] = _median_time(scans[0], repeats)
        rows[0]["attn_s"] = _median_time(attns[0], repeats)
        return rows
    for i in range(len(lengths) - 1):
        # scan steps are short, so they get deeper best-of filtering
        ratio, fa, fb = _paired_ratio(scans[i], scans[i + 1], repeats, inner=6)
        rows[i + 1]["scan_ratio"] = ratio
        put(rows[i], "scan_s", fa)
        put(rows[i + 1], "scan_s", fb)
        ratio, fa, fb = _paired_ratio(attns[i], attns[i + 1], repeats, inner=3)
        rows[i + 1]["attn_ratio"] = ratio
        put(rows[i], "attn_s", fa)
        put(rows[i + 1], "attn_s", fb)
    return rows
