"""Median wall-clock timings for dense vs Toeplitz-like maps.

``matvec`` is one ``apply`` on a single vector. ``step`` is the work one
recurrent matrix does in a BPTT step on a minibatch: ``apply`` forward,
then ``backward`` for both the input gradient and the parameter gradients.
"""

import statistics
import time

from threadpoolctl import threadpool_limits

from . import linear_maps
from .numerics import SplitMix64, mix64

BENCH_HEADER = ["kind", "op", "n", "rank", "repetitions", "median_s"]


def _median_time(fn, repetitions):
    fn()  # warm caches and FFT plans
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def _ops(lmap, rng, n, batch):
    x = rng.uniform(n, -1.0, 1.0)
    xb = rng.uniform((batch, n), -1.0, 1.0)
    up = rng.uniform((batch, n), -1.0, 1.0)

    def step():
        lmap.apply(xb)
        lmap.backward(xb, up)

    return {"matvec": lambda: lmap.apply(x), "step": step}


def run_bench(sizes=(4096,), ranks=(1, 2, 5, 10), repetitions=5, batch=16, seed=0):
    """Rows of dicts with the BENCH_HEADER fields, single-threaded BLAS."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    rows = []
    with threadpool_limits(limits=1):
        for n in sizes:
            rng = SplitMix64(mix64(seed, n))
            dense = linear_maps.DenseMap.init(rng, n, n)
            for op, fn in _ops(dense, rng, n, batch).items():
                rows.append({"kind": "dense", "op": op, "n": n, "rank": "",
                             "repetitions": repetitions, "median_s": _median_time(fn, repetitions)})
            del dense
            for r in ranks:
                toep = linear_maps.ToeplitzLikeMap.init(rng, n, n, r)
                for op, fn in _ops(toep, rng, n, batch).items():
                    rows.append({"kind": "toeplitz", "op": op, "n": n, "rank": r,
                                 "repetitions": repetitions, "median_s": _median_time(fn, repetitions)})
    return rows


def speedup(rows, n, rank, op="matvec"):
    """Dense median time over Toeplitz median time at size n and the given rank."""
    pick = {(r["kind"], r["rank"]): r["median_s"] for r in rows if r["n"] == n and r["op"] == op}
    return pick[("dense", "")] / pick[("toeplitz", rank)]


def rank_ratio(rows, n, hi=10, lo=5, op="step"):
    pick = {r["rank"]: r["median_s"] for r in rows if r["n"] == n and r["op"] == op and r["kind"] == "toeplitz"}
    return pick[hi] / pick[lo]
