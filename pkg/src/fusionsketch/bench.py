"""Explicit bilinear fusion versus tensor sketch: output size and forward time."""
import csv
import io
import time
from dataclasses import dataclass
from math import prod

import numpy as np

from ._random import generator
from .fusion import DEFAULT_BILINEAR_CAP, FusionLayer, FusionSpec

__all__ = ["BenchRow", "run_bench", "bench_csv"]

BENCH_HEADER = ("arm", "dims", "sketch_dim", "output_values", "output_bytes", "seconds_min", "seconds_median", "repeats", "status")


@dataclass(frozen=True)
class BenchRow:
    arm: str
    dims: tuple
    sketch_dim: int
    output_values: int
    output_bytes: int
    seconds_min: float
    seconds_median: float
    repeats: int
    status: str


def _time(fn, repeats):
    fn()  # warm-up
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), float(np.median(ts))


def run_bench(dims=(1024, 1024), sketch_dim=4096, repeats=5, seed=0, cap=DEFAULT_BILINEAR_CAP):
    """Time one forward pass of each arm on a single random sample.

    The explicit arm is skipped (``status="skipped (cap)"``) when
    ``prod(dims)`` exceeds ``cap``. Sketch parameters are drawn before
    timing starts.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("need at least two positive dims")
    if int(repeats) < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    if int(sketch_dim) < 1:
        raise ValueError("sketch_dim must be >= 1")
    rng = generator(seed, "bench")
    xs = [rng.standard_normal(d) for d in dims]
    rows = []

    n_bil = prod(dims)
    if n_bil > cap:
        rows.append(BenchRow("bilinear", dims, sketch_dim, n_bil, 8 * n_bil, float("nan"), float("nan"), 0, "skipped (cap)"))
    else:
        layer = FusionLayer(FusionSpec("bilinear", bilinear_cap=cap), dims)
        tmin, tmed = _time(lambda: layer.forward(xs), repeats)
        rows.append(BenchRow("bilinear", dims, sketch_dim, n_bil, 8 * n_bil, tmin, tmed, repeats, "ok"))

    layer = FusionLayer(FusionSpec("tensor_sketch", sketch_dim, seed=seed), dims)
    tmin, tmed = _time(lambda: layer.forward(xs), repeats)
    rows.append(BenchRow("tensor_sketch", dims, sketch_dim, sketch_dim, 8 * sketch_dim, tmin, tmed, repeats, "ok"))
    return rows


def bench_csv(rows, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow(
            [r.arm, "x".join(map(str, r.dims)), r.sketch_dim, r.output_values, r.output_bytes,
             f"{r.seconds_min:.9f}", f"{r.seconds_median:.9f}", r.repeats, r.status]
        )
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
