#!/usr/bin/env python3
"""Benchmark the per-example gradient kernel: compiled core vs numpy fallback.

The kernel (per-row backward pass, L2 clip, accumulate) dominates private
training time. Run after installing the package:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fedfair import kernels
from fedfair.model import forward_cached, init_model

CASES = [
    # (batch, input dim, hidden dims)
    (32, 16, (32,)),
    (64, 16, (32,)),
    (64, 105, (100, 100, 100)),
    (128, 105, (100, 100, 100)),
    (256, 105, (100, 100, 100)),
]


def time_backend(impl, weights, biases, acts, seeds, clip, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        impl.per_example_clipped_sum(weights, biases, acts, seeds, clip)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    print(f"active backend: {kernels.active_backend()}")
    if not kernels.compiled_available():
        print("compiled kernel not built; benchmarking the fallback only")
    backends = ["python"] + (["c"] if kernels.compiled_available() else [])

    header = f"{'case':>28} " + " ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)

    rng = np.random.default_rng(0)
    for batch, dim, hidden in CASES:
        m = init_model([dim, *hidden, 1], 1)
        x = rng.normal(size=(batch, dim))
        _, _, acts = forward_cached(m, x)
        seeds = rng.normal(size=batch)
        repeats = 5 if batch * dim > 20_000 else 20
        times = {
            b: time_backend(
                kernels.get_backend(b), m.weights, m.biases, acts, seeds, 1.0, repeats
            )
            for b in backends
        }
        label = f"B={batch} d={dim} h={'x'.join(map(str, hidden))}"
        row = f"{label:>28} " + " ".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            row += f" {times['python'] / times['c']:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
