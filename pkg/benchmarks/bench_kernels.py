#!/usr/bin/env python3
"""Timing comparison of the numba and numpy builds of the hot kernels.

Run from the repo root:

    python benchmarks/bench_kernels.py

The numba columns need numba importable; TONEKD_NUMBA only affects the
dispatcher, not this script, which calls both builds directly.
"""

from __future__ import annotations

import time

import numpy as np

from tonekd import kernels
from tonekd.ctc import extended_target


def _time(fn, *args, repeats: int = 5) -> float:
    fn(*args)  # warm-up (includes jit compilation for the numba build)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ctc():
    rng = np.random.default_rng(0)
    print("ctc_forward_backward  (loss + gradient)")
    print(f"{'T':>5} {'U':>4} {'V':>4} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for T, U, V in ((40, 4, 9), (80, 6, 9), (160, 8, 9), (320, 12, 16)):
        logits = rng.normal(size=(T, V))
        lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        y = rng.integers(1, V, size=U)
        ext = extended_target(list(y))
        t_np = _time(kernels.ctc_forward_backward_numpy, lp, ext)
        if kernels.ctc_forward_backward_numba is None:
            print(f"{T:>5} {U:>4} {V:>4} {1e3 * t_np:>10.3f} {'n/a':>10} {'n/a':>8}")
            continue
        t_nb = _time(kernels.ctc_forward_backward_numba, lp, ext)
        print(f"{T:>5} {U:>4} {V:>4} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} "
              f"{t_np / t_nb:>7.1f}x")


def bench_conv():
    rng = np.random.default_rng(1)
    print("\ndepthwise temporal conv  (forward + backward)")
    print(f"{'T':>5} {'d':>4} {'K':>4} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for T, d, K in ((80, 48, 5), (160, 64, 5), (320, 128, 7)):
        x = rng.normal(size=(T, d))
        k = rng.normal(size=(K, d))
        g = rng.normal(size=(T, d))

        def np_pass(x=x, k=k, g=g):
            kernels.conv_forward_numpy(x, k)
            kernels.conv_backward_numpy(g, x, k)

        t_np = _time(np_pass)
        if kernels.conv_forward_numba is None:
            print(f"{T:>5} {d:>4} {K:>4} {1e3 * t_np:>10.3f} {'n/a':>10} {'n/a':>8}")
            continue

        def nb_pass(x=x, k=k, g=g):
            kernels.conv_forward_numba(x, k)
            kernels.conv_backward_numba(g, x, k)

        t_nb = _time(nb_pass)
        print(f"{T:>5} {d:>4} {K:>4} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    print(f"dispatcher backend: {kernels.backend_name()}\n")
    bench_ctc()
    bench_conv()
