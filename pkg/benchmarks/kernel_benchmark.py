"""Timing comparison of the numba kernels against the numpy fallbacks.

Run directly:  python benchmarks/kernel_benchmark.py
Pin a backend for the whole process with RFKIT_BACKEND={numba,numpy} instead
if you want to time a full pipeline; this script flips the backend per call.
"""

import time

import numpy as np

from rfkit import backend
from rfkit import _kernels
from rfkit.rng import Rng


def _time(fn, reps=5):
    fn()  # warmup (and JIT compile on the numba path)
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _with_backend(name, fn):
    import os
    old = os.environ.get("RFKIT_BACKEND")
    os.environ["RFKIT_BACKEND"] = name
    backend.reset()
    try:
        return fn()
    finally:
        if old is None:
            os.environ.pop("RFKIT_BACKEND", None)
        else:
            os.environ["RFKIT_BACKEND"] = old
        backend.reset()


def main():
    rng = Rng(0, stream=0).gen
    rows = []

    frames = rng.standard_normal((4000, 100))
    for name in ("numpy", "numba") if backend.HAS_NUMBA else ("numpy",):
        t = _with_backend(name, lambda: _time(lambda: _kernels.lag_design(frames, 25)))
        rows.append(("lag_design 4000x100 lags=25", name, t))

    V = rng.standard_normal((20000, 500))
    C = rng.standard_normal((8, 500))
    for name in ("numpy", "numba") if backend.HAS_NUMBA else ("numpy",):
        t = _with_backend(name, lambda: _time(lambda: _kernels.nearest_centroid(V, C)))
        rows.append(("nearest_centroid 20000x500 k=8", name, t))

    theta = rng.standard_normal(200000)
    g = rng.standard_normal(200000)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)

    def adam_once():
        _kernels.adam_prox_step(theta.copy(), g, m.copy(), v.copy(), 3,
                                0.03, 0.9, 0.999, 1e-8, 0.001, theta.size - 1)

    for name in ("numpy", "numba") if backend.HAS_NUMBA else ("numpy",):
        t = _with_backend(name, lambda: _time(adam_once))
        rows.append(("adam_prox_step d=200000", name, t))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  backend  best-of-5 (s)")
    for kernel, name, t in rows:
        print(f"{kernel:<{width}}  {name:<7}  {t:.6f}")
    by = {}
    for kernel, name, t in rows:
        by.setdefault(kernel, {})[name] = t
    if backend.HAS_NUMBA:
        print()
        for kernel, d in by.items():
            print(f"{kernel:<{width}}  numpy/numba ratio: {d['numpy'] / d['numba']:.2f}x")


if __name__ == "__main__":
    main()
