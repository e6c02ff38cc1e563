"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the multiscale filter and the descriptor pipeline on both backends at
several image sizes and prints a speedup table. Numba pays a one-off JIT
compile on first call (cached to disk afterwards), which is excluded by a
warmup pass.

    python benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from lesionsearch import backend
from lesionsearch.descriptor import DescriptorConfig, describe
from lesionsearch.frangi import FrangiParams, frangi_filter
from lesionsearch.imagecore import ImageGrid


def time_call(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, fn, repeats):
    rows = {}
    for which in ("numpy", "numba"):
        backend.force_backend(which)
        fn()  # warmup: JIT compile / cache touch
        rows[which] = time_call(fn, repeats)
    backend.force_backend(None)
    speedup = rows["numpy"] / rows["numba"]
    print(
        f"{name:<42} numpy {rows['numpy'] * 1e3:9.2f} ms   "
        f"numba {rows['numba'] * 1e3:9.2f} ms   x{speedup:5.2f}"
    )
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    params = FrangiParams()  # full 41-scale sweep
    cfg = DescriptorConfig()

    print(f"numba available: {backend.force_backend(None) == 'numba'}")
    print(f"{'case':<42} {'numpy':>15}   {'numba':>15}")

    img64 = ImageGrid(rng.random((1, 64, 64)))
    img192 = ImageGrid(rng.random((1, 192, 192)))
    vol = ImageGrid(rng.random((24, 48, 48)))

    bench_case("frangi_filter 64x64, 41 scales", lambda: frangi_filter(img64, params), args.repeats)
    bench_case(
        "frangi_filter 192x192, 41 scales", lambda: frangi_filter(img192, params), args.repeats
    )
    bench_case(
        "frangi_filter 24x48x48 volume, 8 scales",
        lambda: frangi_filter(vol, FrangiParams(scales=tuple(np.linspace(1, 4, 8)))),
        args.repeats,
    )
    bench_case("describe 64x64 (4 bands + GeM)", lambda: describe(img64, cfg), args.repeats)

    # cross-check: identical results to numerical roundoff
    backend.force_backend("numpy")
    a = frangi_filter(img64, params).response
    backend.force_backend("numba")
    b = frangi_filter(img64, params).response
    backend.force_backend(None)
    print(f"max |numpy - numba| response difference: {np.abs(a - b).max():.3e}")


if __name__ == "__main__":
    main()
