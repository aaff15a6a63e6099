"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends must return identical arrays; the script checks that before
timing anything.
"""
import argparse
import time

import numpy as np

from spatialfl import _pykernels
from spatialfl.partition import WorldConfig, generate_partition

try:
    from spatialfl import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    for lam, k in ((50, 200), (500, 100), (500, 1000)):
        part = generate_partition(WorldConfig(intensity=lam, num_ues=k, seed=1), "iid")
        yield (f"capture_csr lam={lam} K={k} P={len(part.points)}", "capture_csr",
               (part.ues.positions, part.points.positions, 2.0))
    rng = np.random.default_rng(0)
    for n, k, d in ((10_000, 5, 2), (10_000, 50, 2), (20_000, 10, 32)):
        yield (f"nearest_centroid n={n} k={k} d={d}", "nearest_centroid",
               (rng.normal(size=(n, d)), rng.normal(size=(k, d))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'case':<48} {'numpy_ms':>10} {'cython_ms':>10} {'speedup':>8}")
    for label, name, inputs in cases():
        py = getattr(_pykernels, name)
        t_py = best_of(lambda: py(*inputs), args.repeat)
        if _ckernels is None:
            print(f"{label:<48} {1e3 * t_py:>10.2f} {'-':>10} {'-':>8}")
            continue
        c = getattr(_ckernels, name)
        for a, b in zip(py(*inputs), c(*inputs)):
            assert np.array_equal(a, b), f"{label}: backends disagree"
        t_c = best_of(lambda: c(*inputs), args.repeat)
        print(f"{label:<48} {1e3 * t_py:>10.2f} {1e3 * t_c:>10.2f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
