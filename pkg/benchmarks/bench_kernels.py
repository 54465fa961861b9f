"""Time the numba kernels against their numpy twins.

Usage: python3 benchmarks/bench_kernels.py [--paths 200000] [--n 50] [--repeat 5]
"""

import argparse
import time

import numpy as np

from martbounds import kernels
from martbounds._accel import HAVE_NUMBA


def best_of(func, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=200_000)
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    xi = np.where(rng.random((args.paths, args.n)) < 0.5, -1.0, 1.0) / np.sqrt(args.n)
    incs = (xi * xi)[None, :, :]
    eps = rng.uniform(-1, 1, (args.paths, args.n))
    cases = {
        "exists_k [S]": lambda b: kernels.scan(kernels.EXISTS, xi, incs, [1.0], 2.0, backend=b),
        "max_endpoint [S]": lambda b: kernels.scan(kernels.MAX_ENDPOINT, xi, incs, [1.0], 2.0, backend=b),
        "self_normalized": lambda b: kernels.scan(kernels.SELF_NORMALIZED, xi, incs[:0], [], 2.0, backend=b),
        "ar1 recursion": lambda b: kernels.ar1_paths(0.5, 0.0, eps, backend=b),
    }
    print(f"{args.paths} paths x {args.n} steps, best of {args.repeat}")
    print(f"{'kernel':<18} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8}")
    for name, run in cases.items():
        a, b = run("numba"), run("numpy")  # warm-up (compiles) and equality check
        assert np.array_equal(a, b), name
        t_nb = best_of(lambda: run("numba"), args.repeat)
        t_np = best_of(lambda: run("numpy"), args.repeat)
        print(f"{name:<18} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f}")


if __name__ == "__main__":
    main()
