"""Time the hot kernels under both backends.

    python benchmarks/bench_kernels.py [--repeats N] [--size S]

Prints best-of-N wall time per kernel for the numba and numpy paths, the
ratio between them, and the column-loop vs row-wise scan comparison for each
backend. Outputs are checked for equality before timing.
"""

import argparse
import time

import numpy as np

from limkit import _accel, kernels
from limkit.bench import scan_bench


def best_of(fn, repeats):
    fn()  # warm-up, includes JIT compilation
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--size", type=int, default=128, help="spatial side of the benchmark maps")
    ap.add_argument("--channels", type=int, default=32)
    args = ap.parse_args()

    if not _accel.USE_NUMBA:
        print("numba disabled (LIMKIT_DISABLE_NUMBA set or numba missing); only the numpy path is timed")
    backends = ["numba", "numpy"] if _accel.USE_NUMBA else ["numpy"]
    rng = np.random.default_rng(0)
    a = rng.normal(size=(args.channels, args.size, args.size))
    up = rng.normal(size=a.shape)
    x = rng.normal(size=(4, args.channels // 4 or 1, args.size, args.size)).astype(np.float32)

    jobs = {
        "scan_max w": lambda b: kernels.scan_max(a, "w", True, b),
        "scan_max h": lambda b: kernels.scan_max(a, "h", False, b),
        "scan_max_backward w": lambda b: kernels.scan_max_backward(a, up, "w", True, b),
        "scan_max_backward h": lambda b: kernels.scan_max_backward(a, up, "h", False, b),
        "maxpool2x2": lambda b: kernels.maxpool2x2(x, b),
    }
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("   numpy/numba" if len(backends) == 2 else ""))
    for name, job in jobs.items():
        outs = [job(b) for b in backends]
        first = outs[0] if isinstance(outs[0], tuple) else (outs[0],)
        for other in outs[1:]:
            other = other if isinstance(other, tuple) else (other,)
            assert all(np.allclose(p, q, rtol=1e-12, atol=1e-12) for p, q in zip(first, other)), name
        times = [best_of(lambda b=b: job(b), args.repeats) for b in backends]
        row = f"{name:<22}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"   {times[1] / times[0]:10.2f}x"
        print(row)

    for b in backends:
        print()
        for line in scan_bench(args.channels, args.size, args.size, args.repeats, b).lines():
            print(line)


if __name__ == "__main__":
    main()
