"""Compare the compiled end-of-epidemic kernel with its NumPy twin.

Runs the double-precision solve for a range of populations with both
implementations, prints per-size wall times (best of ``--repeat``), the
speedup, and the largest elementwise disagreement between the two result
tables. Usage:

    python3 benchmarks/kernel_benchmark.py --sizes 50 100 200 --repeat 3
"""

import argparse
import time

import numpy as np

from bichain import _sirkernel_py
from bichain.sir import KERNEL_IMPL

try:
    from bichain import _sirkernel
except ImportError:
    _sirkernel = None


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser(
        description="Benchmark the double-precision expected-steps solve.")
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[50, 100, 200], metavar="N",
                        help="population sizes to solve")
    parser.add_argument("--repeat", type=int, default=3,
                        help="keep the best of this many runs")
    parser.add_argument("--e-beta", type=float, default=0.95,
                        help="per-contact stay probability")
    parser.add_argument("--e-gamma", type=float, default=0.9,
                        help="per-recovery stay probability")
    args = parser.parse_args()

    print(f"active kernel in bichain.sir: {KERNEL_IMPL}")
    if _sirkernel is None:
        print("compiled kernel not built; timing the NumPy twin only")
    print(f"{'N':>6} {'python [s]':>12} {'compiled [s]':>13} "
          f"{'speedup':>9} {'max |diff|':>11}")
    for n in args.sizes:
        t_py, table_py = best_time(
            lambda: _sirkernel_py.eoe_double(n, args.e_beta, args.e_gamma),
            args.repeat)
        if _sirkernel is None:
            print(f"{n:>6} {t_py:>12.4f} {'-':>13} {'-':>9} {'-':>11}")
            continue
        t_c, table_c = best_time(
            lambda: _sirkernel.eoe_double(n, args.e_beta, args.e_gamma),
            args.repeat)
        diff = float(np.max(np.abs(np.asarray(table_py) - np.asarray(table_c))))
        print(f"{n:>6} {t_py:>12.4f} {t_c:>13.4f} "
              f"{t_py / t_c:>9.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
