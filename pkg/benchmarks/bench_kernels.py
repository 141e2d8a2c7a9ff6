"""Timing comparison of the compiled and numpy kernel backends.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 7]

Both backends are imported directly so the comparison does not depend
on which one the package selected at import time.
"""

import argparse
import time

import numpy as np

from cfgstack.kernels import _npkernels

try:
    from cfgstack.kernels import _ckernels
except ImportError:
    _ckernels = None


SIZES = [
    ("small", 64, 200, 16),
    ("medium", 512, 4000, 64),
    ("large", 2048, 40000, 64),
]


def bench(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if _ckernels is None:
        print("compiled backend unavailable; showing numpy only")

    header = f"{'case':28s} {'numpy':>12s}"
    if _ckernels is not None:
        header += f" {'cython':>12s} {'speedup':>8s}"
    print(header)

    rng = np.random.default_rng(0)
    for label, n_rows, n_items, width in SIZES:
        src = rng.standard_normal((n_items, width))
        index = rng.integers(0, n_rows, size=n_items).astype(np.int64)
        seg = np.sort(index)
        values = rng.standard_normal(n_items)
        cases = [
            (f"scatter_add_rows/{label}", "scatter_add_rows",
             (src, index, n_rows)),
            (f"segment_sum/{label}", "segment_sum", (values, seg, n_rows)),
            (f"segment_max/{label}", "segment_max", (values, seg, n_rows)),
        ]
        for case_label, name, case_args in cases:
            t_np = bench(getattr(_npkernels, name), case_args, args.repeats)
            line = f"{case_label:28s} {t_np * 1e6:10.1f}us"
            if _ckernels is not None:
                t_cy = bench(getattr(_ckernels, name), case_args,
                             args.repeats)
                line += f" {t_cy * 1e6:10.1f}us {t_np / t_cy:7.2f}x"
                got = getattr(_ckernels, name)(*case_args)
                want = getattr(_npkernels, name)(*case_args)
                np.testing.assert_array_equal(got, want)
            print(line)


if __name__ == "__main__":
    main()
