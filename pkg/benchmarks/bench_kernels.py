"""Benchmark the compiled conv kernels against the numpy fallback.

Runs forward, input-gradient and weight-gradient kernels over a range of
shapes (toy training scale up to the 16x16 system) and prints a table of
per-call times plus the cython/numpy speed ratio. Also cross-checks that
both backends agree numerically.

    python3 benchmarks/bench_kernels.py [--repeats 50] [--csv out.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from cflab import _conv_numpy

try:
    from cflab import _conv_kernels
except ImportError:
    _conv_kernels = None

CASES = [
    # (label, batch, width, height, c_in, c_out, kernel, stride, padding)
    ("toy-batch1", 1, 4, 4, 4, 4, 3, 1, 1),
    ("toy-batch64", 64, 4, 4, 4, 4, 3, 1, 1),
    ("toy-5x5", 64, 4, 4, 4, 4, 5, 1, 2),
    ("mid-8x8", 32, 8, 8, 8, 8, 5, 1, 2),
    ("paper-16x16", 16, 16, 16, 8, 8, 5, 1, 2),
    ("strided", 32, 8, 8, 4, 8, 4, 2, 9),
]


def time_call(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(label, b, w_dim, h_dim, c_in, c_out, k, stride, pad, repeats, rng):
    x = rng.standard_normal((b, w_dim, h_dim, c_in))
    w = rng.standard_normal((k, k, c_in, c_out))
    bias = rng.standard_normal(c_out)
    s = (stride, stride)
    p = (pad, pad)
    gy = _conv_numpy.conv2d_forward(x, w, bias, s, p)
    rows = []
    impls = [("numpy", _conv_numpy)]
    if _conv_kernels is not None:
        impls.append(("cython", _conv_kernels))
    results = {}
    for name, impl in impls:
        fwd = time_call(lambda: impl.conv2d_forward(x, w, bias, s, p), repeats)
        bwd_in = time_call(
            lambda: impl.conv2d_backward_input(gy, w, s, p, w_dim, h_dim), repeats
        )
        bwd_w = time_call(
            lambda: impl.conv2d_backward_weights(x, gy, k, k, s, p), repeats
        )
        results[name] = (fwd, bwd_in, bwd_w)
        rows.append((label, name, fwd, bwd_in, bwd_w))
    if _conv_kernels is not None:
        ya = _conv_numpy.conv2d_forward(x, w, bias, s, p)
        yb = _conv_kernels.conv2d_forward(x, w, bias, s, p)
        assert np.allclose(ya, yb, atol=1e-10), f"backend mismatch on {label}"
    return rows, results


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--csv", default=None, help="also write rows to a CSV file")
    args = parser.parse_args(argv)

    if _conv_kernels is None:
        print("compiled backend not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    all_rows = []
    hdr = f"{'case':>12} {'backend':>8} {'fwd (us)':>10} {'bwd-in (us)':>12} {'bwd-w (us)':>11}"
    print(hdr)
    print("-" * len(hdr))
    for case in CASES:
        rows, results = bench_case(*case, repeats=args.repeats, rng=rng)
        for label, name, fwd, bwd_in, bwd_w in rows:
            print(
                f"{label:>12} {name:>8} {fwd * 1e6:>10.1f} {bwd_in * 1e6:>12.1f} "
                f"{bwd_w * 1e6:>11.1f}"
            )
            all_rows.append((label, name, fwd, bwd_in, bwd_w))
        if "cython" in results:
            ratios = [
                results["numpy"][j] / results["cython"][j] for j in range(3)
            ]
            print(
                f"{'':>12} {'ratio':>8} {ratios[0]:>10.2f} {ratios[1]:>12.2f} "
                f"{ratios[2]:>11.2f}"
            )
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case", "backend", "forward_s", "backward_input_s",
                             "backward_weights_s"])
            writer.writerows(all_rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
