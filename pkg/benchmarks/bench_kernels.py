"""Compare the compiled and pure-Python DTW kernels; check kernel working memory.

    python3 benchmarks/bench_kernels.py [--lengths 50,100,200] [--pairs 20] [--csv out.csv]
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
import tracemalloc

import numpy as np

from simfuse import dtw


def time_kernel(fn, pairs, band: int) -> float:
    t0 = time.perf_counter()
    for a, b in pairs:
        fn(a, b, band)
    return time.perf_counter() - t0


def compare(lengths, n_pairs: int, band: int, seed: int = 0) -> list[dict]:
    if dtw.native_cost is None:
        sys.exit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(seed)
    rows = []
    for n in lengths:
        pairs = [(rng.standard_normal(n), rng.standard_normal(n)) for _ in range(n_pairs)]
        for a, b in pairs[:3]:
            assert abs(dtw.native_cost(a, b, band) - dtw.python_cost(a, b, band)) <= 1e-9 * max(1.0, dtw.python_cost(a, b, band))
        cells = n_pairs * n * n if band < 0 else n_pairs * n * min(n, 2 * band + 1)
        t_nat = min(time_kernel(dtw.native_cost, pairs, band) for _ in range(3))
        t_py = time_kernel(dtw.python_cost, pairs, band)
        rows.append({"len": n, "pairs": n_pairs, "band": band, "native_s": t_nat, "python_s": t_py,
                     "native_ns_per_cell": 1e9 * t_nat / cells, "python_ns_per_cell": 1e9 * t_py / cells,
                     "speedup": t_py / t_nat})
    return rows


def kernel_peak_bytes(length: int = 100_000, band: int = 16, kernel=None) -> int:
    """Peak traced allocation while running one DTW of two *length* series."""
    kernel = kernel or dtw.native_cost or dtw.python_cost
    a = np.sin(np.linspace(0.0, 50.0, length))
    b = np.cos(np.linspace(0.0, 50.0, length))
    tracemalloc.start()
    tracemalloc.reset_peak()
    base = tracemalloc.get_traced_memory()[0]
    kernel(a, b, band)
    peak = tracemalloc.get_traced_memory()[1] - base
    tracemalloc.stop()
    return peak


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", default="50,100,200")
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--band", type=int, default=-1)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)
    rows = compare([int(x) for x in args.lengths.split(",")], args.pairs, args.band)
    print(f"{'len':>6} {'native ns/cell':>15} {'python ns/cell':>15} {'speedup':>8}")
    for r in rows:
        print(f"{r['len']:>6} {r['native_ns_per_cell']:>15.2f} {r['python_ns_per_cell']:>15.1f} {r['speedup']:>8.1f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    peak = kernel_peak_bytes()
    print(f"length 1e5 (band 16): peak kernel allocation {peak / 1e6:.2f} MB "
          f"(two rows = {2 * 8 * 100_001 / 1e6:.2f} MB; a full matrix would be 80 GB)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
