"""Time the permutation kernels under both backends.

    python benchmarks/bench_kernels.py [--B 1000] [--repeat 5]

Each case builds a null matrix for a simulated dataset (or the group-mean
tensor used by the pairwise step) with the numpy and the numba kernels,
checks that the two agree, and prints the best-of-N wall time.
"""

import argparse
import time

import numpy as np

from fanova import _kernels
from fanova.permute import generate_plan
from fanova.simulate import SimConfig, gen_dataset
from fanova.stats import IntervalPartition


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(B):
    # (label, n per group, k, grid points, m)
    for label, npg, k, G, m in [
        ("simulation 3x5, 101 pts, m=5", 5, 3, 101, 5),
        ("simulation 3x5, 101 pts, m=10", 5, 3, 101, 10),
        ("demo-like 4x5, 49 pts, m=4", 5, 4, 49, 4),
        ("large 4x25, 501 pts, m=10", 25, 4, 501, 10),
    ]:
        cfg = SimConfig(model="M2", beta=0.3, k=k, n_per_group=npg, n_points=G, m=m)
        ds = gen_dataset(cfg, 0)
        part = IntervalPartition.equal(ds.grid, m)
        plan = generate_plan(1, B, ds.labels)
        rows = np.vstack([ds.labels, plan.labels])
        yield label, ds, part.weights(), rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--B", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend can run")
        return

    print(f"B={args.B}, best of {args.repeat}")
    print(f"{'case':34s} {'kernel':14s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, ds, W, rows in cases(args.B):
        sizes = ds.group_sizes
        jobs = {
            "interval stats": lambda be: _kernels.permuted_interval_stats(ds.values, rows, sizes, W, backend=be),
            "group means": lambda be: _kernels.permuted_group_means(ds.values, rows, sizes, backend=be),
        }
        for name, job in jobs.items():
            job("numba")  # compile outside the timing
            t_np, a = best_time(lambda: job("numpy"), args.repeat)
            t_nb, b = best_time(lambda: job("numba"), args.repeat)
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
            print(f"{label:34s} {name:14s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
