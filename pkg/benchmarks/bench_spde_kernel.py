"""Time the SPDE stepping loop and the pivoted factorization on both backends.

    python benchmarks/bench_spde_kernel.py [--repeats 3] [--json out.json]

Both backends consume the same streams, so the script also reports the
largest difference between their final profiles.
"""
import argparse
import json
import time

import numpy as np

from sbmlab import backend
from sbmlab.env_field import CovarianceKernel
from sbmlab.spde_solver import GridSpec, InitialProfile, SpdeConfig, simulate

CASES = [
    ("branching gamma=1/2", 0.5, "auto"),
    ("lognormal gamma=1", 1.0, "auto"),
    ("moment gamma=0.75", 0.75, "auto"),
    ("euler gamma=0.75", 0.75, "euler"),
]


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_spde(repeats, J, T):
    grid = GridSpec(10.0, J, (20.0 / J) ** 2 / 4, T)
    kernel = CovarianceKernel.squared_exponential(1.0, 1.0)
    u0 = InitialProfile("cosine", 1.0, lo=-1.0, hi=0.0)
    rows = []
    for label, gamma, scheme in CASES:
        cfg = SpdeConfig(gamma, kernel, u0, grid, seed=1, scheme=scheme)
        row = {"case": label, "J": J, "steps": grid.steps}
        finals = {}
        for name in ("python", "native"):
            if name == "native" and not backend.native_available():
                continue
            t, traj = best_of(lambda: simulate(cfg, 0, name, warn=False), repeats)
            row[name] = t
            finals[name] = traj.final
        if len(finals) == 2:
            row["speedup"] = row["python"] / row["native"]
            row["max_abs_diff"] = float(np.max(np.abs(finals["python"] - finals["native"])))
        rows.append(row)
    return rows


def bench_factor(repeats, sizes):
    rows = []
    x_all = {n: np.linspace(-10, 10, n) for n in sizes}
    for n in sizes:
        row = {"case": "pivoted SE factor", "points": n}
        for name in ("python", "native"):
            if name == "native" and not backend.native_available():
                continue
            fn = backend.get_pivoted_se(name)
            x = x_all[n]
            # rank of the unit-length SE kernel on [-10, 10] stays well below the cap
            Lt, d = np.empty((min(n, 256), n)), np.empty(n)
            row[name], rank = best_of(lambda: fn(x, 1.0, 0.5, 1e-12, Lt, d), repeats)
            row["rank"] = int(rank)
        if "native" in row:
            row["speedup"] = row["python"] / row["native"]
        rows.append(row)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--J", type=int, default=400)
    ap.add_argument("--T", type=float, default=0.2)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args()
    rows = bench_spde(args.repeats, args.J, args.T) + bench_factor(args.repeats, [200, 800, 2000])
    print(f"default backend: {backend.BACKEND}")
    for r in rows:
        size = f"J={r['J']} steps={r['steps']}" if "J" in r else f"points={r['points']}"
        cols = [f"{k}={r[k]:.4f}s" for k in ("python", "native") if k in r]
        if "speedup" in r:
            cols.append(f"speedup={r['speedup']:.1f}x")
        if "max_abs_diff" in r:
            cols.append(f"max|diff|={r['max_abs_diff']:.2e}")
        if "rank" in r:
            cols.append(f"rank={r['rank']}")
        print(f"{r['case']:22s} {size:22s} " + " ".join(cols))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
