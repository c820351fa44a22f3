"""Measure how clustering cost scales with the meta-training fraction.

For each pool size n and fraction r, profiles one full distance+DBScan pass
over the r*n subset and reports pairwise entries, peak bytes, and wall time
relative to the r=1 pass. Entries scale exactly as r^2 by construction; wall
time lands close to that but picks up fixed overheads at small n.
"""

import argparse
import csv
import sys

import numpy as np

from mcl.metrics import profile_clustering


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="2000,8000,20000",
                    help="comma list of pool sizes")
    ap.add_argument("--fractions", default="1.0,0.5,0.25")
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--csv", default=None)
    args = ap.parse_args(argv)

    sizes = [int(s) for s in args.sizes.split(",")]
    fractions = sorted({float(f) for f in args.fractions.split(",")},
                       reverse=True)
    rng = np.random.default_rng(args.seed)

    rows = []
    for n in sizes:
        x = rng.standard_normal((n, args.d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        base = None
        for r in fractions:
            m = max(2, int(round(n * r)))
            prof = profile_clustering(x[:m], repeats=args.repeats)
            if base is None:
                base = prof
            rows.append((n, r, m, prof.distance_entries, prof.peak_bytes,
                         prof.wall_seconds,
                         prof.distance_entries / base.distance_entries,
                         prof.wall_seconds / base.wall_seconds))
            print(f"n={n:6d} r={r:.2f} subset={m:6d} "
                  f"entries={prof.distance_entries:.3e} "
                  f"peak={prof.peak_bytes / 2**20:8.1f}MiB "
                  f"wall={prof.wall_seconds:7.2f}s "
                  f"entry_ratio={rows[-1][6]:.4f} "
                  f"wall_ratio={rows[-1][7]:.4f}", flush=True)

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "fraction", "subset", "entries", "peak_bytes",
                        "wall_seconds", "entry_ratio", "wall_ratio"])
            w.writerows(rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
