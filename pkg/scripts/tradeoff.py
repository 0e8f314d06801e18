"""Minimum epsilon over (k, q) against concept density for three dataset sizes.

Writes a CSV with one row per (n, r). By default delta = 1/n; pass
--delta to hold it fixed across sizes.
"""

import argparse

import numpy as np

from dprdm.calibrate import CalibrationError, min_epsilon_over_kq, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1e6,1e7,1e8")
    ap.add_argument("--r-min", type=float, default=1e-5)
    ap.add_argument("--r-max", type=float, default=1e-1)
    ap.add_argument("--points", type=int, default=10)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--t", type=int, default=1000)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--output", default="tradeoff.csv")
    args = ap.parse_args()

    rows = []
    for n in (int(float(x)) for x in args.sizes.split(",")):
        delta = args.delta if args.delta else 1.0 / n
        for r in np.geomspace(args.r_min, args.r_max, args.points):
            try:
                p = min_epsilon_over_kq(n, float(r), args.sigma, args.t, delta)
            except CalibrationError:
                continue
            rows.append(p.row())
            print(f"n={n:.0e} r={r:.2e} eps={p.epsilon_min:.4f} k*={p.k_star} "
                  f"q*={p.q_star:.3g} alpha*={p.alpha_star:g}")
    write_csv(args.output, rows, vars(args))


if __name__ == "__main__":
    main()
