#!/usr/bin/env python3
"""Sweep the step scale delta for the glancing polyline construct.

For each delta the construct is rebuilt from a gliding start on the unit
disk and the peak boundary-crossing rate |hpz| over the polyline is
recorded. Against the chord geometry this peak should scale like
sqrt(2 * |hp2z| * eps * delta), so the log-log slope across the sweep
should sit at one half.

Usage:
    python3 scripts/glancing_sweep.py
    python3 scripts/glancing_sweep.py --eps 0.05 --deltas 1e-2,1e-3,1e-4
"""

import argparse
import csv
import sys

import numpy as np

from glancer import flow
from glancer import scenarios as scen
from glancer import symbol as sym
from glancer.symbol import PhasePoint


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="disk_interior")
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--deltas", default="1e-2,1e-3,1e-4,1e-5")
    ap.add_argument("--csv", default=None, help="optional output path")
    args = ap.parse_args(argv)

    scenario = scen.builtin(args.scenario)
    rho0 = PhasePoint(0.0, np.array([1.0, 0.0]), 1.0, np.array([0.0, 1.0]))
    hp2z = sym.hp2z(scenario, rho0)
    deltas = [float(d) for d in args.deltas.split(",")]

    rows = []
    print(f"scenario={args.scenario}  eps={args.eps}  hp2z at start={hp2z:.6f}")
    print(f"{'delta':>10}  {'peak |hpz|':>12}  {'predicted':>12}  {'ratio':>8}")
    for delta in deltas:
        poly = flow.glancing_step_construct(scenario, rho0, delta, args.eps)
        predicted = np.sqrt(2.0 * abs(hp2z) * args.eps * delta)
        ratio = poly.hpz_max / predicted
        print(f"{delta:10.1e}  {poly.hpz_max:12.5e}  {predicted:12.5e}  {ratio:8.4f}")
        rows.append((delta, poly.hpz_max, predicted, ratio))

    slope = np.polyfit(np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0]
    print(f"log-log slope: {slope:.4f}  (square-root law predicts 0.5)")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "peak_hpz", "predicted", "ratio"])
            w.writerows(rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
