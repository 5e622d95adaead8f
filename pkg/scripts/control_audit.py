#!/usr/bin/env python3
"""Audit whether an observation region is reached by sampled rays.

Samples characteristic starts across a scenario's chart, traces each one
forward and backward over the time window, and reports either a witness
trajectory that avoids the region or that every sample entered it. This
is the library-level twin of `glancer gcc`; use the CLI when you want
the CSV/JSONL artifacts.

Usage:
    python3 scripts/control_audit.py strip "0.2 - x2" --t-window 10
    python3 scripts/control_audit.py disk_interior "hypot(x1, x2) - 0.9" \\
        --t-window 4 --samples 1000
"""

import argparse
import sys
import time

from glancer import gcc
from glancer import scenarios as scen


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", help="builtin name or path to a scenario JSON file")
    ap.add_argument("region", help="expression in t, x1, x2; the region is {expr > 0}")
    ap.add_argument("--t-window", type=float, default=10.0)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    try:
        scenario = scen.builtin(args.scenario)
    except Exception:
        scenario = scen.load_scenario(args.scenario)

    region = gcc.region_from_expression(args.region)
    starts = gcc.default_sampler(scenario, args.samples, seed=args.seed)
    t0 = time.perf_counter()
    report = gcc.gcc_check(
        scenario, region, args.t_window, starts, workers=args.workers
    )
    elapsed = time.perf_counter() - t0

    print(report.summary())
    print(f"elapsed: {elapsed:.2f}s")
    if report.witness_start is not None:
        ws = report.witness_start
        print(
            "witness start: x=(%.6f, %.6f)  xi=(%.6f, %.6f)"
            % (ws.x[0], ws.x[1], ws.xi[0], ws.xi[1])
        )
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
