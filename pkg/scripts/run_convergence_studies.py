#!/usr/bin/env python3
"""Run the full set of convergence studies and write one CSV per case.

Reproduces the reference tables: square domain at orders 1-3 and disc
domain at orders 1-3, each with its standard level count.  Outputs land
in ``results/`` (override with --out-dir).  Expect the finer levels of
the order-1 studies to dominate the runtime.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from cutstokes.cli import main as cutstokes_main

CASES = [
    # (domain, order, levels)
    ("square", 1, 7),
    ("square", 2, 6),
    ("square", 3, 5),
    ("disc", 1, 7),
    ("disc", 2, 6),
    ("disc", 3, 5),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="results", help="output directory")
    parser.add_argument("--sigma-const", type=float, default=None,
                        help="penalty constant forwarded to every study")
    parser.add_argument("--only", choices=["square", "disc"],
                        help="restrict to one domain")
    args = parser.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for domain, order, levels in CASES:
        if args.only and domain != args.only:
            continue
        out = out_dir / f"{domain}_p{order}.csv"
        argv = ["--domain", domain, "--order", str(order),
                "--levels", str(levels), "--out", str(out)]
        if args.sigma_const is not None:
            argv += ["--sigma-const", str(args.sigma_const)]
        print(f"=== {domain} p={order} ({levels} levels) ===", flush=True)
        t0 = time.perf_counter()
        rc = cutstokes_main(argv)
        dt = time.perf_counter() - t0
        print(f"=== exit {rc} after {dt:.1f}s ===\n", flush=True)
        failures += rc != 0
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
