#!/usr/bin/env python3
"""Run the stability and quadrature diagnostics on both domains.

For each domain this solves nothing: it assembles the coarsest three
levels and reports the coercivity eigenvalue, the inf-sup constant and
its drift across levels, the divergence-theorem quadrature residual,
and the trace/inverse-inequality audits.  Exit code 0 means every audit
passed on both domains.
"""
from __future__ import annotations

import argparse
import sys

from cutstokes.cli import main as cutstokes_main


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--order", type=int, default=2)
    parser.add_argument("--levels", type=int, default=3)
    parser.add_argument("--sigma-const", type=float, default=None)
    args = parser.parse_args(argv)

    worst = 0
    for domain in ("square", "disc"):
        print(f"=== {domain} ===", flush=True)
        argv = ["--diagnostics", "--domain", domain,
                "--order", str(args.order), "--levels", str(args.levels)]
        if args.sigma_const is not None:
            argv += ["--sigma-const", str(args.sigma_const)]
        rc = cutstokes_main(argv)
        print(f"=== exit {rc} ===\n", flush=True)
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main())
