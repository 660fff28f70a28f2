#!/usr/bin/env python3
"""Scan the Gaussian and skew-normal rate systems for r-bar and s-bar."""

import argparse
import sys

from mixident.cli import main


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--budget", type=int, default=500)
    ap.add_argument("--max", type=int, default=2, help="largest k - k0 and k* to scan")
    args = ap.parse_args(argv)
    for s in range(1, args.max + 1):
        code = main(["polysys", "--gaussian", "--k-minus-k0", str(s), "--table", "--budget", str(args.budget)])
        if code:
            return code
    for k in range(1, args.max + 1):
        code = main(["polysys", "--skew", "--k-star", str(k), "--table", "--budget", str(args.budget)])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
