#!/usr/bin/env python3
"""MLE convergence-rate sweeps: W_r(G_hat, G0) against n on a log-log scale."""

import argparse
import sys

from mixident.cli import main
from mixident.experiments import RATE_PRESETS


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/rates")
    ap.add_argument("--R", type=int, default=7)
    ap.add_argument("--n-grid", default=None, help="comma separated sample sizes")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--presets", nargs="*", default=list(RATE_PRESETS), choices=RATE_PRESETS)
    args = ap.parse_args(argv)
    for name in args.presets:
        cmd = ["experiment", "--preset", name, "--R", str(args.R), "--out", args.out,
               "--seed", str(args.seed), "--threads", str(args.threads)]
        if args.n_grid:
            cmd += ["--n-grid", args.n_grid]
        code = main(cmd)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
