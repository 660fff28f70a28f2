#!/usr/bin/env python3
"""Bound-envelope scatters: V against W_r for random measures near each preset's G0."""

import argparse
import sys

from mixident.cli import main
from mixident.experiments import SCATTER_PRESETS


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/scatter")
    ap.add_argument("--M", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--presets", nargs="*", default=["student_t_exact", "student_t_over", "gaussian_weak_over1"],
                    choices=SCATTER_PRESETS)
    args = ap.parse_args(argv)
    for name in args.presets:
        code = main(["experiment", "--preset", name, "--M", str(args.M), "--out", args.out,
                     "--seed", str(args.seed), "--threads", str(args.threads)])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
