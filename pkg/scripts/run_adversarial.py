#!/usr/bin/env python3
"""Constructive sequences along which V / W^r vanishes, evaluated in extended precision."""

import argparse
import sys

from mixident.cli import main
from mixident.experiments import ADVERSARIAL_KINDS


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/adversarial")
    ap.add_argument("--kinds", nargs="*", default=list(ADVERSARIAL_KINDS), choices=ADVERSARIAL_KINDS)
    args = ap.parse_args(argv)
    for kind in args.kinds:
        code = main(["experiment", "--preset", f"adversarial_{kind}", "--out", args.out])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
