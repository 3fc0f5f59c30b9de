#!/usr/bin/env python3
"""Weighted covariate balance by subgroup for both methods.

Thin wrapper over ``sdipe balance`` with scaled defaults (R=100).

    python3 scripts/balance.py --out results/balance
"""

import sys

from sdipe.cli import main

DEFAULTS = ["--replicates", "100", "--out", "results/balance"]

if __name__ == "__main__":
    sys.exit(main(["balance", *DEFAULTS, *sys.argv[1:]]))
