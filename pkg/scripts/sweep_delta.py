#!/usr/bin/env python3
"""Average bias across the delta grid, one CSV per method and prevalence.

Thin wrapper over ``sdipe sweep-delta`` with scaled defaults (R=200).

    python3 scripts/sweep_delta.py --out results/sweep
"""

import sys

from sdipe.cli import main

DEFAULTS = ["--replicates", "200", "--out", "results/sweep"]

if __name__ == "__main__":
    sys.exit(main(["sweep-delta", *DEFAULTS, *sys.argv[1:]]))
