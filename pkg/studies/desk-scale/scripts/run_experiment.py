#!/usr/bin/env python3
"""
Desk-scale experiment runner.

Runs one experiment from a TOML file in ../configs/ (or, for passage-bound,
from flags alone) and writes its tables and verdicts under ../runs/ unless
--out or LSM_OUT says otherwise.

Usage:
    python scripts/run_experiment.py simulate --config configs/simulate.toml
    python scripts/run_experiment.py invariance-test --config configs/invariance.toml --workers 8
    python scripts/run_experiment.py hit-rate --config configs/hit_rate.toml
    python scripts/run_experiment.py passage-bound --T 1.0 --beta-star 1.0 --n-max 6
"""

import os
import sys

# Add shared library to path
sys.path.insert(0, os.path.normpath(os.path.join(
    os.path.dirname(__file__), "..", "..", "..", "shared", "python")))

from confined_lsm.cli import main

# --------------------------------------------------------------
# Configuration
# --------------------------------------------------------------

STUDY_DIR = os.path.normpath(os.path.join(os.path.dirname(__file__), ".."))
OUTPUT_DIR = os.path.join(STUDY_DIR, "runs")


if __name__ == "__main__":
    os.environ.setdefault("LSM_OUT", OUTPUT_DIR)
    sys.exit(main())
