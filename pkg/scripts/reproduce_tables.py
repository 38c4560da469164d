#!/usr/bin/env python3
"""Run the three benchmark suites and write CSV reports.

usage: reproduce_tables.py [OUTDIR] [--jobs N]

Polynomial rows need an SDP solver; by default this points the solver
variable at the cvxpy wrapper next to this file when cvxpy is importable.
"""

import argparse
import importlib.util
import os
import sys
from pathlib import Path

from martcert.cli import main as cli_main
from martcert.sdp import SOLVER_ENV

HERE = Path(__file__).resolve().parent


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("outdir", nargs="?", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    if SOLVER_ENV not in os.environ and importlib.util.find_spec("cvxpy"):
        os.environ[SOLVER_ENV] = f"{sys.executable} {HERE / 'sdpa_cvxpy_solver.py'}"
    code = 0
    for suite in ("table2", "table3", "table4"):
        print(f"== {suite}")
        code |= cli_main(["bench", "--suite", suite, "--out", str(out / f"{suite}.csv"),
                          "--jobs", str(args.jobs)])
    return code


if __name__ == "__main__":
    sys.exit(main())
