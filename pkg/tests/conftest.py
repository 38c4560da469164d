import os
import shutil
import sys
from fractions import Fraction
from pathlib import Path

import pytest

from martcert.frontend import load_model, pcfg_from_json
from martcert.suites import benchmark_path

ROOT = Path(__file__).resolve().parents[1]
SOLVER_SCRIPT = ROOT / "scripts" / "sdpa_cvxpy_solver.py"

try:
    import cvxpy  # noqa: F401
    HAVE_CVXPY = True
except ImportError:
    HAVE_CVXPY = False

needs_solver = pytest.mark.skipif(not HAVE_CVXPY, reason="cvxpy not installed")


def solver_cmd() -> str:
    return f"{shutil.which('python3') or sys.executable} {SOLVER_SCRIPT}"


def bench(name, params=None):
    return load_model(benchmark_path(name), params)


def chain(locations, init="l0", variables=("x",), x0=0, params=None):
    """Small pCFG from a list of location dicts (JSON form)."""
    d = {"name": "t", "variables": list(variables),
         "init": {"location": init, "valuation": {v: str(x0) for v in variables}},
         "locations": locations}
    return pcfg_from_json(d, params)


def coin(p="1/2"):
    return chain([
        {"name": "l0", "kind": "P", "transitions": [{"to": "l1", "prob": p},
                                                     {"to": "l2", "prob": f"1 - {p}"}]},
        {"name": "l1", "kind": "D", "target": "x >= 0", "transitions": [{"to": "l1"}]},
        {"name": "l2", "kind": "D", "transitions": [{"to": "l2"}]},
    ])


def F(x):
    return Fraction(x)


def pytest_configure(config):
    os.environ.pop("MARTCERT_SDP_SOLVER", None)
