"""Benchmark suites reproducing the experiment tables."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

from .certificates import azuma_bound, kappa_of
from .constraints import EPSREP, NNREP, SCLSUB, CertSpec
from .frontend import load_model
from .oracle import LOWER, UPPER, expand, value_iterate_reach
from .sdp import UNAVAILABLE
from .synth import SynthConfig, synthesize

CSV_FIELDS = ["benchmark", "params", "kind", "bound", "trivial", "oracle_value", "status", "wall_ms"]
SUITES = ("table2", "table3", "table4")


def benchmark_path(name: str) -> str:
    return str(resources.files("martcert") / "benchmarks" / name)


@dataclass(frozen=True)
class Row:
    benchmark: str  # label used in the report
    file: str
    params: tuple = ()  # (name, value text)
    kind: str = NNREP
    degree: int = 1
    eps_too: bool = False  # table3: also try a 1-RepSupM
    oracle: dict | None = None  # expand() keyword arguments, None for no oracle

    def param_dict(self) -> dict:
        return {k: Fraction(v) for k, v in self.params}

    def param_text(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.params)


A1_BOUNDS = {"bounds": {"x": (-5, 30)}}


def suite_rows(suite: str) -> list:
    if suite == "table2":
        rows = []
        for p in ((("p1", "0.2"), ("p2", "0.4")), (("p1", "0.8"), ("p2", "0.1"))):
            for d in (1, 2, 3):
                rows.append(Row("a-1", "a1.app", p, NNREP, d, oracle=A1_BOUNDS))
        return rows
    if suite == "table3":
        return [
            Row("c-1", "d1.json", (), NNREP, eps_too=True, oracle={"bounds": {"x": (0, 10)}}),
            Row("c-2", "d2.json", (), NNREP, oracle={"bounds": {"x": (-5, 60)}}),
            Row("c-3", "d3.json", (), NNREP, oracle={"bounds": {"x": (Fraction(1, 2 ** 20), None)}, "grid": 64}),
            Row("c-4", "d4.json", (), NNREP, eps_too=True, oracle={"bounds": {"x": (-1, 60)}}),
        ]
    if suite == "table4":
        pm = lambda a, b: (("M1", a), ("M2", b))
        return [
            Row("a-1", "a1.app", (("p1", "0.2"), ("p2", "0.4")), SCLSUB, oracle=A1_BOUNDS),
            Row("a-1", "a1.app", (("p1", "0.8"), ("p2", "0.1")), SCLSUB, oracle=A1_BOUNDS),
            Row("a-2", "a2.app", pm("-1", "2"), SCLSUB),
            Row("a-2", "a2.app", pm("-2", "1"), SCLSUB),
            Row("a-3", "a3.app", pm("-1", "2"), SCLSUB),
            Row("a-3", "a3.app", pm("-2", "1"), SCLSUB),
            Row("b", "b.app", (("c", "0.1"), ("p", "0.5")), SCLSUB),
            Row("b", "b.app", (("c", "0.1"), ("p", "0.1")), SCLSUB),
        ]
    raise ValueError(f"unknown suite {suite!r}")


def _fmt(v) -> str:
    return "" if v is None else f"{float(v):.6g}"


def run_row(row: Row, solver_cmd: str | None = None) -> dict:
    t0 = time.perf_counter()
    g = load_model(benchmark_path(row.file), row.param_dict())
    spec = CertSpec(row.kind)
    cfg = SynthConfig(degree=row.degree, solver_cmd=solver_cmd)
    res = synthesize(g, spec, cfg)
    kind = row.kind if row.degree == 1 else f"{row.kind}-deg{row.degree}"
    out = {"benchmark": row.benchmark, "params": row.param_text(), "kind": kind,
           "bound": "", "trivial": "", "oracle_value": "", "status": res.status}
    if res.status == "found":
        b = res.objective
        b = min(max(b, 0), 1) if row.kind in (NNREP, SCLSUB) else b
        out["bound"] = _fmt(b)
        slack = 1e-6 if res.approximate else 0
        triv = b >= 1 - slack if row.kind == NNREP else b <= slack
        out["trivial"] = "true" if triv else "false"
    elif res.status == "skipped":
        out["status"] = f"skipped ({UNAVAILABLE})"
    elif row.kind == NNREP and res.status == "none":
        out["bound"], out["trivial"] = "1", "true"
    elif row.kind == SCLSUB and res.status == "none":
        out["bound"], out["trivial"] = "0", "true"
    if row.eps_too:
        er = synthesize(g, CertSpec(EPSREP, eps=1), SynthConfig())
        if er.status == "found" and er.objective < 0:
            k = kappa_of(g, er.eta)
            if k == "unbounded":
                tag = "kappa unbounded"
            else:
                az = azuma_bound(er.objective, 1, k)
                tag = "<1 refutation-only" if az.refutation_only else f"<={az.bound:.6g}"
            out["kind"] = f"{kind}+eps-rep"
            out["status"] += f";eps-rep={tag}"
        else:
            out["kind"] = f"{kind}+eps-rep"
            out["status"] += f";eps-rep={er.status}"
    if row.oracle is not None:
        direction = LOWER if row.kind == SCLSUB else UPPER
        m = expand(g, **row.oracle)
        v = value_iterate_reach(m, direction)[m.init]
        out["oracle_value"] = _fmt(v) + (" (discretized)" if "discretized" in m.flags else "")
    out["wall_ms"] = f"{(time.perf_counter() - t0) * 1e3:.0f}"
    return out


def _run(args):
    return run_row(*args)


def run_suite(suite: str, solver_cmd: str | None = None, jobs: int = 1) -> list:
    rows = suite_rows(suite)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_run, [(r, solver_cmd) for r in rows]))
    return [run_row(r, solver_cmd) for r in rows]


def to_csv(results: list, timings: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in results:
        r = dict(r)
        if not timings:
            r["wall_ms"] = ""
        w.writerow(r)
    return buf.getvalue()


def to_text(results: list) -> str:
    widths = {f: max(len(f), *(len(str(r[f])) for r in results)) for f in CSV_FIELDS}
    lines = ["  ".join(f.ljust(widths[f]) for f in CSV_FIELDS)]
    for r in results:
        lines.append("  ".join(str(r[f]).ljust(widths[f]) for f in CSV_FIELDS))
    return "\n".join(lines) + "\n"
