"""Command-line entry point: ``martcert {synth,check,oracle,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from fractions import Fraction

from .certificates import (
    EXACT, APPROX, Certificate, SamplingPlan, azuma_bound, certificate_to_json, check_certificate,
    kappa_of, load_certificate, verify_linear,
)
from .constraints import EPSREP, KINDS, CertSpec
from .expr import UnsupportedError, as_fraction
from .frontend import ParseError, fingerprint, load_model
from .sdp import SOLVER_ENV, SdpError
from .synth import SynthConfig, synthesize

EXIT_OK, EXIT_FAIL, EXIT_NONE, EXIT_INPUT, EXIT_USAGE = 0, 1, 2, 3, 64

log = logging.getLogger("martcert")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunConfig:
    command: str
    model: str | None = None
    params: dict | None = None
    cert: str = "nnrep"
    degree: int = 1
    sos_degree: int | None = None
    gamma: Fraction = Fraction(999, 1000)
    eps: Fraction = Fraction(1)
    level: Fraction = Fraction(1)
    solver_cmd: str | None = None
    out: str | None = None
    seed: int = 0
    tol: float | None = None

    def spec(self) -> CertSpec:
        return CertSpec(self.cert, gamma=self.gamma, eps=self.eps, level=self.level)


def _param(text: str) -> tuple:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k.strip(), as_fraction(v)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad value in {text!r}")


def _frac(text: str) -> Fraction:
    try:
        return as_fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _bound(text: str) -> tuple:
    # x=lo:hi, either side may be empty
    try:
        k, rng = text.split("=", 1)
        lo, hi = rng.split(":", 1)
        return k.strip(), (as_fraction(lo) if lo.strip() else None, as_fraction(hi) if hi.strip() else None)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected VAR=LO:HI, got {text!r}")


def _ndet(text: str) -> tuple:
    try:
        k, vals = text.split("=", 1)
        return k.strip(), [as_fraction(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOC=V1,V2,..., got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="martcert", description="Martingale certificates for probabilistic programs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def model_args(p):
        p.add_argument("model", help="program (.app/.ppp) or pCFG (.json)")
        p.add_argument("--param", action="append", type=_param, default=[], metavar="NAME=VALUE")

    s = sub.add_parser("synth", help="synthesise a certificate")
    model_args(s)
    s.add_argument("--cert", choices=KINDS, default="nnrep")
    s.add_argument("--template", choices=("linear", "poly"), default="linear")
    s.add_argument("--degree", type=int, default=None)
    s.add_argument("--sos-degree", type=int, default=None)
    s.add_argument("--gamma", type=_frac, default=Fraction(999, 1000))
    s.add_argument("--eps", type=_frac, default=Fraction(1))
    s.add_argument("--level", type=_frac, default=Fraction(1))
    s.add_argument("--solver", default=None, help=f"SDP solver command (default ${SOLVER_ENV})")
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=None, help="relative tolerance for re-checking numeric results")

    c = sub.add_parser("check", help="check a certificate file against a model")
    model_args(c)
    c.add_argument("certificate")
    c.add_argument("--points", type=int, default=200, help="random points per region")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=None)
    c.add_argument("--exact", action="store_true", help="symbolic check (linear certificates only)")

    o = sub.add_parser("oracle", help="value iteration / simulation on a finite instance")
    model_args(o)
    o.add_argument("--bound", action="append", type=_bound, default=[], metavar="VAR=LO:HI")
    o.add_argument("--ndet", action="append", type=_ndet, default=[], metavar="LOC=V1,V2")
    o.add_argument("--grid", type=int, default=10)
    o.add_argument("--value", choices=("reach", "esteps", "gamma"), default="reach")
    o.add_argument("--direction", choices=("upper", "lower"), default="upper")
    o.add_argument("--gamma", type=float, default=0.999)
    o.add_argument("--tol", type=float, default=1e-9)
    o.add_argument("--mc", type=int, default=0, metavar="TRIALS")
    o.add_argument("--horizon", type=int, default=10000)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--jobs", type=int, default=1)
    o.add_argument("--out", default=None, help="value table CSV")

    b = sub.add_parser("bench", help="reproduce an experiment table")
    b.add_argument("--suite", required=True)
    b.add_argument("--out", default=None, help="CSV report path")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--solver", default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--no-times", action="store_true", help="leave wall_ms empty (reproducible CSV)")
    return ap


def _load(args):
    return load_model(args.model, dict(args.param) or None)


def cmd_synth(args) -> int:
    if args.template == "linear":
        if args.degree not in (None, 1):
            raise UsageError("--template linear takes degree 1")
        degree = 1
    else:
        degree = args.degree or 2
        if degree < 2:
            raise UsageError("--template poly needs --degree >= 2")
    cfg = RunConfig("synth", args.model, dict(args.param), args.cert, degree, args.sos_degree,
                    args.gamma, args.eps, args.level, args.solver, args.out, args.seed, args.tol)
    spec = cfg.spec()
    g = _load(args)
    sc = SynthConfig(degree=degree, sos_degree=args.sos_degree,
                     solver_cmd=args.solver or os.environ.get(SOLVER_ENV))
    if args.tol is not None:
        sc = SynthConfig(**{**sc.__dict__, "check_tol": args.tol})
    res = synthesize(g, spec, sc)
    print(f"model: {g.name}  kind: {spec.kind}  template degree: {degree}")
    if res.status != "found":
        print(f"status: {res.status}  {res.message}")
        if spec.kind == EPSREP and res.status == "none":
            print("no refuting eps-RepSupM found")
        return EXIT_NONE
    cert = Certificate(spec, res.eta, APPROX if res.approximate else EXACT, res.objective)
    bound = cert.bound(g)
    rel = {"nnrep": "<=", "sclsub": ">=", "arnk": "expected steps <=", "eps-rep": "eta(init) ="}[spec.kind]
    print(f"status: found  bound: {rel} {float(bound):.6g}" + ("" if res.approximate else f"  ({bound})"))
    print(f"trivial: {'true' if cert.trivial(g) else 'false'}")
    d = certificate_to_json(cert, g)
    d["trivial"] = cert.trivial(g)
    d["stats"] = {k: v for k, v in res.stats.items() if isinstance(v, (int, float, str))}
    if spec.kind == EPSREP:
        k = kappa_of(g, res.eta) if res.eta.is_linear() else "unknown"
        d["params"]["kappa"] = k if isinstance(k, str) else str(k)
        if isinstance(k, Fraction) and k > 0 and res.objective < 0:
            az = azuma_bound(res.objective, spec.eps, k)
            d["azuma"] = {"raw": az.raw, "bound": az.bound, "refutation_only": az.refutation_only}
            print(f"kappa: {k}  azuma bound: {az.bound:.6g} (raw {az.raw:.6g})"
                  + ("  refutation only: upreach < 1" if az.refutation_only else ""))
        else:
            print(f"kappa: {k}")
    for l in sorted(res.eta, key=g.locations.index):
        print(f"  {l}: {res.eta[l]}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_check(args) -> int:
    g = _load(args)
    cert = load_certificate(args.certificate)
    if cert.fingerprint and cert.fingerprint != fingerprint(g):
        print("error: certificate fingerprint does not match the model", file=sys.stderr)
        return EXIT_INPUT
    tol = args.tol if args.tol is not None else (1e-6 if cert.provenance == APPROX else 0)
    if args.exact:
        res = verify_linear(g, cert)
    else:
        res = check_certificate(g, cert, plan=SamplingPlan(points_per_region=args.points, seed=args.seed),
                                tol=tol)
    if res.passed:
        print(f"pass ({res.checked} configurations)")
        return EXIT_OK
    loc, val, cond, slack = res.witness
    vals = ", ".join(f"{k}={v}" for k, v in val.items())
    print(f"fail at ({loc}, {vals}): {cond} violated by {float(-slack):.6g}")
    return EXIT_FAIL


def cmd_oracle(args) -> int:
    from . import oracle as orc

    g = _load(args)
    m = orc.expand(g, dict(args.bound), args.grid, dict(args.ndet) or None)
    if args.value == "reach":
        vt = orc.value_iterate_reach(m, args.direction, args.tol)
    elif args.value == "gamma":
        vt = orc.value_iterate_gamma(m, args.gamma, args.direction, args.tol)
    else:
        vt = orc.value_iterate_esteps(m, args.direction, args.tol)
    flags = ",".join(sorted(m.flags)) or "exact"
    print(f"states: {m.n_states}  model: {flags}  iterations: {vt.iterations}  residual: {vt.residual:.3g}"
          + ("" if vt.converged else "  (not converged)"))
    print(f"{args.value} ({args.direction}) at {m.label_str(m.init)}: {vt[m.init]:.10g}")
    if args.mc:
        sched = "uniform"
        if args.value == "reach":
            sched = orc.greedy_choices(m, vt, args.direction)
        mc = orc.monte_carlo(m, sched, args.horizon, args.mc, args.seed, jobs=args.jobs)
        print(f"monte carlo ({args.mc} trials, seed {args.seed}): {mc.estimate:.6g}  95% CI [{mc.lo:.6g}, {mc.hi:.6g}]")
    if args.out:
        orc.dump_csv(m, vt, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .suites import SUITES, run_suite, to_csv, to_text

    if args.suite not in SUITES:
        raise UsageError(f"--suite must be one of {', '.join(SUITES)}")
    solver = args.solver or os.environ.get(SOLVER_ENV)
    results = run_suite(args.suite, solver, args.jobs)
    sys.stdout.write(to_text(results))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(to_csv(results, timings=not args.no_times))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "check": cmd_check, "oracle": cmd_oracle, "bench": cmd_bench}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # --help, or a usage error from _Parser
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"martcert: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError, KeyError,
            UnsupportedError, SdpError, ValueError) as e:
        print(f"martcert: input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
