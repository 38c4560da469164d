"""End-to-end synthesis: pCFG -> implications -> LP/SDP -> certificate."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

from .constraints import (
    EPSREP, SCLSUB, CertSpec, gen_implications, init_objective, make_template,
)
from .frontend import Pcfg
from .lp import MAX, MIN, farkas_transform, simplex_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    degree: int = 1
    target_within_invariant: bool = True
    # lower bound on eta(init) for eps-RepSupM, whose objective is otherwise unbounded
    eps_floor: Fraction = Fraction(-1)
    rule: str = "dantzig"
    sos_degree: int | None = None
    solver_cmd: str | None = None
    sdp_tol: float = 1e-6  # residual tolerance on the solver's answer
    check_tol: float = 1e-6  # relative violation allowed when re-checking a numeric certificate
    export_path: str | None = None  # keep the SDPA file here


@dataclass
class SynthResult:
    status: str  # found | none | unbounded | skipped | rejected | error
    spec: CertSpec
    eta: object = None  # ExpressionMap
    objective: Fraction | float | None = None
    stats: dict = field(default_factory=dict)
    message: str = ""
    approximate: bool = False


def synthesize_linear(g: Pcfg, spec: CertSpec, cfg: SynthConfig = SynthConfig()) -> SynthResult:
    t0 = time.perf_counter()
    tmpl = make_template(g, 1)
    imps = gen_implications(g, tmpl, spec, cfg.target_within_invariant)
    coeffs, const = init_objective(g, tmpl)
    sense = MAX if spec.kind == SCLSUB else MIN
    fr = farkas_transform(imps, coeffs, sense, objective_constant=const)
    lp = fr.problem
    if spec.kind == EPSREP:
        lp.add_row(coeffs, ">=", cfg.eps_floor - const)
    t1 = time.perf_counter()
    sol = simplex_solve(lp, rule=cfg.rule)
    t2 = time.perf_counter()
    stats = {"implications": len(imps), "dropped": len(fr.dropped), "rows": len(lp.rows),
             "lp_vars": len(lp.variables), "pivots": sol.pivots,
             "gen_ms": (t1 - t0) * 1e3, "solve_ms": (t2 - t1) * 1e3}
    if sol.status == "infeasible":
        return SynthResult("none", spec, stats=stats, message="LP infeasible: no certificate of this shape")
    if sol.status == "unbounded":
        return SynthResult("unbounded", spec, stats=stats, message="LP objective unbounded")
    eta = tmpl.instantiate(sol.assignment)
    return SynthResult("found", spec, eta, sol.objective, stats)


def synthesize_poly(g: Pcfg, spec: CertSpec, cfg: SynthConfig = SynthConfig()) -> SynthResult:
    """Polynomial template via the SOS reduction and an external SDP solver.

    The numeric answer is re-checked pointwise before it is reported.
    """
    from .certificates import APPROX, Certificate, check_certificate
    from .sdp import UNAVAILABLE, export_sdpa, run_external_sdp, schmudgen_transform

    t0 = time.perf_counter()
    tmpl = make_template(g, cfg.degree)
    imps = gen_implications(g, tmpl, spec, cfg.target_within_invariant)
    coeffs, const = init_objective(g, tmpl)
    extra = [(coeffs, ">=", cfg.eps_floor - const)] if spec.kind == EPSREP else []
    sense = MAX if spec.kind == SCLSUB else MIN
    sdp = schmudgen_transform(imps, cfg.sos_degree, coeffs, sense, const, extra)
    for w in sdp.warnings:
        log.warning("%s", w)
    if cfg.export_path:
        export_sdpa(sdp, cfg.export_path)
    t1 = time.perf_counter()
    res = run_external_sdp(sdp, cfg.solver_cmd, cfg.sdp_tol)
    t2 = time.perf_counter()
    stats = {"implications": len(imps), "rows": len(sdp.rows), "blocks": len(sdp.block_sizes),
             "gen_ms": (t1 - t0) * 1e3, "solve_ms": (t2 - t1) * 1e3, "residuals": res.residuals}
    if res.status == UNAVAILABLE:
        return SynthResult("skipped", spec, stats=stats, message=UNAVAILABLE)
    if res.status == "infeasible":
        return SynthResult("none", spec, stats=stats, message="SDP infeasible")
    if res.status == "unbounded":
        return SynthResult("unbounded", spec, stats=stats, message="SDP objective unbounded")
    if res.status != "optimal":
        return SynthResult(res.status if res.status == "rejected" else "error", spec, stats=stats,
                           message=res.message)
    eta = tmpl.instantiate({u: Fraction(v) for u, v in res.assignment.items()})
    chk = check_certificate(g, Certificate(spec, eta, APPROX), tol=cfg.check_tol)
    stats["checked_points"] = chk.checked
    if not chk.passed:
        return SynthResult("rejected", spec, eta, res.objective, stats,
                           f"numeric certificate fails re-check at {chk.witness}", True)
    return SynthResult("found", spec, eta, res.objective, stats, approximate=True)


def synthesize(g: Pcfg, spec: CertSpec, cfg: SynthConfig = SynthConfig()) -> SynthResult:
    return synthesize_linear(g, spec, cfg) if cfg.degree == 1 else synthesize_poly(g, spec, cfg)
