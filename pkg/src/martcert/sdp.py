"""Schmuedgen-style SOS reduction of polynomial implications, SDPA export, external solving."""

from __future__ import annotations

import itertools
import logging
import math
import os
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .expr import PolyExpr, Predicate, UnsupportedError, as_fraction, monomials_up_to, sat_point

log = logging.getLogger(__name__)

SOLVER_ENV = "MARTCERT_SDP_SOLVER"
UNAVAILABLE = "solver unavailable"


class SdpError(ValueError):
    pass


@dataclass
class GramBlock:
    implication: int
    subset: tuple  # indices of antecedent literals multiplied in
    basis: tuple  # monomials, in the rescaled variables
    scales: tuple = ()  # (variable, s): the basis uses x / s


@dataclass
class SdpProblem:
    """SDPA dual form: maximise F0 . Y subject to Fk . Y = c_k, Y psd block-diagonal.

    Entries are keyed ``(block, i, j)`` with 0-based indices and ``i <= j``;
    an off-diagonal value ``v`` contributes ``2 v Y_ij``.  ``scalars`` maps each
    free unknown ``u`` to the pair of 1x1 diagonal blocks encoding ``u+ - u-``.
    """

    block_sizes: list = field(default_factory=list)  # > 0 psd, < 0 diagonal
    rows: list = field(default_factory=list)  # list of dict
    rhs: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    objective_constant: object = Fraction(0)
    sense: str = "max"  # sense of the original objective
    scalars: dict = field(default_factory=dict)
    grams: dict = field(default_factory=dict)  # block -> GramBlock
    origins: list = field(default_factory=list)  # per row
    warnings: list = field(default_factory=list)

    def add_block(self, size: int) -> int:
        self.block_sizes.append(size)
        return len(self.block_sizes) - 1

    def scalar(self, u: str) -> tuple:
        if u not in self.scalars:
            self.scalars[u] = (self.add_block(-1), self.add_block(-1))
        return self.scalars[u]

    def add_row(self, entries: Mapping, rhs, origin: str = "") -> None:
        clean = {k: v for k, v in entries.items() if v != 0}
        self.rows.append(clean)
        self.rhs.append(rhs)
        self.origins.append(origin)

    def census(self) -> dict:
        """Number of Gram blocks per implication."""
        out = {}
        for gb in self.grams.values():
            out[gb.implication] = out.get(gb.implication, 0) + 1
        return out

    def as_float(self) -> "SdpProblem":
        f = lambda d: {k: float(v) for k, v in d.items()}
        return SdpProblem(list(self.block_sizes), [f(r) for r in self.rows], [float(c) for c in self.rhs],
                          f(self.objective), float(self.objective_constant), self.sense)

    def same_data(self, other: "SdpProblem") -> bool:
        a, b = self.as_float(), other.as_float()
        return (a.block_sizes == b.block_sizes and a.rows == b.rows and a.rhs == b.rhs
                and a.objective == b.objective)


def default_sos_degree(imps) -> int:
    """Smallest k with 2k >= deg(consequent) + max antecedent degree."""
    dc = max((i.consequent.degree() for i in imps), default=0)
    da = max((c.lhs.degree() for i in imps for c in i.antecedent), default=0)
    return max(1, math.ceil((dc + da) / 2))


def _mono_mul(a, b):
    d = dict(a)
    for v, e in b:
        d[v] = d.get(v, 0) + e
    return tuple(sorted(d.items()))


def _dedupe(antecedent) -> tuple:
    """Relax strict literals and drop duplicates, keeping order."""
    seen, out = set(), []
    for c in antecedent:
        r = c.relaxed()
        key = str(r)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return tuple(out)


def _weak_bounds(antecedent, variables) -> list:
    """Variables lacking a syntactic lower or upper bound (compactness heuristic)."""
    missing = []
    for v in sorted(variables):
        lo = any(c.lhs.is_linear() and c.lhs.coeff(((v, 1),)) > 0 for c in antecedent)
        hi = any(c.lhs.is_linear() and c.lhs.coeff(((v, 1),)) < 0 for c in antecedent)
        if not (lo and hi):
            missing.append(v)
    return missing


def _scales(ante, variables) -> dict:
    """Per variable, the largest |value| on the antecedent when it is bounded on both sides."""
    from .lp import LpProblem, simplex_solve

    out = {}
    if not ante or not all(c.is_linear() for c in ante):
        return out
    for v in sorted(variables):
        ext = []
        for sense in ("max", "min"):
            lp = LpProblem()
            for w in sorted(set().union(*(c.variables() for c in ante)) | {v}):
                lp.add_var(w, free=True)
            for c in ante:
                lp.add_row(dict(c.lhs.linear_coeffs()), ">=", -c.lhs.constant)
            lp.set_objective({v: 1}, sense)
            sol = simplex_solve(lp)
            if sol.status != "optimal":
                break
            ext.append(abs(sol.objective))
        if len(ext) == 2 and max(ext) > 1:
            out[v] = max(ext)
    return out


def _rescale(e: PolyExpr, scales: Mapping) -> PolyExpr:
    for v, sv in scales.items():
        if v in e.variables():
            e = e.substitute(v, PolyExpr.var(v) * sv)
    return e


def _normalise(e: PolyExpr) -> PolyExpr:
    m = max((abs(c) for c in e.terms.values()), default=Fraction(1))
    return e * (1 / m) if m else e


def schmudgen_transform(imps, sos_degree: int | None = None, objective: Mapping | None = None,
                        sense: str = "min", objective_constant=0, extra_rows=(),
                        max_literals: int = 10, check_empty: bool = True,
                        rescale: bool = True) -> SdpProblem:
    """Reduce ``antecedent => consequent >= 0`` implications to one SDP.

    For literals g_1..g_m each subset w contributes a Gram block H_w over the
    monomials of degree <= floor((2k - |w|)/2); subsets whose product already
    exceeds degree 2k get no block.  Coefficients of
    ``consequent - sum_w (b^T H_w b) prod g_w`` are matched monomial by monomial.
    ``extra_rows`` are ``(coeffs, '>=', rhs)`` over the unknowns.

    Variables bounded by an antecedent are first rescaled to ``[-1, 1]``
    (``x = s y``), which leaves the problem equivalent but far better
    conditioned for a floating-point solver.
    """
    k = default_sos_degree(imps) if sos_degree is None else sos_degree
    min_k = math.ceil(max((i.consequent.degree() for i in imps), default=0) / 2)
    if k < max(min_k, 1):
        raise SdpError(f"sos degree {k} too small; minimum feasible is {max(min_k, 1)}")
    p = SdpProblem(sense=sense, objective_constant=as_fraction(objective_constant))
    for n, imp in enumerate(imps):
        if (check_empty and imp.antecedent and all(c.is_linear() for c in imp.antecedent)
                and sat_point(Predicate((tuple(imp.antecedent),))) == "empty"):
            continue
        ante = _dedupe(imp.antecedent)
        if any(not c.lhs.is_linear() and c.lhs.degree() > 2 * k for c in ante):
            raise SdpError(f"implication {n}: antecedent degree exceeds 2k")
        if len(ante) > max_literals:
            raise SdpError(f"implication {n}: {len(ante)} literals gives 2^{len(ante)} blocks "
                           f"(cap {max_literals})")
        cons = imp.consequent
        variables = set(cons.program_variables())
        for c in ante:
            variables |= c.variables()
        if ante or variables:
            weak = _weak_bounds(ante, cons.program_variables())
            if weak:
                p.warnings.append(f"implication {n} ({imp.origin}): no syntactic bounds on {', '.join(weak)}")
        scales = _scales(ante, variables) if rescale else {}
        if scales:
            ante = tuple(type(c)(_normalise(_rescale(c.lhs, scales)), c.relation) for c in ante)
            cons = cons.map(lambda e: _rescale(e, scales))
        # gram blocks
        contrib = {}  # monomial -> {(block,i,j): coeff}
        for r in range(len(ante) + 1):
            for w in itertools.combinations(range(len(ante)), r):
                prod = PolyExpr.const(1)
                for i in w:
                    prod = prod * ante[i].lhs
                room = 2 * k - prod.degree()
                if room < 0:
                    continue
                basis = tuple(monomials_up_to(variables, room // 2))
                b = p.add_block(len(basis))
                p.grams[b] = GramBlock(n, w, basis, tuple(sorted(scales.items())))
                for i in range(len(basis)):
                    for j in range(i, len(basis)):
                        bij = _mono_mul(basis[i], basis[j])
                        for m, c in prod.terms.items():
                            mm = _mono_mul(m, bij)
                            d = contrib.setdefault(mm, {})
                            d[(b, i, j)] = d.get((b, i, j), 0) + c
        # coefficient matching: sum_u u c_u(mu) - sum gram = -c0(mu)
        monos = set(contrib)
        for part in cons.values():
            monos |= set(part.terms)
        for mu in sorted(monos, key=lambda m: (sum(e for _, e in m), m)):
            entries = {key: -v for key, v in contrib.get(mu, {}).items()}
            for u, part in cons.items():
                if u is None:
                    continue
                a = part.coeff(mu)
                if a:
                    bp, bm = p.scalar(u)
                    entries[(bp, 0, 0)] = entries.get((bp, 0, 0), 0) + a
                    entries[(bm, 0, 0)] = entries.get((bm, 0, 0), 0) - a
            c0 = cons[None].coeff(mu) if None in cons else Fraction(0)
            if not entries and c0 == 0:
                continue
            p.add_row(entries, -c0, f"{imp.origin} [{mu}]")
    for coeffs, rel, rhs in extra_rows:
        entries = {}
        for u, a in coeffs.items():
            bp, bm = p.scalar(u)
            entries[(bp, 0, 0)] = entries.get((bp, 0, 0), 0) + as_fraction(a)
            entries[(bm, 0, 0)] = entries.get((bm, 0, 0), 0) - as_fraction(a)
        if rel != "==":
            s = p.add_block(-1)
            entries[(s, 0, 0)] = -1 if rel == ">=" else 1
        p.add_row(entries, as_fraction(rhs), "extra")
    sign = 1 if sense == "max" else -1
    for u, a in (objective or {}).items():
        bp, bm = p.scalar(u)
        p.objective[(bp, 0, 0)] = sign * as_fraction(a)
        p.objective[(bm, 0, 0)] = -sign * as_fraction(a)
    return p


# ---------------------------------------------------------------------------
# SDPA sparse format

def _fmt(v) -> str:
    return format(float(v), ".17g")


def export_sdpa(p: SdpProblem, path) -> None:
    lines = ['"martcert SOS problem"', str(len(p.rows)), str(len(p.block_sizes)),
             " ".join(str(s) for s in p.block_sizes) if p.block_sizes else "",
             " ".join(_fmt(c) for c in p.rhs)]

    def emit(k, entries):
        for (b, i, j) in sorted(entries):
            lines.append(f"{k} {b + 1} {i + 1} {j + 1} {_fmt(entries[(b, i, j)])}")

    emit(0, p.objective)
    for k, row in enumerate(p.rows, start=1):
        emit(k, row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _numbers(line: str) -> list:
    return [t for t in re.split(r"[\s,{}()]+", line) if t]


def read_sdpa(path) -> SdpProblem:
    with open(path, encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh]
    body = [ln for ln in raw if ln and not ln.startswith(('"', "*"))]
    m = int(_numbers(body[0])[0])
    nb = int(_numbers(body[1])[0])
    sizes = [int(t) for t in _numbers(body[2])][:nb]
    pos = 3
    rhs = []
    while len(rhs) < m:
        rhs += [float(t) for t in _numbers(body[pos])]
        pos += 1
    p = SdpProblem(block_sizes=sizes, rows=[{} for _ in range(m)], rhs=rhs[:m],
                   objective_constant=0.0)
    for ln in body[pos:]:
        k, b, i, j, v = _numbers(ln)
        key = (int(b) - 1, int(i) - 1, int(j) - 1)
        target = p.objective if int(k) == 0 else p.rows[int(k) - 1]
        target[key] = float(v)
    p.origins = [""] * m
    return p


# ---------------------------------------------------------------------------
# external solver

@dataclass(frozen=True)
class OutputFormat:
    """Regexes for a SDPA-style solver output file."""

    status: str = r"phase\.value\s*=\s*(\S+)"
    objective: str = r"objValPrimal\s*=\s*(\S+)"
    ymat: str = r"yMat\s*=\s*(\{.*\})"


@dataclass
class SdpResult:
    status: str  # optimal | infeasible | unbounded | solver unavailable | rejected | error
    assignment: dict = field(default_factory=dict)
    objective: float | None = None
    blocks: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    approximate: bool = True
    message: str = ""


def _parse_blocks(text: str, sizes: list) -> list:
    """Parse ``{ {{a,b},{c,d}} {e,f} ... }`` into numpy blocks."""
    nums = [float(t) for t in re.findall(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf|nan", text)]
    out, pos = [], 0
    for s in sizes:
        if s > 0:
            out.append(np.array(nums[pos:pos + s * s]).reshape(s, s))
            pos += s * s
        else:
            out.append(np.diag(nums[pos:pos - s]))
            pos += -s
    if pos != len(nums):
        raise SdpError(f"yMat has {len(nums)} numbers, expected {pos}")
    return out


def resolve_solver(solver_cmd: str | None) -> str | None:
    cmd = solver_cmd or os.environ.get(SOLVER_ENV) or None
    if not cmd:
        return None
    exe = shlex.split(cmd)[0]
    if shutil.which(exe) is None and not os.path.exists(exe):
        return None
    return cmd


def run_external_sdp(p: SdpProblem, solver_cmd: str | None, tol: float = 1e-6,
                     fmt: OutputFormat = OutputFormat(), timeout: float | None = None) -> SdpResult:
    """Run ``solver_cmd INPUT OUTPUT`` on the SDPA export and validate the answer."""
    cmd = resolve_solver(solver_cmd)
    if cmd is None:
        return SdpResult(UNAVAILABLE, message=f"no SDP solver found ({solver_cmd or '$' + SOLVER_ENV})")
    with tempfile.TemporaryDirectory() as d:
        src, dst = os.path.join(d, "problem.dat-s"), os.path.join(d, "problem.out")
        export_sdpa(p, src)
        try:
            proc = subprocess.run(shlex.split(cmd) + [src, dst], capture_output=True, text=True,
                                  timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as e:
            return SdpResult("error", message=str(e))
        if proc.returncode != 0 or not os.path.exists(dst):
            return SdpResult("error", message=f"solver exited {proc.returncode}: {proc.stderr.strip()[-500:]}")
        with open(dst, encoding="utf-8") as fh:
            out = fh.read()
    return parse_solution(p, out, tol, fmt)


def parse_solution(p: SdpProblem, text: str, tol: float = 1e-6,
                   fmt: OutputFormat = OutputFormat()) -> SdpResult:
    st = re.search(fmt.status, text)
    status = st.group(1).lower() if st else "pdopt"
    if "unbd" in status:
        return SdpResult("unbounded", message=status)
    if "inf" in status and "feas" not in status:
        return SdpResult("infeasible", message=status)
    ob = re.search(fmt.objective, text)
    ym = re.search(fmt.ymat, text, re.S)
    if not ym:
        return SdpResult("error", message="no yMat in solver output")
    try:
        blocks = _parse_blocks(ym.group(1), p.block_sizes)
    except SdpError as e:
        return SdpResult("error", message=str(e))
    assign = {u: float(blocks[a][0, 0] - blocks[b][0, 0]) for u, (a, b) in p.scalars.items()}
    # validation: psd blocks and coefficient matching
    min_eig = min((float(np.linalg.eigvalsh((B + B.T) / 2).min()) for B in blocks), default=0.0)
    worst = 0.0
    for row, c in zip(p.rows, p.rhs):
        lhs = sum(float(v) * blocks[b][i, j] * (1 if i == j else 2) for (b, i, j), v in row.items())
        worst = max(worst, abs(lhs - float(c)) / max(1.0, abs(float(c))))
    obj = sum(float(v) * blocks[b][i, j] for (b, i, j), v in p.objective.items())
    sign = 1 if p.sense == "max" else -1
    objective = sign * obj + float(p.objective_constant)
    res = {"min_eigenvalue": min_eig, "max_row_residual": worst,
           "solver_objective": float(ob.group(1)) if ob else None}
    if min_eig < -tol or worst > tol:
        return SdpResult("rejected", assign, objective, blocks, res,
                         message=f"residuals exceed {tol}: eig {min_eig:.3g}, rows {worst:.3g}")
    return SdpResult("optimal", assign, objective, blocks, res)


def write_solution(path, blocks, sizes, objective: float, status: str = "pdOPT") -> None:
    """Write an SDPA-style output file (the layout parse_solution reads)."""
    parts = []
    for B, s in zip(blocks, sizes):
        B = np.asarray(B, dtype=float)
        if s > 0:
            rows = ["{" + ",".join(_fmt(x) for x in r) + "}" for r in B.reshape(s, s)]
            parts.append("{" + ",".join(rows) + "}")
        else:
            vec = np.diag(B) if B.ndim == 2 else B
            parts.append("{" + ",".join(_fmt(x) for x in vec) + "}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"phase.value = {status}\n")
        fh.write(f"objValPrimal = {objective:.17g}\n")
        fh.write("yMat = \n{\n" + "\n".join(parts) + "\n}\n")
