"""Exact linear programming: Farkas transformation and a rational simplex.

The solver works on a sparse tableau with ``gmpy2.mpq`` entries and reports
``fractions.Fraction`` values.  Free variables are pivoted into the basis
before phase 1 and never leave it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from gmpy2 import mpq

from .expr import PolyExpr, UnsupportedError, as_fraction, sat_point, Predicate

log = logging.getLogger(__name__)

MIN, MAX, FEASIBILITY = "min", "max", "feasibility"


def _q(x) -> mpq:
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    return mpq(x)


def _f(x: mpq) -> Fraction:
    return Fraction(int(x.numerator), int(x.denominator))


@dataclass
class LpProblem:
    """Rows are ``sum coeffs[v] * v  (<=|>=|==)  rhs``."""

    variables: dict = field(default_factory=dict)  # name -> is_free
    rows: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    sense: str = FEASIBILITY
    objective_constant: Fraction = Fraction(0)

    def add_var(self, name: str, free: bool = False) -> str:
        if name in self.variables and self.variables[name] != free:
            raise ValueError(f"variable {name} redeclared with a different sign")
        self.variables[name] = free
        return name

    def add_row(self, coeffs: Mapping[str, object], rel: str, rhs) -> None:
        if rel not in ("<=", ">=", "=="):
            raise ValueError(f"bad relation {rel}")
        clean = {}
        for v, c in coeffs.items():
            if v not in self.variables:
                raise KeyError(f"row references undeclared variable {v}")
            c = as_fraction(c)
            if c != 0:
                clean[v] = c
        self.rows.append((clean, rel, as_fraction(rhs)))

    def set_objective(self, coeffs: Mapping[str, object], sense: str, constant=0) -> None:
        if sense not in (MIN, MAX, FEASIBILITY):
            raise ValueError(sense)
        for v in coeffs:
            if v not in self.variables:
                raise KeyError(f"objective references undeclared variable {v}")
        self.objective = {v: as_fraction(c) for v, c in coeffs.items() if as_fraction(c) != 0}
        self.sense = sense
        self.objective_constant = as_fraction(constant)

    def multiplier_vars(self) -> list:
        return [v for v, free in self.variables.items() if not free]

    def satisfied_by(self, assignment: Mapping[str, Fraction]) -> bool:
        for v, free in self.variables.items():
            if not free and assignment.get(v, 0) < 0:
                return False
        for coeffs, rel, rhs in self.rows:
            lhs = sum((c * assignment.get(v, 0) for v, c in coeffs.items()), Fraction(0))
            if rel == "<=" and lhs > rhs or rel == ">=" and lhs < rhs or rel == "==" and lhs != rhs:
                return False
        return True

    def objective_value(self, assignment) -> Fraction:
        return self.objective_constant + sum(
            (c * assignment.get(v, 0) for v, c in self.objective.items()), Fraction(0))

    def dump(self) -> str:
        """Plain LP-like text, for debugging."""

        def lin(coeffs):
            if not coeffs:
                return "0"
            return " + ".join(f"{_fmt(c)} {v}" for v, c in coeffs.items())

        lines = []
        head = {MIN: "minimize", MAX: "maximize", FEASIBILITY: "feasibility"}[self.sense]
        obj = lin(self.objective)
        if self.objective_constant:
            obj += f" + {_fmt(self.objective_constant)}"
        lines.append(f"{head}: {obj}")
        lines.append("subject to")
        for i, (coeffs, rel, rhs) in enumerate(self.rows):
            lines.append(f"  r{i}: {lin(coeffs)} {rel} {_fmt(rhs)}")
        lines.append("bounds")
        for v, free in self.variables.items():
            lines.append(f"  {v} free" if free else f"  {v} >= 0")
        lines.append("end")
        return "\n".join(lines)


def _fmt(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    assignment: dict = field(default_factory=dict)
    objective: Fraction | None = None
    pivots: int = 0

    def value(self, name: str) -> Fraction:
        return self.assignment.get(name, Fraction(0))


class _Tableau:
    """Sparse tableau ``rows[i] . x = rhs[i]`` with an explicit basis."""

    def __init__(self):
        self.rows: list = []
        self.rhs: list = []
        self.basis: list = []
        self.objs: list = []  # objective rows: [dict, constant-list]
        self.pivots = 0

    def pivot(self, r: int, c: int) -> None:
        row = self.rows[r]
        piv = row[c]
        if piv != 1:
            inv = 1 / piv
            for k in row:
                row[k] *= inv
            self.rhs[r] *= inv
        rr = self.rhs[r]
        items = list(row.items())
        for i, other in enumerate(self.rows):
            if i == r:
                continue
            f = other.get(c)
            if f is None:
                continue
            for k, v in items:
                nv = other.get(k, 0) - f * v
                if nv:
                    other[k] = nv
                else:
                    other.pop(k, None)
            self.rhs[i] -= f * rr
        for obj in self.objs:
            d, const = obj
            f = d.get(c)
            if f is None:
                continue
            for k, v in items:
                nv = d.get(k, 0) - f * v
                if nv:
                    d[k] = nv
                else:
                    d.pop(k, None)
            const[0] -= f * rr
        self.basis[r] = c
        self.pivots += 1


def simplex_solve(p: LpProblem, rule: str = "bland", max_pivots: int | None = None) -> LpSolution:
    """Two-phase exact simplex.

    ``rule`` is ``"bland"`` (smallest-index entering and leaving
    variables) or ``"dantzig"`` (most negative reduced cost; switches to
    Bland permanently after a run of degenerate pivots, which keeps the
    termination guarantee).
    """
    names = list(p.variables)
    col_of = {v: j for j, v in enumerate(names)}
    free_cols = {col_of[v] for v, free in p.variables.items() if free}
    ncols = len(names)
    t = _Tableau()
    slack_of_row = {}
    for i, (coeffs, rel, rhs) in enumerate(p.rows):
        row = {col_of[v]: _q(c) for v, c in coeffs.items()}
        if rel != "==":
            s = ncols
            ncols += 1
            row[s] = mpq(1) if rel == "<=" else mpq(-1)
            slack_of_row[i] = s
        t.rows.append(row)
        t.rhs.append(_q(rhs))
        t.basis.append(None)

    sign = -1 if p.sense == MAX else 1
    cost = {col_of[v]: sign * _q(c) for v, c in p.objective.items()} if p.sense != FEASIBILITY else {}
    phase2 = [dict(cost), [mpq(0)]]
    t.objs.append(phase2)

    # phase 0: free variables into the basis
    free_rows = set()
    unconstrained_free = []
    for c in sorted(free_cols):
        r = next((i for i, row in enumerate(t.rows) if i not in free_rows and c in row), None)
        if r is None:
            unconstrained_free.append(c)
            continue
        t.pivot(r, c)
        free_rows.add(r)
    for c in unconstrained_free:
        if phase2[0].get(c):
            return LpSolution("unbounded", pivots=t.pivots)

    active = [i for i in range(len(t.rows)) if i not in free_rows]
    for i in active:
        if t.rhs[i] < 0:
            t.rows[i] = {k: -v for k, v in t.rows[i].items()}
            t.rhs[i] = -t.rhs[i]

    # starting basis: reuse a slack if it is a unit column among active rows
    first_art = ncols
    phase1 = [{}, [mpq(0)]]
    t.objs.insert(0, phase1)
    col_count = {}
    for i in range(len(t.rows)):
        for k in t.rows[i]:
            col_count[k] = col_count.get(k, 0) + 1
    for i in active:
        s = slack_of_row.get(i)
        if s is not None and t.rows[i].get(s) == 1 and col_count.get(s) == 1:
            t.basis[i] = s
            # keep objective rows canonical
            for d, const in t.objs:
                f = d.get(s)
                if f:
                    for k, v in t.rows[i].items():
                        nv = d.get(k, 0) - f * v
                        if nv:
                            d[k] = nv
                        else:
                            d.pop(k, None)
                    const[0] -= f * t.rhs[i]
            continue
        a = ncols
        ncols += 1
        t.rows[i][a] = mpq(1)
        t.basis[i] = a
        # phase-1 objective: minimise sum of artificials, expressed in nonbasics
        d, const = phase1
        for k, v in t.rows[i].items():
            if k == a:
                continue
            nv = d.get(k, 0) - v
            if nv:
                d[k] = nv
            else:
                d.pop(k, None)
        const[0] -= t.rhs[i]

    def is_art(c):
        return c >= first_art

    def run(obj, allow_art: bool) -> str:
        d = obj[0]
        use_bland = rule == "bland"
        degenerate_run = 0
        while True:
            if max_pivots is not None and t.pivots >= max_pivots:
                raise RuntimeError("pivot limit exceeded")
            cands = [(k, v) for k, v in d.items()
                     if v < 0 and k not in free_cols and (allow_art or not is_art(k))]
            if not cands:
                return "optimal"
            if use_bland:
                c = min(k for k, _ in cands)
            else:
                c = min(cands, key=lambda kv: (kv[1], kv[0]))[0]
            best = None
            for i in active:
                a = t.rows[i].get(c)
                if a is None or a <= 0:
                    continue
                ratio = t.rhs[i] / a
                key = (ratio, t.basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
            if best is None:
                return "unbounded"
            if best[0][0] == 0:
                degenerate_run += 1
                if degenerate_run > 50:
                    use_bland = True
            else:
                degenerate_run = 0
            t.pivot(best[1], c)

    if any(is_art(b) for b in t.basis if b is not None):
        run(phase1, allow_art=True)
        if -phase1[1][0] > 0:
            return LpSolution("infeasible", pivots=t.pivots)
        # drive zero-level artificials out of the basis
        for i in list(active):
            if not is_art(t.basis[i]):
                continue
            c = next((k for k in sorted(t.rows[i]) if not is_art(k) and k not in free_cols), None)
            if c is None:
                active.remove(i)
                t.rows[i] = {}
                t.rhs[i] = mpq(0)
                continue
            t.pivot(i, c)
        arts = [k for k in range(first_art, ncols)]
        for row in t.rows:
            for a in arts:
                row.pop(a, None)
        for a in arts:
            phase2[0].pop(a, None)
    t.objs.remove(phase1)

    status = run(phase2, allow_art=False)
    if status == "unbounded":
        return LpSolution("unbounded", pivots=t.pivots)

    values = {}
    for i, b in enumerate(t.basis):
        if b is not None and b < len(names):
            values[b] = t.rhs[i]
    assignment = {v: (_f(values[j]) if j in values else Fraction(0)) for j, v in enumerate(names)}
    obj = p.objective_value(assignment) if p.sense != FEASIBILITY else Fraction(0)
    return LpSolution("optimal", assignment, obj, t.pivots)


def dual_problem(p: LpProblem) -> LpProblem:
    """The LP dual of ``p`` (as a maximisation if ``p`` minimises)."""
    sign = -1 if p.sense == MAX else 1
    c = {v: sign * p.objective.get(v, Fraction(0)) for v in p.variables} if p.sense != FEASIBILITY else {}
    d = LpProblem()
    ys = []
    for i, (coeffs, rel, rhs) in enumerate(p.rows):
        # min: y_i >= 0 for >=, y_i <= 0 for <= (stored negated), free for ==
        name = f"y{i}"
        d.add_var(name, free=(rel == "=="))
        ys.append((name, -1 if rel == "<=" else 1))
    for v, free in p.variables.items():
        coeffs = {}
        for i, (rc, rel, rhs) in enumerate(p.rows):
            if v in rc:
                name, s = ys[i]
                coeffs[name] = s * rc[v]
        d.add_row(coeffs, "==" if free else "<=", c.get(v, 0))
    d.set_objective({name: s * p.rows[i][2] for i, (name, s) in enumerate(ys)}, MAX)
    return d


def check_strong_duality(p: LpProblem, sol: LpSolution, rule: str = "bland") -> bool:
    """Solve the dual independently and compare optimal values exactly."""
    if sol.status != "optimal":
        raise ValueError("strong duality applies to optimal solutions")
    dsol = simplex_solve(dual_problem(p), rule=rule)
    if dsol.status != "optimal":
        return False
    primal = sol.objective - p.objective_constant
    if p.sense == MAX:
        return -primal == dsol.objective
    if p.sense == FEASIBILITY:
        return dsol.objective == 0
    return primal == dsol.objective


# ---------------------------------------------------------------------------
# Farkas transformation

@dataclass
class FarkasResult:
    problem: LpProblem
    dropped: list = field(default_factory=list)  # indexes of vacuous implications
    warnings: list = field(default_factory=list)


def farkas_transform(imps, objective: Mapping | None = None, sense: str = FEASIBILITY,
                     check_empty: bool = True, objective_constant=0) -> FarkasResult:
    """Reduce implications ``(and_k alpha_k >= 0) => psi >= 0`` to an LP.

    For each implication, fresh multipliers ``y_k >= 0`` certify
    ``psi - sum_k y_k alpha_k`` is a nonnegative constant: coefficients of
    every program variable match and ``sum_k y_k * const(alpha_k) <= const(psi)``.
    Implications whose antecedent is an empty polyhedron are dropped.
    ``objective`` maps unknown names to rational coefficients.
    """
    lp = LpProblem()
    res = FarkasResult(lp)
    unknowns = sorted({u for imp in imps for u in imp.unknowns()})
    for u in unknowns:
        lp.add_var(u, free=True)
    for n, imp in enumerate(imps):
        ante = [c.relaxed() for c in imp.antecedent]
        if not all(c.is_linear() for c in ante) or not imp.consequent_is_linear():
            raise UnsupportedError(f"implication {n} is not linear: {imp}")
        # emptiness is decided before relaxing strict literals
        if check_empty and ante and sat_point(Predicate((tuple(imp.antecedent),))) == "empty":
            log.debug("implication %d has an empty antecedent; dropped", n)
            res.dropped.append(n)
            continue
        ys = []
        for k in range(len(ante)):
            ys.append(lp.add_var(f"y{n}_{k}"))
        variables = sorted(set().union(*(c.variables() for c in ante), imp.program_variables()))
        cons = imp.consequent  # {unknown or None: PolyExpr}
        for v in variables:
            mono = ((v, 1),)
            row = {}
            for y, c in zip(ys, ante):
                a = c.lhs.coeff(mono)
                if a:
                    row[y] = row.get(y, 0) + a
            rhs = Fraction(0)
            for u, e in cons.items():
                p = e.coeff(mono)
                if not p:
                    continue
                if u is None:
                    rhs += p
                else:
                    row[u] = row.get(u, 0) - p
            # sum y*a - p(U) == p0
            lp.add_row(row, "==", rhs)
        row = {}
        for y, c in zip(ys, ante):
            if c.lhs.constant:
                row[y] = c.lhs.constant
        rhs = Fraction(0)
        for u, e in cons.items():
            q = e.constant
            if not q:
                continue
            if u is None:
                rhs += q
            else:
                row[u] = row.get(u, 0) - q
        lp.add_row(row, "<=", rhs)
    if objective is not None and sense != FEASIBILITY:
        for u in objective:
            if u not in lp.variables:
                lp.add_var(u, free=True)
        lp.set_objective(objective, sense, objective_constant)
    return res
