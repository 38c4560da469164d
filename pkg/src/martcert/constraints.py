"""Templates, symbolic pre-operators and the implication sets handed to Farkas / Schmuedgen."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .expr import (
    GE, ExpressionMap, LinConstraint, PolyExpr, Predicate, UnsupportedError,
    as_fraction, conj_str, mono_str, monomials_up_to,
)
from .frontend import ASSIGN, DET, FRESH, NONDET, PROB, Pcfg

NNREP, SCLSUB, ARNK, EPSREP = "nnrep", "sclsub", "arnk", "eps-rep"
UPPER, LOWER = "upper", "lower"
KINDS = (NNREP, SCLSUB, ARNK, EPSREP)


class Affine(Mapping):
    """``sum_u u * P_u + P_const``: affine in unknowns, polynomial in program variables.

    Keys are unknown names, with ``None`` for the unknown-free part.
    """

    __slots__ = ("_parts",)

    def __init__(self, parts: Mapping | None = None):
        self._parts = {u: e for u, e in (parts or {}).items() if not e.is_zero()}

    @classmethod
    def const(cls, e) -> "Affine":
        e = e if isinstance(e, PolyExpr) else PolyExpr.const(e)
        return cls({None: e})

    def __getitem__(self, u):
        return self._parts[u]

    def __iter__(self):
        return iter(self._parts)

    def __len__(self):
        return len(self._parts)

    def __add__(self, other: "Affine") -> "Affine":
        out = dict(self._parts)
        for u, e in other._parts.items():
            out[u] = out[u] + e if u in out else e
        return Affine(out)

    def __neg__(self) -> "Affine":
        return Affine({u: -e for u, e in self._parts.items()})

    def __sub__(self, other: "Affine") -> "Affine":
        return self + (-other)

    def scale(self, c) -> "Affine":
        c = as_fraction(c)
        return Affine({u: e * c for u, e in self._parts.items()})

    def map(self, fn) -> "Affine":
        return Affine({u: fn(e) for u, e in self._parts.items()})

    def unknowns(self) -> set:
        return {u for u in self._parts if u is not None}

    def program_variables(self) -> set:
        return set().union(*(e.variables() for e in self._parts.values())) if self._parts else set()

    def degree(self) -> int:
        return max((e.degree() for e in self._parts.values()), default=0)

    def instantiate(self, assignment: Mapping) -> PolyExpr:
        out = self._parts.get(None, PolyExpr())
        for u, e in self._parts.items():
            if u is not None:
                out = out + e * assignment.get(u, 0)
        return out

    def at(self, valuation: Mapping) -> tuple:
        """Evaluate program variables: ``({unknown: coeff}, constant)``."""
        coeffs, const = {}, Fraction(0)
        for u, e in self._parts.items():
            v = e.eval(valuation)
            if u is None:
                const += v
            elif v:
                coeffs[u] = v
        return coeffs, const

    def __str__(self) -> str:
        parts = []
        for u in sorted(self._parts, key=lambda k: (k is None, k or "")):
            e = self._parts[u]
            parts.append(f"({e})" if u is None else f"({e})*{u}")
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class Template:
    exprs: Mapping  # location -> Affine
    unknowns: tuple
    degree: int = 1

    def __getitem__(self, loc) -> Affine:
        return self.exprs[loc]

    def instantiate(self, assignment: Mapping) -> ExpressionMap:
        return ExpressionMap({l: a.instantiate(assignment) for l, a in self.exprs.items()})

    def locations_of(self) -> dict:
        return {u: l for l, a in self.exprs.items() for u in a.unknowns()}


def unknown_name(loc: str, mono) -> str:
    return f"{loc}[{mono_str(mono) or '1'}]"


def make_template(g: Pcfg, degree: int = 1) -> Template:
    """One unknown coefficient per location and monomial of degree <= ``degree``."""
    if degree < 1:
        raise ValueError("template degree must be >= 1")
    monos = monomials_up_to(g.variables, degree)
    exprs, unknowns = {}, []
    for l in g.locations:
        parts = {}
        for m in monos:
            u = unknown_name(l, m)
            parts[u] = PolyExpr({m: 1})
            unknowns.append(u)
        exprs[l] = Affine(parts)
    return Template(exprs, tuple(unknowns), degree)


@dataclass(frozen=True)
class CertSpec:
    kind: str
    gamma: Fraction = Fraction(999, 1000)
    eps: Fraction = Fraction(1)
    level: Fraction = Fraction(1)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown certificate kind {self.kind!r}")
        object.__setattr__(self, "gamma", as_fraction(self.gamma))
        object.__setattr__(self, "eps", as_fraction(self.eps))
        object.__setattr__(self, "level", as_fraction(self.level))
        if self.kind == SCLSUB and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0,1)")
        if self.kind == EPSREP and not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.kind == NNREP and not self.level > 0:
            raise ValueError("level M must be positive")

    @property
    def direction(self) -> str:
        return LOWER if self.kind == SCLSUB else UPPER

    @property
    def maximize(self) -> bool:
        return self.kind == SCLSUB


@dataclass(frozen=True)
class Implication:
    antecedent: tuple  # of LinConstraint, over V and FRESH
    consequent: Affine  # asserted >= 0
    origin: str = ""

    def unknowns(self) -> set:
        return self.consequent.unknowns()

    def program_variables(self) -> set:
        return self.consequent.program_variables()

    def consequent_is_linear(self) -> bool:
        return self.consequent.degree() <= 1

    def holds_at(self, assignment: Mapping, valuation: Mapping) -> bool:
        if not all(c.holds(valuation) for c in self.antecedent):
            return True
        return self.consequent.instantiate(assignment).eval(valuation) >= 0

    def __str__(self) -> str:
        return f"{conj_str(self.antecedent)} => {self.consequent} >= 0"


@dataclass(frozen=True)
class Branch:
    """One case of the pre operator: valid where ``condition`` holds."""

    condition: tuple
    expr: Affine
    successor: str = ""


def pre_template(g: Pcfg, t: Template, l: str, direction: str = UPPER) -> list:
    """Symbolic pre of ``t`` at ``l``, as a list of branches.

    Upper and lower pre differ only at nondeterministic choices; both are
    handled by one branch per choice and the caller picks the inequality
    direction, so ``direction`` only affects error checking.
    """
    kind = g.kinds[l]
    edges = g.edges[l]
    if kind == PROB:
        acc = Affine()
        for e in edges:
            acc = acc + t[e.target].scale(e.prob)
        return [Branch((), acc, "+".join(e.target for e in edges))]
    if kind == NONDET:
        return [Branch((), t[e.target], e.target) for e in edges]
    if kind == DET:
        out = []
        for e in edges:
            guard = e.guard or Predicate.true()
            for d in guard.disjuncts:
                out.append(Branch(tuple(d), t[e.target], e.target))
        return out
    if kind == ASSIGN:
        u = g.updates[l]
        nxt = edges[0].target
        eta = t[nxt]
        if u.kind == "det":
            return [Branch((), eta.map(lambda p: p.substitute(u.var, u.expr)), nxt)]
        if u.kind == "dist":
            dist = u.dist

            def expect(p: PolyExpr) -> PolyExpr:
                out = PolyExpr()
                for k, coeff in p.collect(u.var).items():
                    out = out + coeff * dist.moment(k)
                return out

            return [Branch((), eta.map(expect), nxt)]
        # nondeterministic: the fresh variable stands for the chosen value
        if t.degree > 1 and any(len(d) < 2 for d in u.domain.disjuncts):
            raise UnsupportedError(f"{l}: unbounded ndet domain with a polynomial template")
        fresh = PolyExpr.var(FRESH)
        sub = eta.map(lambda p: p.substitute(u.var, fresh))
        return [Branch(tuple(d), sub, nxt) for d in u.domain.disjuncts]
    raise ValueError(f"unknown kind {kind!r}")


def negate_target_literals(c) -> list:
    """Literal-wise complement of a conjunction: one single-literal cover each."""
    return [lit.negate() for lit in c]


def _covers(g: Pcfg, l: str) -> list:
    tgt = g.tgt(l)
    if tgt is None:
        return [()]
    if not tgt.is_conjunctive():
        raise UnsupportedError(f"{l}: target predicate must be conjunctive")
    return [(lit,) for lit in negate_target_literals(tgt.disjuncts[0])] if tgt.disjuncts else [()]


def gen_implications(g: Pcfg, t: Template, spec: CertSpec,
                     target_within_invariant: bool = True) -> list:
    """All implications whose joint validity makes ``t`` a certificate of ``spec``.

    With ``target_within_invariant`` the level condition on targets is only
    required on target configurations that satisfy the invariant.
    """
    one = Affine.const(1)
    out = []
    for l in g.locations:
        eta = t[l]
        inv = g.inv(l).disjuncts
        tgt = g.tgt(l)
        # nonnegativity / upper bound on the invariant
        for j, d in enumerate(inv):
            if spec.kind in (NNREP, ARNK):
                out.append(Implication(tuple(d), eta, f"A1 {l} inv{j}"))
            elif spec.kind == SCLSUB:
                out.append(Implication(tuple(d), one - eta, f"A1 {l} inv{j}"))
        # level on the target
        if tgt is not None and spec.kind in (NNREP, EPSREP):
            if not tgt.is_conjunctive():
                raise UnsupportedError(f"{l}: target predicate must be conjunctive")
            need = eta - Affine.const(spec.level) if spec.kind == NNREP else eta
            bases = inv if target_within_invariant else [()]
            for j, d in enumerate(bases):
                out.append(Implication(tuple(d) + tuple(tgt.disjuncts[0]), need, f"A2 {l} inv{j}"))
        # one-step condition outside the target
        branches = pre_template(g, t, l, spec.direction)
        for j, d in enumerate(inv):
            for i, cover in enumerate(_covers(g, l)):
                for b in branches:
                    if spec.kind == NNREP:
                        cons = eta - b.expr
                    elif spec.kind == ARNK:
                        cons = eta - b.expr - one
                    elif spec.kind == EPSREP:
                        cons = eta - b.expr - Affine.const(spec.eps)
                    else:
                        cons = b.expr.scale(spec.gamma) - eta
                    out.append(Implication(tuple(d) + cover + b.condition, cons,
                                           f"A3 {l} inv{j} cov{i} -> {b.successor}"))
    return out


def init_objective(g: Pcfg, t: Template) -> tuple:
    """``eta(l_init, x_init)`` as ``({unknown: coeff}, constant)``."""
    val = {v: g.init_val.get(v, Fraction(0)) for v in g.variables}
    return t[g.init_loc].at(val)


def implications_text(imps) -> str:
    return "\n".join(str(i) for i in imps) + ("\n" if imps else "")


def expected_count(g: Pcfg, spec: CertSpec, target_within_invariant: bool = True) -> int:
    """Closed-form size of ``gen_implications`` (before emptiness pruning)."""
    n = 0
    for l in g.locations:
        ninv = len(g.inv(l).disjuncts)
        if spec.kind != EPSREP:
            n += ninv
        if g.tgt(l) is not None and spec.kind in (NNREP, EPSREP):
            n += ninv if target_within_invariant else 1
        kind = g.kinds[l]
        if kind in (PROB,):
            nb = 1
        elif kind == NONDET:
            nb = len(g.edges[l])
        elif kind == DET:
            nb = sum(len((e.guard or Predicate.true()).disjuncts) for e in g.edges[l])
        else:
            u = g.updates[l]
            nb = len(u.domain.disjuncts) if u.kind == "ndet" else 1
        n += ninv * len(_covers(g, l)) * nb
    return n
