"""Exact symbolic expressions over program variables.

Polynomials carry :class:`fractions.Fraction` coefficients.  Constraints,
conjunctive/disjunctive predicates and per-location maps are built on top.
Everything here is immutable once constructed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Union

Number = Union[int, Fraction]
# A monomial is a sorted tuple of (variable, exponent) pairs; () is the constant.
Monomial = tuple


class UnboundVariableError(KeyError):
    def __init__(self, var: str):
        super().__init__(var)
        self.var = var

    def __str__(self) -> str:
        return f"variable {self.var!r} is not bound in the valuation"


class UnsupportedError(ValueError):
    """Raised when an operation needs a linearity/shape the input lacks."""


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    return Fraction(value)


def mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    exps = dict(a)
    for v, e in b:
        exps[v] = exps.get(v, 0) + e
    return tuple(sorted(exps.items()))


def mono_key(m: Monomial):
    """Graded lexicographic order, highest degree first."""
    return (-mono_degree(m), [(v, -e) for v, e in m])


def mono_str(m: Monomial) -> str:
    return "*".join(v if e == 1 else f"{v}^{e}" for v, e in m)


def monomials_up_to(variables: Iterable[str], degree: int) -> list:
    """All monomials over ``variables`` of total degree <= ``degree``."""
    vs = sorted(variables)
    out = [()]
    frontier = [()]
    for _ in range(degree):
        nxt = set()
        for m in frontier:
            for v in vs:
                nxt.add(mono_mul(m, ((v, 1),)))
        frontier = sorted(nxt, key=mono_key)
        out.extend(frontier)
    return sorted(set(out), key=mono_key)


def _fmt_frac(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


class PolyExpr:
    """A polynomial with exact rational coefficients."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Number] | None = None):
        clean = {}
        if terms:
            for m, c in terms.items():
                c = as_fraction(c)
                if c != 0:
                    clean[tuple(m)] = c
        self._terms = clean
        self._hash = None

    # constructors
    @classmethod
    def const(cls, c: Number) -> "PolyExpr":
        return cls({(): c})

    @classmethod
    def var(cls, name: str) -> "PolyExpr":
        return cls({((name, 1),): 1})

    @classmethod
    def linear(cls, coeffs: Mapping[str, Number], constant: Number = 0) -> "PolyExpr":
        terms = {((v, 1),): c for v, c in coeffs.items()}
        terms[()] = as_fraction(constant) + as_fraction(terms.get((), 0))
        return cls(terms)

    @property
    def terms(self) -> Mapping[Monomial, Fraction]:
        return self._terms

    def coeff(self, m: Monomial = ()) -> Fraction:
        return self._terms.get(m, Fraction(0))

    @property
    def constant(self) -> Fraction:
        return self.coeff(())

    def degree(self) -> int:
        return max((mono_degree(m) for m in self._terms), default=0)

    def is_linear(self) -> bool:
        return self.degree() <= 1

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not m for m in self._terms)

    def variables(self) -> frozenset:
        return frozenset(v for m in self._terms for v, _ in m)

    def linear_coeffs(self) -> dict:
        if not self.is_linear():
            raise UnsupportedError(f"expression is not linear: {self}")
        return {m[0][0]: c for m, c in self._terms.items() if m}

    # arithmetic
    def __add__(self, other) -> "PolyExpr":
        other = _coerce(other)
        terms = dict(self._terms)
        for m, c in other._terms.items():
            terms[m] = terms.get(m, 0) + c
        return PolyExpr(terms)

    __radd__ = __add__

    def __neg__(self) -> "PolyExpr":
        return PolyExpr({m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> "PolyExpr":
        return self + (-_coerce(other))

    def __rsub__(self, other) -> "PolyExpr":
        return _coerce(other) - self

    def __mul__(self, other) -> "PolyExpr":
        if not isinstance(other, PolyExpr):
            c = as_fraction(other)
            return PolyExpr({m: c * v for m, v in self._terms.items()})
        terms: dict = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = mono_mul(m1, m2)
                terms[m] = terms.get(m, 0) + c1 * c2
        return PolyExpr(terms)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "PolyExpr":
        out = PolyExpr.const(1)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = PolyExpr.const(other)
        return isinstance(other, PolyExpr) and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    # semantics
    def eval(self, valuation: Mapping[str, Number]) -> Fraction:
        total = Fraction(0)
        for m, c in self._terms.items():
            t = c
            for v, e in m:
                try:
                    x = valuation[v]
                except KeyError:
                    raise UnboundVariableError(v) from None
                t *= as_fraction(x) ** e
            total += t
        return total

    def eval_float(self, valuation: Mapping[str, float]) -> float:
        total = 0.0
        for m, c in self._terms.items():
            t = float(c)
            for v, e in m:
                t *= valuation[v] ** e
            total += t
        return total

    def substitute(self, var: str, by: "PolyExpr | Number") -> "PolyExpr":
        by = _coerce(by)
        if var not in self.variables():
            return self
        out = PolyExpr()
        powers = {0: PolyExpr.const(1)}
        for m, c in self._terms.items():
            e = dict(m).get(var, 0)
            rest = tuple((v, k) for v, k in m if v != var)
            if e not in powers:
                powers[e] = by ** e
            out = out + PolyExpr({rest: c}) * powers[e]
        return out

    def rename(self, mapping: Mapping[str, str]) -> "PolyExpr":
        terms: dict = {}
        for m, c in self._terms.items():
            nm = ()
            for v, e in m:
                nm = mono_mul(nm, ((mapping.get(v, v), e),))
            terms[nm] = terms.get(nm, 0) + c
        return PolyExpr(terms)

    def collect(self, var: str) -> dict:
        """Coefficients as a polynomial in ``var``: {power: PolyExpr}."""
        out: dict = {}
        for m, c in self._terms.items():
            e = dict(m).get(var, 0)
            rest = tuple((v, k) for v, k in m if v != var)
            out.setdefault(e, {})[rest] = c
        return {e: PolyExpr(t) for e, t in out.items()}

    def sorted_terms(self) -> list:
        return sorted(self._terms.items(), key=lambda mc: mono_key(mc[0]))

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            if not m:
                parts.append(_fmt_frac(c))
            elif c == 1:
                parts.append(mono_str(m))
            elif c == -1:
                parts.append("-" + mono_str(m))
            else:
                parts.append(f"{_fmt_frac(c)}*{mono_str(m)}")
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"PolyExpr({str(self)!r})"


def _coerce(x) -> PolyExpr:
    if isinstance(x, PolyExpr):
        return x
    return PolyExpr.const(as_fraction(x))


GE = ">="
GT = ">"


@dataclass(frozen=True)
class LinConstraint:
    """``lhs >= 0`` or ``lhs > 0`` (the name is kept for the linear case;
    polynomial left-hand sides are allowed)."""

    lhs: PolyExpr
    relation: str = GE

    def __post_init__(self):
        if self.relation not in (GE, GT):
            raise ValueError(f"bad relation {self.relation!r}")

    @property
    def strict(self) -> bool:
        return self.relation == GT

    def holds(self, valuation: Mapping[str, Number]) -> bool:
        v = self.lhs.eval(valuation)
        return v > 0 if self.strict else v >= 0

    def negate(self) -> "LinConstraint":
        # not (a >= 0) is -a > 0; not (a > 0) is -a >= 0
        return LinConstraint(-self.lhs, GE if self.strict else GT)

    def relaxed(self) -> "LinConstraint":
        return LinConstraint(self.lhs, GE)

    def is_linear(self) -> bool:
        return self.lhs.is_linear()

    def variables(self) -> frozenset:
        return self.lhs.variables()

    def substitute(self, var: str, by) -> "LinConstraint":
        return LinConstraint(self.lhs.substitute(var, by), self.relation)

    def rename(self, mapping) -> "LinConstraint":
        return LinConstraint(self.lhs.rename(mapping), self.relation)

    def __str__(self) -> str:
        return f"{self.lhs} {self.relation} 0"


# A conjunctive predicate is a tuple of constraints; () denotes everything.
ConjPredicate = tuple


def conj_holds(conj: Iterable[LinConstraint], valuation) -> bool:
    return all(c.holds(valuation) for c in conj)


def conj_str(conj) -> str:
    return " and ".join(str(c) for c in conj) if conj else "true"


@dataclass(frozen=True)
class Predicate:
    """Disjunction of conjunctions.  No disjuncts is the empty set."""

    disjuncts: tuple = ((),)

    @classmethod
    def true(cls) -> "Predicate":
        return cls(((),))

    @classmethod
    def false(cls) -> "Predicate":
        return cls(())

    @classmethod
    def of(cls, *constraints: LinConstraint) -> "Predicate":
        return cls((tuple(constraints),))

    def holds(self, valuation) -> bool:
        return any(conj_holds(d, valuation) for d in self.disjuncts)

    def is_true(self) -> bool:
        return any(len(d) == 0 for d in self.disjuncts)

    def is_false(self) -> bool:
        return len(self.disjuncts) == 0

    def is_conjunctive(self) -> bool:
        return len(self.disjuncts) == 1

    def is_linear(self) -> bool:
        return all(c.is_linear() for d in self.disjuncts for c in d)

    def variables(self) -> frozenset:
        return frozenset(v for d in self.disjuncts for c in d for v in c.variables())

    def conj(self, other: "Predicate") -> "Predicate":
        return Predicate(tuple(a + b for a in self.disjuncts for b in other.disjuncts))

    def disj(self, other: "Predicate") -> "Predicate":
        return Predicate(self.disjuncts + other.disjuncts)

    def negate(self) -> "Predicate":
        """De Morgan into DNF."""
        out = Predicate.true()
        for d in self.disjuncts:
            if not d:
                return Predicate.false()
            out = out.conj(Predicate(tuple((c.negate(),) for c in d)))
        return out

    def substitute(self, var: str, by) -> "Predicate":
        return Predicate(tuple(tuple(c.substitute(var, by) for c in d) for d in self.disjuncts))

    def rename(self, mapping) -> "Predicate":
        return Predicate(tuple(tuple(c.rename(mapping) for c in d) for d in self.disjuncts))

    def __str__(self) -> str:
        if not self.disjuncts:
            return "false"
        if len(self.disjuncts) == 1:
            return conj_str(self.disjuncts[0])
        return " or ".join(f"({conj_str(d)})" for d in self.disjuncts)


@dataclass(frozen=True)
class ExpressionMap:
    """One expression per location."""

    by_location: Mapping = field(default_factory=dict)

    def __getitem__(self, loc) -> PolyExpr:
        return self.by_location[loc]

    def __iter__(self) -> Iterator:
        return iter(self.by_location)

    def __len__(self) -> int:
        return len(self.by_location)

    def value(self, loc, valuation) -> Fraction:
        return self.by_location[loc].eval(valuation)

    def is_linear(self) -> bool:
        return all(e.is_linear() for e in self.by_location.values())

    def degree(self) -> int:
        return max((e.degree() for e in self.by_location.values()), default=0)

    def scale(self, lam) -> "ExpressionMap":
        return ExpressionMap({l: e * lam for l, e in self.by_location.items()})

    def shift(self, c) -> "ExpressionMap":
        return ExpressionMap({l: e + c for l, e in self.by_location.items()})

    def combine(self, other: "ExpressionMap", lam) -> "ExpressionMap":
        """``lam * self + (1 - lam) * other``."""
        lam = as_fraction(lam)
        return ExpressionMap({l: self[l] * lam + other[l] * (1 - lam) for l in self.by_location})

    def __str__(self) -> str:
        return "; ".join(f"{l}: {e}" for l, e in self.by_location.items())


@dataclass(frozen=True)
class PredicateMap:
    by_location: Mapping = field(default_factory=dict)

    def __getitem__(self, loc) -> Predicate:
        return self.by_location.get(loc, Predicate.true())

    def get(self, loc, default=None):
        return self.by_location.get(loc, default)

    def holds(self, loc, valuation) -> bool:
        p = self.by_location.get(loc)
        return p is not None and p.holds(valuation)


# ---------------------------------------------------------------------------
# canonical text parsing (inverse of the renderers above)

_TOKEN = re.compile(r"\s*(?:(\d+(?:\.\d+)?(?:/\d+)?)|([A-Za-z_][A-Za-z_0-9']*)|(>=|<=|==|[-+*/^()<>=]))")


def _tokens(text: str) -> list:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse {text!r} at offset {pos}")
        num, name, op = m.groups()
        out.append(("num", num) if num else ("name", name) if name else ("op", op))
        pos = m.end()
    return out


class _ExprReader:
    def __init__(self, text: str):
        self.toks = _tokens(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if value is not None and tok[1] != value:
            raise ValueError(f"expected {value!r}, got {tok[1]!r}")
        self.i += 1
        return tok

    def expr(self) -> PolyExpr:
        out = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            t = self.term()
            out = out + t if op == "+" else out - t
        return out

    def term(self) -> PolyExpr:
        out = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            f = self.factor()
            if op == "*":
                out = out * f
            else:
                if not f.is_constant() or f.constant == 0:
                    raise ValueError("division only by nonzero constants")
                out = out * (1 / f.constant)
        return out

    def factor(self) -> PolyExpr:
        kind, val = self.peek()
        if val == "-":
            self.take()
            return -self.factor()
        if val == "+":
            self.take()
            return self.factor()
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            k, n = self.take()
            if k != "num" or not n.isdigit():
                raise ValueError("exponent must be a natural number")
            base = base ** int(n)
        return base

    def atom(self) -> PolyExpr:
        kind, val = self.take()
        if kind == "num":
            return PolyExpr.const(Fraction(val))
        if kind == "name":
            return PolyExpr.var(val)
        if val == "(":
            e = self.expr()
            self.take(")")
            return e
        raise ValueError(f"unexpected token {val!r}")


def parse_poly(text: str) -> PolyExpr:
    r = _ExprReader(text)
    e = r.expr()
    if r.i != len(r.toks):
        raise ValueError(f"trailing input in {text!r}")
    return e


def parse_constraint(text: str) -> tuple:
    """Parse ``a REL b`` into a tuple of constraints in ``>= 0``/``> 0`` form."""
    r = _ExprReader(text)
    lhs = r.expr()
    rel = r.take()[1]
    rhs = r.expr()
    if r.i != len(r.toks):
        raise ValueError(f"trailing input in {text!r}")
    d = lhs - rhs
    if rel == ">=":
        return (LinConstraint(d, GE),)
    if rel == ">":
        return (LinConstraint(d, GT),)
    if rel == "<=":
        return (LinConstraint(-d, GE),)
    if rel == "<":
        return (LinConstraint(-d, GT),)
    if rel in ("=", "=="):
        return (LinConstraint(d, GE), LinConstraint(-d, GE))
    raise ValueError(f"unknown relation {rel!r}")


def parse_predicate(text: str) -> Predicate:
    """Parse canonical predicate text: ``true``, ``false``, ``and``/``or`` of relations."""
    text = text.strip()
    if text == "false":
        return Predicate.false()
    disjuncts = []
    for part in re.split(r"\s+or\s+", text):
        part = part.strip()
        if part.startswith("(") and part.endswith(")"):
            part = part[1:-1]
        conj: tuple = ()
        for lit in re.split(r"\s+and\s+", part):
            lit = lit.strip()
            if lit == "true":
                continue
            conj += parse_constraint(lit)
        disjuncts.append(conj)
    return Predicate(tuple(disjuncts))


# ---------------------------------------------------------------------------
# satisfiability of linear predicates

def sat_point(p: Predicate):
    """A point of ``p``, ``"empty"`` if every disjunct is infeasible.

    Strict constraints are decided exactly by maximising a common slack
    that is capped at 1.
    """
    from .lp import LpProblem, simplex_solve

    if not p.is_linear():
        raise UnsupportedError("sat_point needs a linear predicate")
    for conj in p.disjuncts:
        variables = sorted({v for c in conj for v in c.variables()})
        if not conj:
            return {}
        lp = LpProblem()
        for v in variables:
            lp.add_var(v, free=True)
        has_strict = any(c.strict for c in conj)
        if has_strict:
            lp.add_var("__slack")
            lp.add_row({"__slack": 1}, "<=", 1)
        for c in conj:
            coeffs = dict(c.lhs.linear_coeffs())
            if c.strict:
                coeffs["__slack"] = coeffs.get("__slack", 0) - 1
            lp.add_row(coeffs, ">=", -c.lhs.constant)
        if has_strict:
            lp.set_objective({"__slack": 1}, "max")
        sol = simplex_solve(lp)
        if sol.status != "optimal":
            continue
        if has_strict and sol.objective <= 0:
            continue
        return {v: sol.value(v) for v in variables}
    return "empty"
