"""APP/PPP source programs, their lowering to pCFGs, and pCFG JSON files."""

from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .expr import (
    GE, GT, LinConstraint, PolyExpr, Predicate, PredicateMap, UnsupportedError,
    as_fraction, parse_poly, parse_predicate, sat_point,
)

APP, PPP = "APP", "PPP"
FRESH = "_u"  # the extra variable that ranges over a nondeterministic domain
NONDET, PROB, DET, ASSIGN = "N", "P", "D", "A"


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line, self.col = line, col


# ---------------------------------------------------------------------------
# distributions

@dataclass(frozen=True)
class DistDescriptor:
    """``uniform`` on [a, b], ``finite`` support, or ``geometric`` on {1, 2, ...}."""

    kind: str
    a: Fraction = Fraction(0)
    b: Fraction = Fraction(0)
    support: tuple = ()  # ((value, prob), ...)
    p: Fraction = Fraction(0)

    @classmethod
    def uniform(cls, a, b) -> "DistDescriptor":
        a, b = as_fraction(a), as_fraction(b)
        if not a < b:
            raise ValueError(f"Unif({a},{b}) needs a < b")
        return cls("uniform", a=a, b=b)

    @classmethod
    def finite(cls, pairs) -> "DistDescriptor":
        merged: dict = {}
        for v, q in pairs:
            v, q = as_fraction(v), as_fraction(q)
            if q < 0:
                raise ValueError("negative probability in finite distribution")
            merged[v] = merged.get(v, Fraction(0)) + q
        if sum(merged.values()) != 1:
            raise ValueError("finite distribution probabilities must sum to 1")
        return cls("finite", support=tuple(sorted((v, q) for v, q in merged.items() if q)))

    @classmethod
    def geometric(cls, p) -> "DistDescriptor":
        p = as_fraction(p)
        if not 0 < p <= 1:
            raise ValueError("Geometric(p) needs 0 < p <= 1")
        return cls("geometric", p=p)

    def moment(self, n: int) -> Fraction:
        if n == 0:
            return Fraction(1)
        if self.kind == "uniform":
            a, b = self.a, self.b
            return (b ** (n + 1) - a ** (n + 1)) / ((n + 1) * (b - a))
        if self.kind == "finite":
            return sum((q * v ** n for v, q in self.support), Fraction(0))
        # X = 1 w.p. p, else 1 + X' with X' ~ X independent
        m = [Fraction(1)]
        q = 1 - self.p
        for k in range(1, n + 1):
            acc = self.p + q * sum((math.comb(k, j) * m[j] for j in range(k)), Fraction(0))
            m.append(acc / self.p)
        return m[n]

    @property
    def mean(self) -> Fraction:
        return self.moment(1)

    def bounds(self) -> tuple:
        """Support hull; ``None`` marks an infinite end."""
        if self.kind == "uniform":
            return self.a, self.b
        if self.kind == "finite":
            return self.support[0][0], self.support[-1][0]
        return Fraction(1), None

    def sample(self, rng) -> float:
        if self.kind == "uniform":
            return float(self.a) + (float(self.b) - float(self.a)) * rng.random()
        if self.kind == "finite":
            u, acc = rng.random(), 0.0
            for v, q in self.support:
                acc += float(q)
                if u < acc:
                    return float(v)
            return float(self.support[-1][0])
        return float(rng.geometric(float(self.p)))

    def __str__(self) -> str:
        if self.kind == "uniform":
            return f"Unif({_num(self.a)}, {_num(self.b)})"
        if self.kind == "finite":
            return "Discrete{" + ", ".join(f"{_num(v)}: {_num(q)}" for v, q in self.support) + "}"
        return f"Geometric({_num(self.p)})"

    def to_json(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "a": _num(self.a), "b": _num(self.b)}
        if self.kind == "finite":
            return {"kind": "finite", "support": [[_num(v), _num(q)] for v, q in self.support]}
        return {"kind": "geometric", "p": _num(self.p)}

    @classmethod
    def from_json(cls, d: Mapping) -> "DistDescriptor":
        kind = d["kind"]
        if kind == "uniform":
            return cls.uniform(_frac(d["a"]), _frac(d["b"]))
        if kind == "finite":
            return cls.finite([(_frac(v), _frac(q)) for v, q in d["support"]])
        if kind == "geometric":
            return cls.geometric(_frac(d["p"]))
        raise UnsupportedError(f"unsupported distribution kind {kind!r}")


def _num(c: Fraction) -> str:
    c = as_fraction(c)
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _frac(x) -> Fraction:
    if isinstance(x, str):
        return Fraction(x.strip())
    return as_fraction(x)


def intervals_to_predicate(intervals, var: str = FRESH) -> Predicate:
    """``Real[a,b] or ...`` as a predicate over ``var``; ``None`` ends are open."""
    v = PolyExpr.var(var)
    out = []
    for lo, hi in intervals:
        conj = []
        if lo is not None:
            conj.append(LinConstraint(v - lo, GE))
        if hi is not None:
            conj.append(LinConstraint(-v + hi, GE))
        out.append(tuple(conj))
    return Predicate(tuple(out))


# ---------------------------------------------------------------------------
# AST

STAR = "*"


@dataclass(frozen=True)
class Assign:
    var: str
    expr: PolyExpr
    inv: Predicate | None = None


@dataclass(frozen=True)
class Sample:
    var: str
    dist: DistDescriptor
    inv: Predicate | None = None


@dataclass(frozen=True)
class NdetAssign:
    var: str
    intervals: tuple  # ((lo|None, hi|None), ...)
    inv: Predicate | None = None


@dataclass(frozen=True)
class Seq:
    stmts: tuple = ()
    inv: Predicate | None = None


@dataclass(frozen=True)
class If:
    cond: object  # STAR, Fraction (prob) or Predicate
    then: object
    orelse: object
    inv: Predicate | None = None


@dataclass(frozen=True)
class While:
    cond: Predicate
    body: object
    inv: Predicate | None = None


@dataclass(frozen=True)
class Refute:
    cond: Predicate
    inv: Predicate | None = None


@dataclass(frozen=True)
class Program:
    body: Seq
    variables: tuple
    mode: str = APP
    params: tuple = ()  # ((name, value), ...)


# ---------------------------------------------------------------------------
# lexer

_KEYWORDS = {"while", "do", "od", "if", "then", "else", "fi", "skip", "prob", "ndet", "sample",
             "Unif", "Discrete", "Geometric", "Normal", "Real", "refute", "and", "or", "not",
             "true", "false", "param"}

_LEX = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>(\#|//)[^\n]*)
  | (?P<num>\d+(\.\d+)?([eE][-+]?\d+)?)
  | (?P<id>[A-Za-z][A-Za-z0-9_]*)
  | (?P<op>:=|<=|>=|==|!=|[;,()\[\]{}+\-*/<>=:^])
""", re.VERBOSE)


@dataclass(frozen=True)
class Tok:
    kind: str  # num | id | kw | op | eof
    text: str
    line: int
    col: int


def tokenize(src: str) -> list:
    toks, pos, line, start = [], 0, 1, 0
    while pos < len(src):
        m = _LEX.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            start = m.end()
        elif kind in ("num", "op"):
            toks.append(Tok(kind, text, line, pos - start + 1))
        elif kind == "id":
            toks.append(Tok("kw" if text in _KEYWORDS else "id", text, line, pos - start + 1))
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - start + 1))
    return toks


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, src: str, mode: str, params: Mapping | None):
        if mode not in (APP, PPP):
            raise ValueError(f"mode must be APP or PPP, not {mode!r}")
        self.toks = tokenize(src)
        self.i = 0
        self.mode = mode
        self.override = {k: as_fraction(v) for k, v in (params or {}).items()}
        self.params: dict = {}
        self.variables: list = []

    # token helpers
    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def at(self, *texts) -> bool:
        return self.tok.kind != "eof" and self.tok.text in texts

    def take(self, text: str | None = None) -> Tok:
        t = self.tok
        if text is not None and t.text != text:
            self.fail(f"expected {text!r}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def fail(self, msg: str, tok: Tok | None = None):
        t = tok or self.tok
        raise ParseError(msg, t.line, t.col)

    def note_var(self, name: str):
        if name not in self.variables:
            self.variables.append(name)

    # program
    def program(self) -> Program:
        while self.at("param"):
            self.take()
            name = self.take()
            if name.kind != "id":
                self.fail("parameter name expected", name)
            self.take("=")
            value = self.const()
            self.params[name.text] = self.override.get(name.text, value)
            if self.at(";"):
                self.take()
        for k, v in self.override.items():
            self.params.setdefault(k, v)
        body = self.stmts()
        if self.tok.kind != "eof":
            self.fail(f"unexpected {self.tok.text!r}")
        params = tuple(sorted(self.params.items()))
        return Program(body, tuple(self.variables), self.mode, params)

    def stmts(self) -> Seq:
        out = []
        while True:
            s = self.annotated()
            if isinstance(s, Seq) and not s.stmts:
                pass
            else:
                out.append(s)
            if self.at(";"):
                self.take()
                if self.at("od", "fi", "else") or self.tok.kind == "eof":
                    break
                continue
            break
        return Seq(tuple(out))

    def annotated(self):
        inv = None
        while self.at("{"):
            self.take()
            p = self.bexpr()
            self.take("}")
            inv = p if inv is None else inv.conj(p)
        s = self.stmt()
        if inv is not None and not (isinstance(s, Seq) and not s.stmts):
            s = _with_inv(s, inv)
        return s

    def stmt(self):
        t = self.tok
        if t.text == "skip":
            self.take()
            return Seq(())
        if t.text == "if":
            self.take()
            cond = self.ndb()
            self.take("then")
            then = self.stmts()
            orelse = Seq(())
            if self.at("else"):
                self.take()
                orelse = self.stmts()
            self.take("fi")
            return If(cond, then, orelse)
        if t.text == "while":
            self.take()
            cond = self.bexpr()
            self.take("do")
            body = self.stmts()
            self.take("od")
            return While(cond, body)
        if t.text == "refute":
            self.take()
            return Refute(self.bexpr())
        if t.kind == "id":
            return self.assignment()
        self.fail(f"statement expected, found {t.text or 'end of input'!r}")

    def assignment(self):
        name = self.take()
        if name.text in self.params:
            self.fail(f"cannot assign to parameter {name.text}", name)
        self.note_var(name.text)
        self.take(":=")
        if self.at("ndet"):
            self.take()
            paren = self.at("(") and self.toks[self.i + 1].text == "Real"
            if paren:
                self.take("(")
            dom = self.domain()
            if paren:
                self.take(")")
            return NdetAssign(name.text, dom)
        if self.at("sample"):
            self.take()
            self.take("(")
            d = self.dist()
            self.take(")")
            return Sample(name.text, d)
        if self.at("Unif", "Discrete", "Geometric", "Normal"):
            return Sample(name.text, self.dist())
        return Assign(name.text, self.expr())

    def domain(self) -> tuple:
        out = [self.dom_atom()]
        while self.at("or"):
            self.take()
            out.append(self.dom_atom())
        return tuple(out)

    def dom_atom(self):
        self.take("Real")
        if not self.at("["):
            return (None, None)
        self.take("[")
        lo = self.const()
        self.take(",")
        hi = self.const()
        t = self.take("]")
        if lo > hi:
            self.fail("empty interval", t)
        return (lo, hi)

    def dist(self) -> DistDescriptor:
        t = self.take()
        try:
            if t.text == "Unif":
                self.take("(")
                a = self.const()
                self.take(",")
                b = self.const()
                self.take(")")
                return DistDescriptor.uniform(a, b)
            if t.text == "Geometric":
                self.take("(")
                p = self.const()
                self.take(")")
                return DistDescriptor.geometric(p)
            if t.text == "Discrete":
                self.take("{")
                pairs = []
                while True:
                    v = self.const()
                    self.take(":")
                    pairs.append((v, self.const()))
                    if not self.at(","):
                        break
                    self.take()
                self.take("}")
                return DistDescriptor.finite(pairs)
        except ValueError as e:
            if isinstance(e, ParseError):
                raise
            self.fail(str(e), t)
        if t.text == "Normal":
            self.fail("Normal distributions are not supported (unbounded support)", t)
        self.fail(f"distribution expected, found {t.text!r}", t)

    def ndb(self):
        if self.at("*"):
            self.take()
            return STAR
        if self.at("prob"):
            t = self.take()
            self.take("(")
            p = self.const()
            self.take(")")
            if not 0 <= p <= 1:
                self.fail(f"probability {p} outside [0,1]", t)
            return p
        return self.bexpr()

    # boolean expressions
    def bexpr(self) -> Predicate:
        p = self.conj()
        while self.at("or"):
            self.take()
            p = p.disj(self.conj())
        return p

    def conj(self) -> Predicate:
        p = self.literal()
        while self.at("and"):
            self.take()
            p = p.conj(self.literal())
        return p

    def literal(self) -> Predicate:
        if self.at("not"):
            self.take()
            return self.literal().negate()
        if self.at("true"):
            self.take()
            return Predicate.true()
        if self.at("false"):
            self.take()
            return Predicate.false()
        if self.at("("):
            save = self.i
            self.take()
            try:
                p = self.bexpr()
                self.take(")")
                if not self.at("<=", ">=", "<", ">", "=", "=="):
                    return p
            except ParseError:
                pass
            self.i = save
        lhs = self.expr()
        t = self.take()
        rhs = self.expr()
        d = lhs - rhs
        if t.text == ">=":
            return Predicate.of(LinConstraint(d, GE))
        if t.text == ">":
            return Predicate.of(LinConstraint(d, GT))
        if t.text == "<=":
            return Predicate.of(LinConstraint(-d, GE))
        if t.text == "<":
            return Predicate.of(LinConstraint(-d, GT))
        if t.text in ("=", "=="):
            return Predicate.of(LinConstraint(d, GE), LinConstraint(-d, GE))
        self.fail(f"relation expected, found {t.text!r}", t)

    # arithmetic
    def const(self) -> Fraction:
        t = self.tok
        e = self.expr()
        if not e.is_constant():
            self.fail("constant expected", t)
        return e.constant

    def expr(self) -> PolyExpr:
        out = self.term()
        while self.at("+", "-"):
            op = self.take().text
            rhs = self.term()
            out = out + rhs if op == "+" else out - rhs
        return out

    def term(self) -> PolyExpr:
        out = self.unary()
        while self.at("*", "/"):
            t = self.take()
            rhs = self.unary()
            if t.text == "*":
                if self.mode == APP and not (out.is_constant() or rhs.is_constant()):
                    self.fail("nonlinear product in APP mode", t)
                out = out * rhs
            else:
                if not rhs.is_constant() or rhs.constant == 0:
                    self.fail("division only by nonzero constants", t)
                out = out * (1 / rhs.constant)
        return out

    def unary(self) -> PolyExpr:
        if self.at("-"):
            self.take()
            return -self.unary()
        if self.at("+"):
            self.take()
            return self.unary()
        base = self.atom()
        if self.at("^"):
            t = self.take()
            n = self.take()
            if n.kind != "num" or not n.text.isdigit():
                self.fail("exponent must be a natural number", n)
            k = int(n.text)
            if self.mode == APP and k > 1 and not base.is_constant():
                self.fail("nonlinear power in APP mode", t)
            base = base ** k
        return base

    def atom(self) -> PolyExpr:
        t = self.take()
        if t.kind == "num":
            return PolyExpr.const(Fraction(t.text))
        if t.kind == "id":
            if t.text in self.params:
                return PolyExpr.const(self.params[t.text])
            if t.text in self.override:
                return PolyExpr.const(self.override[t.text])
            self.note_var(t.text)
            return PolyExpr.var(t.text)
        if t.text == "(":
            e = self.expr()
            self.take(")")
            return e
        self.fail(f"expression expected, found {t.text or 'end of input'!r}", t)


def _with_inv(s, inv: Predicate):
    return type(s)(**{**s.__dict__, "inv": inv})


def parse(source: str, mode: str = APP, params: Mapping | None = None) -> Program:
    """Parse program text; ``params`` overrides ``param NAME = value`` headers."""
    return _Parser(source, mode, params).program()


# ---------------------------------------------------------------------------
# pretty printer

def pretty(p: Program | Seq, indent: int = 0) -> str:
    if isinstance(p, Program):
        head = "".join(f"param {k} = {_num(v)};\n" for k, v in p.params)
        return head + (pretty(p.body, 0) or "skip") + "\n"
    return _pp(p, indent)


def _pp(s, ind: int) -> str:
    pad = "  " * ind
    lead = f"{pad}{{ {s.inv} }}\n" if getattr(s, "inv", None) is not None else ""
    if isinstance(s, Seq):
        if not s.stmts:
            return f"{pad}skip"
        return ";\n".join(_pp(x, ind) for x in s.stmts)
    if isinstance(s, Assign):
        return f"{lead}{pad}{s.var} := {s.expr}"
    if isinstance(s, Sample):
        return f"{lead}{pad}{s.var} := {s.dist}"
    if isinstance(s, NdetAssign):
        parts = ["Real" if lo is None and hi is None else f"Real[{_end(lo)}, {_end(hi)}]"
                 for lo, hi in s.intervals]
        return f"{lead}{pad}{s.var} := ndet " + " or ".join(parts)
    if isinstance(s, Refute):
        return f"{lead}{pad}refute ({s.cond})"
    if isinstance(s, While):
        return f"{lead}{pad}while {s.cond} do\n{_pp(s.body, ind + 1)}\n{pad}od"
    if isinstance(s, If):
        if s.cond == STAR:
            c = "*"
        elif isinstance(s.cond, Fraction):
            c = f"prob({_num(s.cond)})"
        else:
            c = str(s.cond)
        return (f"{lead}{pad}if {c} then\n{_pp(s.then, ind + 1)}\n{pad}else\n"
                f"{_pp(s.orelse, ind + 1)}\n{pad}fi")
    raise TypeError(s)


def _end(x) -> str:
    if x is None:
        raise UnsupportedError("half-open ndet domains cannot be written as Real[a,b]")
    return _num(x)


# ---------------------------------------------------------------------------
# pCFG

@dataclass(frozen=True)
class Edge:
    target: str
    prob: Fraction | None = None
    guard: Predicate | None = None


@dataclass(frozen=True)
class Update:
    var: str
    kind: str  # det | dist | ndet
    expr: PolyExpr | None = None
    dist: DistDescriptor | None = None
    domain: Predicate | None = None  # over FRESH


@dataclass(frozen=True)
class Pcfg:
    variables: tuple
    kinds: Mapping  # location -> N/P/D/A, in location order
    edges: Mapping  # location -> tuple of Edge
    updates: Mapping
    init_loc: str
    init_val: Mapping
    invariant: PredicateMap = field(default_factory=PredicateMap)
    target: PredicateMap = field(default_factory=PredicateMap)
    name: str = ""
    params: tuple = ()

    @property
    def locations(self) -> list:
        return list(self.kinds)

    def succ(self, loc) -> list:
        return [e.target for e in self.edges[loc]]

    def inv(self, loc) -> Predicate:
        return self.invariant[loc]

    def tgt(self, loc) -> Predicate | None:
        """Target predicate at ``loc``, ``None`` when no configuration there is a target."""
        return self.target.get(loc)

    def in_target(self, loc, val) -> bool:
        return self.target.holds(loc, val)

    def degree(self) -> int:
        d = 1
        for u in self.updates.values():
            if u.kind == "det":
                d = max(d, u.expr.degree())
        return d


class _Lowerer:
    def __init__(self):
        self.kinds: dict = {}
        self.edges: dict = {}
        self.updates: dict = {}
        self.inv: dict = {}
        self.target: dict = {}
        self.n = 0
        self.sink = None

    def new(self, kind: str, inv: Predicate | None) -> str:
        name = f"_t{self.n}"
        self.n += 1
        self.kinds[name] = kind
        if inv is not None:
            self.inv[name] = inv
        return name

    def lower(self, s, nxt: str) -> str:
        """Return the entry location of ``s`` whose continuation is ``nxt``."""
        if isinstance(s, Seq):
            for x in reversed(s.stmts):
                nxt = self.lower(x, nxt)
            return nxt
        if isinstance(s, Assign):
            l = self.new(ASSIGN, s.inv)
            self.updates[l] = Update(s.var, "det", expr=s.expr)
            self.edges[l] = (Edge(nxt),)
            return l
        if isinstance(s, Sample):
            l = self.new(ASSIGN, s.inv)
            self.updates[l] = Update(s.var, "dist", dist=s.dist)
            self.edges[l] = (Edge(nxt),)
            return l
        if isinstance(s, NdetAssign):
            l = self.new(ASSIGN, s.inv)
            self.updates[l] = Update(s.var, "ndet", domain=intervals_to_predicate(s.intervals))
            self.edges[l] = (Edge(nxt),)
            return l
        if isinstance(s, If):
            if s.cond == STAR:
                l = self.new(NONDET, s.inv)
                self.edges[l] = (Edge(self.lower(s.then, nxt)), Edge(self.lower(s.orelse, nxt)))
            elif isinstance(s.cond, Fraction):
                l = self.new(PROB, s.inv)
                p = s.cond
                self.edges[l] = (Edge(self.lower(s.then, nxt), prob=p),
                                 Edge(self.lower(s.orelse, nxt), prob=1 - p))
            else:
                l = self.new(DET, s.inv)
                self.edges[l] = _guarded([(self.lower(s.then, nxt), s.cond),
                                          (self.lower(s.orelse, nxt), s.cond.negate())])
            return l
        if isinstance(s, While):
            l = self.new(DET, s.inv)
            self.edges[l] = ()  # placeholder so a skip body can loop back
            body = self.lower(s.body, l)
            self.edges[l] = _guarded([(body, s.cond), (nxt, s.cond.negate())])
            return l
        if isinstance(s, Refute):
            l = self.new(DET, s.inv)
            if self.sink is None:
                self.sink = self.new(DET, None)
                self.edges[self.sink] = (Edge(self.sink, guard=Predicate.true()),)
                self.target[self.sink] = Predicate.true()
            self.edges[l] = _guarded([(self.sink, s.cond), (nxt, s.cond.negate())])
            if s.cond.is_conjunctive():
                self.target[l] = s.cond
                sink_inv = self.inv.get(l, Predicate.true()).conj(s.cond)
            else:
                sink_inv = Predicate.true()
            prev = self.inv.get(self.sink)
            self.inv[self.sink] = sink_inv if prev is None else prev.disj(sink_inv)
            return l
        raise TypeError(s)


def _guarded(pairs) -> tuple:
    return tuple(Edge(t, guard=g) for t, g in pairs if not g.is_false())


def lower_to_pcfg(p: Program, name: str = "") -> Pcfg:
    """Translate a program into a pCFG.

    A leading run of constant assignments becomes the initial valuation
    (all other variables start at 0).  Locations are numbered ``l0, l1, ...``
    in depth-first order from the initial location.
    """
    variables = tuple(p.variables)
    init_val = {v: Fraction(0) for v in variables}
    stmts = list(p.body.stmts)
    while stmts and isinstance(stmts[0], Assign) and stmts[0].expr.is_constant():
        init_val[stmts[0].var] = stmts[0].expr.constant
        stmts.pop(0)
    lw = _Lowerer()
    end = lw.new(DET, None)
    lw.edges[end] = (Edge(end, guard=Predicate.true()),)
    entry = lw.lower(Seq(tuple(stmts)), end)

    # rename in DFS preorder from the entry location
    order, seen, stack = [], set(), [entry]
    while stack:
        l = stack.pop()
        if l in seen:
            continue
        seen.add(l)
        order.append(l)
        stack.extend(reversed([e.target for e in lw.edges[l]]))
    order += [l for l in lw.kinds if l not in seen]
    ren = {l: f"l{i}" for i, l in enumerate(order)}
    kinds = {ren[l]: lw.kinds[l] for l in order}
    edges = {ren[l]: tuple(Edge(ren[e.target], e.prob, e.guard) for e in lw.edges[l]) for l in order}
    updates = {ren[l]: u for l, u in lw.updates.items()}
    inv = {ren[l]: i for l, i in lw.inv.items()}
    target = {ren[l]: t for l, t in lw.target.items()}
    missing = [ren[l] for l in order if l not in lw.inv and l not in (end,)]
    if missing:
        warnings.warn(f"no invariant annotation for {', '.join(missing)}; using true", stacklevel=2)
    g = Pcfg(variables, kinds, edges, updates, ren[entry], init_val,
             PredicateMap(inv), PredicateMap(target), name, p.params)
    problems = validate_pcfg(g)
    if problems:
        raise ValueError("lowered pCFG is invalid: " + "; ".join(problems))
    return g


# ---------------------------------------------------------------------------
# validation

def validate_pcfg(g: Pcfg) -> list:
    """Structural violations; empty when the pCFG is well-formed.

    Exhaustion and exclusion of linear guards are decided exactly; for
    nonlinear guards only sampled points are tried, so a clean result there
    is not a proof.
    """
    out = []
    locs = set(g.kinds)
    if g.init_loc not in locs:
        out.append(f"initial location {g.init_loc} is not a location")
    for l, kind in g.kinds.items():
        es = g.edges.get(l, ())
        if kind not in (NONDET, PROB, DET, ASSIGN):
            out.append(f"{l}: unknown kind {kind!r}")
            continue
        if not es:
            out.append(f"{l}: no successor (transition relation is not total)")
            continue
        for e in es:
            if e.target not in locs:
                out.append(f"{l}: successor {e.target} is not a location")
        if kind == ASSIGN:
            if len(es) != 1:
                out.append(f"{l}: assignment location needs exactly one successor")
            u = g.updates.get(l)
            if u is None:
                out.append(f"{l}: assignment location without update")
            elif u.var not in g.variables:
                out.append(f"{l}: update of undeclared variable {u.var}")
        elif kind == PROB:
            ps = [e.prob for e in es]
            if any(p is None or p < 0 or p > 1 for p in ps):
                out.append(f"{l}: branch probabilities must lie in [0,1]")
            elif sum(ps) != 1:
                out.append(f"{l}: branch probabilities sum to {sum(ps)}")
        elif kind == DET:
            out.extend(_check_guards(l, [e.guard or Predicate.true() for e in es], g.variables))
    if g.init_loc in locs and not g.invariant[g.init_loc].holds(_full(g.init_val, g.variables)):
        out.append(f"initial configuration violates the invariant at {g.init_loc}")
    for l, t in g.target.by_location.items():
        if l not in locs:
            out.append(f"target names unknown location {l}")
        elif not t.is_conjunctive():
            out.append(f"{l}: target predicate must be conjunctive")
    return out


def _full(val, variables):
    return {v: as_fraction(val.get(v, 0)) for v in variables}


def _check_guards(l, guards, variables) -> list:
    out = []
    if all(g.is_linear() for g in guards):
        for i in range(len(guards)):
            for j in range(i + 1, len(guards)):
                pt = sat_point(guards[i].conj(guards[j]))
                if pt != "empty":
                    out.append(f"{l}: guards {i} and {j} overlap at {_show(pt)}")
        rest = Predicate.true()
        for g in guards:
            rest = rest.conj(g.negate())
        pt = sat_point(rest)
        if pt != "empty":
            out.append(f"{l}: guards not exhaustive at {_show(pt)}")
        return out
    # sampling: sound for violations only
    import random
    rng = random.Random(0)
    vs = sorted(set().union(*(g.variables() for g in guards)))
    for _ in range(2000):
        pt = {v: Fraction(rng.randint(-400, 400), rng.choice((1, 2, 4, 8))) for v in vs}
        n = sum(1 for g in guards if g.holds(pt))
        if n != 1:
            kind = "not exhaustive" if n == 0 else "overlap"
            out.append(f"{l}: guards {kind} at {_show(pt)} (sampled)")
            break
    return out


def _show(pt) -> str:
    return "{" + ", ".join(f"{k}={_num(v)}" for k, v in sorted(pt.items())) + "}"


# ---------------------------------------------------------------------------
# JSON form

def pcfg_to_json(g: Pcfg) -> dict:
    locs = []
    for l, kind in g.kinds.items():
        d: dict = {"name": l, "kind": kind}
        if l in g.invariant.by_location:
            d["invariant"] = str(g.invariant.by_location[l])
        if l in g.target.by_location:
            d["target"] = str(g.target.by_location[l])
        u = g.updates.get(l)
        if u is not None:
            ud: dict = {"var": u.var}
            if u.kind == "det":
                ud["expr"] = str(u.expr)
            elif u.kind == "dist":
                ud["dist"] = u.dist.to_json()
            else:
                ud["ndet"] = str(u.domain)
            d["update"] = ud
        ts = []
        for e in g.edges[l]:
            td: dict = {"to": e.target}
            if e.prob is not None:
                td["prob"] = _num(e.prob)
            if e.guard is not None:
                td["guard"] = str(e.guard)
            ts.append(td)
        d["transitions"] = ts
        locs.append(d)
    out = {
        "name": g.name,
        "variables": list(g.variables),
        "init": {"location": g.init_loc,
                 "valuation": {v: _num(g.init_val.get(v, 0)) for v in g.variables}},
        "locations": locs,
    }
    if g.params:
        out["params"] = {k: _num(v) for k, v in g.params}
    return out


def pcfg_from_json(d: Mapping, params: Mapping | None = None) -> Pcfg:
    """Build a pCFG from its JSON form.  Probabilities and constants may name
    entries of ``params`` (defaults come from the file's own ``params``)."""
    pvals = {k: _frac(v) for k, v in d.get("params", {}).items()}
    pvals.update({k: as_fraction(v) for k, v in (params or {}).items()})

    def sub(text: str) -> str:
        for k in sorted(pvals, key=len, reverse=True):
            text = re.sub(rf"\b{re.escape(k)}\b", f"({_num(pvals[k])})", text)
        return text

    def num(x) -> Fraction:
        if isinstance(x, str):
            e = parse_poly(sub(x))
            if not e.is_constant():
                raise ValueError(f"constant expected, got {x!r}")
            return e.constant
        return as_fraction(x)

    variables = tuple(d["variables"])
    kinds, edges, updates, inv, target = {}, {}, {}, {}, {}
    for ld in d["locations"]:
        l = ld["name"]
        kinds[l] = ld["kind"]
        if "invariant" in ld:
            inv[l] = parse_predicate(sub(ld["invariant"]))
        if "target" in ld:
            target[l] = parse_predicate(sub(ld["target"]))
        if "update" in ld:
            ud = ld["update"]
            if "expr" in ud:
                updates[l] = Update(ud["var"], "det", expr=parse_poly(sub(ud["expr"])))
            elif "dist" in ud:
                dd = {k: (sub(v) if isinstance(v, str) else v) for k, v in ud["dist"].items()}
                updates[l] = Update(ud["var"], "dist", dist=DistDescriptor.from_json(dd))
            elif "ndet" in ud:
                updates[l] = Update(ud["var"], "ndet", domain=parse_predicate(sub(ud["ndet"])))
            else:
                raise ValueError(f"{l}: update needs expr, dist or ndet")
        es = []
        for td in ld.get("transitions", ()):
            es.append(Edge(td["to"],
                           prob=num(td["prob"]) if "prob" in td else None,
                           guard=parse_predicate(sub(td["guard"])) if "guard" in td else None))
        if ld["kind"] == DET:
            es = [e if e.guard is not None else Edge(e.target, e.prob, Predicate.true()) for e in es]
        edges[l] = tuple(es)
    init = d["init"]
    init_val = {v: Fraction(0) for v in variables}
    init_val.update({k: num(v) for k, v in init.get("valuation", {}).items()})
    g = Pcfg(variables, kinds, edges, updates, init["location"], init_val,
             PredicateMap(inv), PredicateMap(target), d.get("name", ""),
             tuple(sorted(pvals.items())))
    problems = validate_pcfg(g)
    if problems:
        raise ValueError("invalid pCFG: " + "; ".join(problems))
    return g


def canonical_text(g: Pcfg) -> str:
    d = pcfg_to_json(g)
    d.pop("name", None)
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def fingerprint(g: Pcfg) -> str:
    return hashlib.sha256(canonical_text(g).encode()).hexdigest()


def load_model(path: str | Path, params: Mapping | None = None, mode: str | None = None) -> Pcfg:
    """Load a ``.json`` pCFG or lower an ``.app``/``.ppp`` program."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return pcfg_from_json(json.loads(text), params)
    if mode is None:
        mode = PPP if path.suffix == ".ppp" else APP
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return lower_to_pcfg(parse(text, mode, params), name=path.stem)
