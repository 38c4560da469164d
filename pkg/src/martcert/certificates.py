"""Concrete certificates: exact pointwise checking, kappa, and the Azuma bound."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .constraints import ARNK, EPSREP, NNREP, SCLSUB, CertSpec, gen_implications, make_template
from .expr import (
    GT, ExpressionMap, LinConstraint, PolyExpr, Predicate, UnsupportedError, as_fraction, parse_poly,
    sat_point,
)
from .frontend import ASSIGN, DET, FRESH, NONDET, PROB, Pcfg, fingerprint
from .lp import LpProblem, simplex_solve

EXACT, APPROX, HAND = "synthesized-exact", "synthesized-approximate", "hand-written"
PROBABILITY_KINDS = (NNREP, SCLSUB)


# ---------------------------------------------------------------------------
# certificate functions: an ExpressionMap, or pointwise min/max of several

@dataclass(frozen=True)
class PointwiseMap:
    op: str  # "min" | "max"
    parts: tuple  # ExpressionMap or PointwiseMap

    def __post_init__(self):
        if self.op not in ("min", "max"):
            raise ValueError(self.op)

    def value(self, loc, val) -> Fraction:
        vs = [_value(p, loc, val) for p in self.parts]
        return min(vs) if self.op == "min" else max(vs)

    def leaves(self, loc) -> list:
        return [e for p in self.parts for e in _leaves(p, loc)]

    def __iter__(self):
        return iter(self.parts[0])


def _value(f, loc, val) -> Fraction:
    return f.value(loc, val)


def _leaves(f, loc) -> list:
    if isinstance(f, ExpressionMap):
        return [f[loc]]
    return f.leaves(loc)


def pointwise_min(*fs) -> PointwiseMap:
    return PointwiseMap("min", tuple(fs))


def pointwise_max(*fs) -> PointwiseMap:
    return PointwiseMap("max", tuple(fs))


@dataclass(frozen=True)
class Certificate:
    spec: CertSpec
    eta: object  # ExpressionMap | PointwiseMap
    provenance: str = HAND
    objective: object = None  # unclamped eta(init)
    kappa: object = None
    params: tuple = ()
    fingerprint: str = ""

    def init_value(self, g: Pcfg) -> Fraction:
        return _value(self.eta, g.init_loc, _full(g.init_val, g.variables))

    def bound(self, g: Pcfg):
        v = self.objective if self.objective is not None else self.init_value(g)
        if self.spec.kind in PROBABILITY_KINDS:
            return min(max(v, type(v)(0)), type(v)(1))
        return v

    def trivial(self, g: Pcfg) -> bool:
        b = self.bound(g)
        if self.spec.kind == NNREP:
            return b >= 1
        if self.spec.kind == SCLSUB:
            return b <= 0
        return False


def _full(val, variables) -> dict:
    return {v: as_fraction(val.get(v, 0)) for v in variables}


# ---------------------------------------------------------------------------
# exact one-step operator


class _Univariate:
    """``t -> F(loc, val[var := t])`` for a certificate function F."""

    def __init__(self, f, loc, val, var):
        self.f, self.loc, self.val, self.var = f, loc, dict(val), var
        t = PolyExpr.var("__t")
        self.pieces = [e.substitute(var, t) for e in _leaves(f, loc)]

    def __call__(self, x: Fraction) -> Fraction:
        v = dict(self.val)
        v[self.var] = x
        return _value(self.f, self.loc, v)

    def _fixed(self) -> list:
        """Pieces with every variable except t fixed: univariate in ``__t``."""
        out = []
        fixed = {k: v for k, v in self.val.items() if k != self.var}
        for p in self.pieces:
            q = p
            for k, v in fixed.items():
                if k in q.variables():
                    q = q.substitute(k, v)
            out.append(q)
        return out

    def breakpoints(self) -> list:
        ps = self._fixed()
        pts = set()
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                d = ps[i] - ps[j]
                if d.is_zero() or d.is_constant():
                    continue
                if d.degree() > 1:
                    raise UnsupportedError("exact check of min/max needs pieces linear along updates")
                a = d.coeff((("__t", 1),))
                pts.add(-d.constant / a)
        return sorted(pts)

    def active_piece(self, at: Fraction) -> PolyExpr:
        target = self(at)
        for p in self._fixed():
            if p.eval({"__t": at}) == target:
                return p
        raise AssertionError("no piece attains the value")

    def expect_uniform(self, a: Fraction, b: Fraction) -> Fraction:
        cuts = [a] + [c for c in self.breakpoints() if a < c < b] + [b]
        total = Fraction(0)
        for lo, hi in zip(cuts, cuts[1:]):
            p = self.active_piece((lo + hi) / 2)
            total += _integrate(p, lo, hi)
        return total / (b - a)

    def expect_geometric(self, p: Fraction, moment) -> Fraction:
        q = 1 - p
        bps = self.breakpoints()
        k_tail = max(2, math.floor(max(bps)) + 2) if bps else 1
        total = Fraction(0)
        for k in range(1, k_tail):
            total += p * q ** (k - 1) * self(Fraction(k))
        piece = self.active_piece(Fraction(k_tail))
        # E[X^n 1{X >= K}] = q^(K-1) E[(K-1+X)^n]
        shift = k_tail - 1
        for m, c in piece.terms.items():
            n = dict(m).get("__t", 0)
            s = sum((math.comb(n, j) * Fraction(shift) ** (n - j) * moment(j) for j in range(n + 1)),
                    Fraction(0))
            total += c * q ** shift * s
        return total

    def extremum(self, intervals, want_max: bool):
        """sup/inf over a union of intervals; ``None`` ends are infinite.

        Returns a Fraction, or ``math.inf``/``-math.inf``.
        """
        best = None
        bps = self.breakpoints()
        for lo, hi in intervals:
            cands = [x for x in (lo, hi) if x is not None]
            cands += [c for c in bps if (lo is None or c >= lo) and (hi is None or c <= hi)]
            for p in self._fixed():
                if p.degree() > 2:
                    raise UnsupportedError("exact sup/inf needs degree <= 2 along ndet updates")
                if p.degree() == 2:
                    a2 = p.coeff((("__t", 2),))
                    a1 = p.coeff((("__t", 1),))
                    c = -a1 / (2 * a2)
                    if (lo is None or c >= lo) and (hi is None or c <= hi):
                        cands.append(c)
            for end, sign in ((lo, -1), (hi, 1)):
                if end is not None:
                    continue
                anchor = (max(bps + cands) if sign > 0 else min(bps + cands)) if (bps or cands) else Fraction(0)
                far = anchor + sign * 1
                piece = self.active_piece(far)
                if piece.degree() > 0:
                    d = piece.degree()
                    lead = piece.coeff((("__t", d),))
                    direction = lead * (sign ** d)
                    if (direction > 0) == want_max:
                        return math.inf if want_max else -math.inf
                cands.append(far)
            for x in cands:
                v = self(x)
                if best is None or (v > best if want_max else v < best):
                    best = v
        return best


def _integrate(p: PolyExpr, lo: Fraction, hi: Fraction) -> Fraction:
    total = Fraction(0)
    for m, c in p.terms.items():
        n = dict(m).get("__t", 0)
        total += c * (hi ** (n + 1) - lo ** (n + 1)) / (n + 1)
    return total


def _intervals_of(domain: Predicate) -> list:
    """Read ``Real[a,b] or ...`` back from a predicate over the fresh variable."""
    out = []
    for conj in domain.disjuncts:
        lo = hi = None
        for c in conj:
            a = c.lhs.coeff(((FRESH, 1),))
            if not c.lhs.is_linear() or c.lhs.variables() - {FRESH} or a == 0:
                raise UnsupportedError("ndet domain must be a union of intervals")
            b = -c.lhs.constant / a
            if a > 0:
                lo = b if lo is None else max(lo, b)
            else:
                hi = b if hi is None else min(hi, b)
        if lo is None or hi is None or lo <= hi:
            out.append((lo, hi))
    return out


def pre_value(g: Pcfg, f, loc, val, lower: bool = False):
    """Exact ``(upre f)(loc, val)`` (``lpre`` with ``lower``)."""
    kind = g.kinds[loc]
    edges = g.edges[loc]
    if kind == NONDET:
        vs = [_value(f, e.target, val) for e in edges]
        return min(vs) if lower else max(vs)
    if kind == PROB:
        return sum((e.prob * _value(f, e.target, val) for e in edges), Fraction(0))
    if kind == DET:
        hits = [e for e in edges if (e.guard or Predicate.true()).holds(val)]
        if len(hits) != 1:
            raise ValueError(f"{loc}: {len(hits)} guards hold at {val}")
        return _value(f, hits[0].target, val)
    u = g.updates[loc]
    nxt = edges[0].target
    if u.kind == "det":
        v = dict(val)
        v[u.var] = u.expr.eval(val)
        return _value(f, nxt, v)
    line = _Univariate(f, nxt, val, u.var)
    if u.kind == "dist":
        d = u.dist
        if d.kind == "finite":
            return sum((q * line(x) for x, q in d.support), Fraction(0))
        if d.kind == "uniform":
            return line.expect_uniform(d.a, d.b)
        return line.expect_geometric(d.p, d.moment)
    return line.extremum(_intervals_of(u.domain), want_max=not lower)


# ---------------------------------------------------------------------------
# sampling plan

@dataclass(frozen=True)
class SamplingPlan:
    points_per_region: int = 50
    seed: int = 0
    radius: int = 50  # half-width of the box used to bound unbounded regions
    vertex_directions: int = 6


def _lin_region_points(conj, variables, plan: SamplingPlan, rng) -> list:
    """Exact rational points of a linear conjunction: LP vertices of the region
    intersected with a box, plus random convex combinations of them."""
    base = _sat(conj, variables, None)
    if base is None:
        return []
    box = [(v, base[v] - plan.radius, base[v] + plan.radius) for v in variables]
    verts = [base]
    dirs = [{v: s} for v in variables for s in (1, -1)]
    for _ in range(plan.vertex_directions):
        dirs.append({v: rng.choice((-3, -2, -1, 1, 2, 3)) for v in variables})
    for d in dirs:
        p = _sat(conj, variables, d, box)
        if p is not None and p not in verts:
            verts.append(p)
    pts = [p for p in verts]
    for _ in range(plan.points_per_region):
        k = rng.randint(1, min(4, len(verts)))
        chosen = rng.sample(verts, k)
        w = [Fraction(rng.randint(1, 16)) for _ in chosen]
        s = sum(w)
        pts.append({v: sum((wi * c[v] for wi, c in zip(w, chosen)), Fraction(0)) / s for v in variables})
    return pts


def _sat(conj, variables, objective, box=None):
    lp = LpProblem()
    for v in variables:
        lp.add_var(v, free=True)
    for c in conj:
        lp.add_row(dict(c.lhs.linear_coeffs()), ">=", -c.lhs.constant)
    if box:
        for v, lo, hi in box:
            lp.add_row({v: 1}, ">=", lo)
            lp.add_row({v: 1}, "<=", hi)
    if objective:
        lp.set_objective(objective, "max")
    sol = simplex_solve(lp)
    if sol.status != "optimal":
        return None
    return {v: sol.value(v) for v in variables}


def _box_points(conj, variables, plan, rng) -> list:
    out = []
    for _ in range(plan.points_per_region * 20):
        p = {v: Fraction(rng.randint(-plan.radius * 8, plan.radius * 8), 8) for v in variables}
        if all(c.holds(p) for c in conj):
            out.append(p)
            if len(out) >= plan.points_per_region:
                break
    return out


def sample_configurations(g: Pcfg, plan: SamplingPlan = SamplingPlan()) -> list:
    """Configurations inside the invariant, covering target and non-target parts."""
    rng = random.Random(plan.seed)
    variables = list(g.variables)
    out = [(g.init_loc, _full(g.init_val, variables))]
    for l in g.locations:
        tgt = g.tgt(l)
        regions = []
        for d in g.inv(l).disjuncts:
            regions.append(tuple(d))
            if tgt is not None:
                for t in tgt.disjuncts:
                    regions.append(tuple(d) + tuple(t))
                    for lit in t:
                        regions.append(tuple(d) + (lit.negate(),))
            if g.kinds[l] == DET:
                # each guard case has its own pre, so its boundary gets vertices too
                for e in g.edges[l]:
                    for gd in (e.guard or Predicate.true()).disjuncts:
                        if gd:
                            regions.append(tuple(d) + tuple(gd))
        for r in regions:
            if all(c.is_linear() for c in r):
                pts = _lin_region_points(r, variables, plan, rng)
            else:
                pts = _box_points(r, variables, plan, rng)
            for p in pts:
                if g.inv(l).holds(p):
                    out.append((l, p))
    return out


# ---------------------------------------------------------------------------
# checking

@dataclass
class CheckResult:
    passed: bool
    checked: int = 0
    witness: tuple | None = None  # (location, valuation, condition, slack)

    def __bool__(self):
        return self.passed


def check_certificate(g: Pcfg, cert: Certificate, points=None,
                      plan: SamplingPlan = SamplingPlan(), tol=0) -> CheckResult:
    """Evaluate the defining inequalities of ``cert`` at sampled configurations.

    ``points`` is a list of ``(location, valuation)``; by default it is drawn
    from the invariant with ``plan``.  All arithmetic is exact.  ``tol`` is a
    violation allowance relative to the size of the terms involved (``1 + sum |c m(x)|``
    over the expressions at the location and its successors), meant for
    numerically synthesised certificates.
    """
    rel = as_fraction(tol)
    if points is None:
        points = sample_configurations(g, plan)
    spec = cert.spec
    f = cert.eta
    n = 0
    for loc, val in points:
        val = _full(val, g.variables)
        if not g.inv(loc).holds(val):
            continue
        n += 1
        eta = _value(f, loc, val)
        in_c = g.in_target(loc, val)
        tol = rel * _magnitude(g, f, loc, val) if rel else rel
        if spec.kind in (NNREP, ARNK) and eta < -tol:
            return CheckResult(False, n, (loc, val, "eta >= 0", eta))
        if spec.kind == SCLSUB and eta > 1 + tol:
            return CheckResult(False, n, (loc, val, "eta <= 1", 1 - eta))
        if in_c:
            if spec.kind == NNREP and eta < spec.level - tol:
                return CheckResult(False, n, (loc, val, f"eta >= {spec.level} on target", eta - spec.level))
            if spec.kind == EPSREP and eta < -tol:
                return CheckResult(False, n, (loc, val, "eta >= 0 on target", eta))
            continue
        pre = pre_value(g, f, loc, val, lower=spec.kind == SCLSUB)
        if spec.kind == NNREP:
            slack = eta - pre
        elif spec.kind == ARNK:
            slack = eta - 1 - pre
        elif spec.kind == EPSREP:
            slack = eta - pre - spec.eps
        else:
            slack = spec.gamma * pre - eta if pre != -math.inf else -math.inf
        if slack < -tol:
            return CheckResult(False, n, (loc, val, "one-step condition", slack))
    return CheckResult(True, n)


def _magnitude(g: Pcfg, f, loc, val) -> Fraction:
    locs = [loc] + [e.target for e in g.edges[loc]]
    best = Fraction(0)
    for l in locs:
        for e in _leaves(f, l):
            m = sum((abs(c * PolyExpr({mono: 1}).eval(val)) for mono, c in e.terms.items()
                     if all(v in val for v, _ in mono)), Fraction(0))
            best = max(best, m)
    return 1 + best


def verify_linear(g: Pcfg, cert: Certificate, target_within_invariant: bool = True) -> CheckResult:
    """Symbolic check of a linear certificate: every generated implication is
    instantiated and its negation tested for satisfiability exactly."""
    eta = cert.eta
    if not isinstance(eta, ExpressionMap) or not eta.is_linear():
        raise UnsupportedError("verify_linear needs a linear expression map")
    t = make_template(g, 1)
    asg = {}
    for l in g.locations:
        e = eta[l]
        for u, part in t[l].items():
            (mono, _), = part.terms.items()
            asg[u] = e.coeff(mono)
    imps = gen_implications(g, t, cert.spec, target_within_invariant)
    for n, imp in enumerate(imps, start=1):
        cons = imp.consequent.instantiate(asg)
        bad = Predicate((tuple(imp.antecedent) + (LinConstraint(-cons, GT),),))
        pt = sat_point(bad)
        if pt != "empty":
            val = {v: pt.get(v, Fraction(0)) for v in sorted(bad.variables())}
            return CheckResult(False, n, (imp.origin.split()[1], val, imp.origin, cons.eval(val)))
    return CheckResult(True, len(imps))


# ---------------------------------------------------------------------------
# Azuma-style bound for eps-RepSupM

@dataclass(frozen=True)
class AzumaBound:
    raw: float
    bound: float
    refutation_only: bool


def azuma_bound(eta0, eps, kappa) -> AzumaBound:
    """Upper bound on the reachability probability from an eps-RepSupM with
    kappa-bounded differences and negative initial value ``eta0``."""
    eta0, eps, kappa = Fraction(eta0), Fraction(eps), Fraction(kappa)
    if not eta0 < 0:
        raise ValueError("eta0 must be negative")
    if not eps > 0 or not kappa > 0:
        raise ValueError("eps and kappa must be positive")
    s = (kappa + eps) ** 2
    log_gamma = -float(eps * eps / (2 * s))
    log_alpha = float(eps * eta0 / s)
    n = math.ceil(abs(eta0) / kappa)
    log_raw = log_alpha + n * log_gamma - math.log(-math.expm1(log_gamma))
    raw = math.exp(log_raw) if log_raw < 700 else math.inf
    return AzumaBound(raw, min(1.0, raw), raw >= 1)


# ---------------------------------------------------------------------------
# bounded differences

def kappa_of(g: Pcfg, eta: ExpressionMap):
    """Max of |eta(c) - eta(c')| over invariant configurations c and successors c'.

    Returns a Fraction or the string ``"unbounded"``.
    """
    if not eta.is_linear():
        raise UnsupportedError("kappa_of needs a linear certificate")
    best = Fraction(0)
    for l in g.locations:
        for d in g.inv(l).disjuncts:
            for cons, diff in _differences(g, eta, l, tuple(d)):
                for sign in (1, -1):
                    lp = LpProblem()
                    vs = sorted(set(g.variables) | diff.variables() | {v for c in cons for v in c.variables()})
                    for v in vs:
                        lp.add_var(v, free=True)
                    for c in cons:
                        lp.add_row(dict(c.relaxed().lhs.linear_coeffs()), ">=", -c.lhs.constant)
                    obj = diff * sign
                    lp.set_objective(obj.linear_coeffs(), "max", obj.constant)
                    sol = simplex_solve(lp)
                    if sol.status == "unbounded":
                        return "unbounded"
                    if sol.status == "optimal":
                        best = max(best, sol.objective)
    return best


def _differences(g: Pcfg, eta: ExpressionMap, l, inv) -> list:
    """(constraints, eta(l)(x) - eta(l')(x')) for each transition case out of ``l``."""
    kind = g.kinds[l]
    here = eta[l]
    out = []
    if kind in (NONDET, PROB):
        for e in g.edges[l]:
            out.append((inv, here - eta[e.target]))
    elif kind == DET:
        for e in g.edges[l]:
            for gd in (e.guard or Predicate.true()).disjuncts:
                out.append((inv + tuple(gd), here - eta[e.target]))
    else:
        u = g.updates[l]
        nxt = eta[g.edges[l][0].target]
        if u.kind == "det":
            out.append((inv, here - nxt.substitute(u.var, u.expr)))
        elif u.kind == "ndet":
            z = PolyExpr.var(FRESH)
            for dd in u.domain.disjuncts:
                out.append((inv + tuple(dd), here - nxt.substitute(u.var, z)))
        else:
            dist = u.dist
            if dist.kind == "finite":
                for v, _ in dist.support:
                    out.append((inv, here - nxt.substitute(u.var, v)))
            else:
                lo, hi = dist.bounds()
                z = PolyExpr.var(FRESH)
                from .expr import GE, LinConstraint
                box = [LinConstraint(z - lo, GE)]
                if hi is not None:
                    box.append(LinConstraint(-z + hi, GE))
                out.append((inv + tuple(box), here - nxt.substitute(u.var, z)))
    return out


# ---------------------------------------------------------------------------
# JSON

def _num(c) -> str:
    c = as_fraction(c)
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def certificate_to_json(cert: Certificate, g: Pcfg | None = None) -> dict:
    if not isinstance(cert.eta, ExpressionMap):
        raise UnsupportedError("only expression-map certificates are serialised")
    s = cert.spec
    params = {"M": _num(s.level)}
    if s.kind == SCLSUB:
        params = {"gamma": _num(s.gamma)}
    elif s.kind == EPSREP:
        params = {"eps": _num(s.eps)}
        if cert.kappa is not None:
            params["kappa"] = cert.kappa if isinstance(cert.kappa, str) else _num(cert.kappa)
    elif s.kind == ARNK:
        params = {}
    d = {
        "kind": s.kind,
        "params": params,
        "locations": {l: str(cert.eta[l]) for l in cert.eta},
        "provenance": cert.provenance,
    }
    if g is not None:
        b = cert.bound(g)
        d["bound"] = _num(b) if isinstance(b, Fraction) else b
        d["fingerprint"] = fingerprint(g)
        if g.params:
            d["model_params"] = {k: _num(v) for k, v in g.params}
    elif cert.fingerprint:
        d["fingerprint"] = cert.fingerprint
    if cert.objective is not None:
        o = cert.objective
        d["objective"] = _num(o) if isinstance(o, Fraction) else o
    return d


def certificate_from_json(d: Mapping) -> Certificate:
    p = d.get("params", {})
    spec = CertSpec(d["kind"],
                    gamma=Fraction(p.get("gamma", "999/1000")),
                    eps=Fraction(p.get("eps", "1")),
                    level=Fraction(p.get("M", "1")))
    eta = ExpressionMap({l: parse_poly(t) for l, t in d["locations"].items()})
    obj = d.get("objective")
    if isinstance(obj, str):
        obj = Fraction(obj)
    kappa = p.get("kappa")
    if isinstance(kappa, str) and kappa != "unbounded":
        kappa = Fraction(kappa)
    return Certificate(spec, eta, d.get("provenance", HAND), obj, kappa,
                       fingerprint=d.get("fingerprint", ""))


def save_certificate(cert: Certificate, path, g: Pcfg | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(certificate_to_json(cert, g), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_certificate(path) -> Certificate:
    with open(path, encoding="utf-8") as fh:
        return certificate_from_json(json.load(fh))
