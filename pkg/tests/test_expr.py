from fractions import Fraction

import pytest
from hypothesis import assume, given, settings, strategies as st

from martcert.expr import (GT, LinConstraint, PolyExpr, Predicate, UnboundVariableError,
                           UnsupportedError, parse_poly, parse_predicate, sat_point)

VARS = ("x", "y", "z")

fracs = st.fractions(min_value=-20, max_value=20, max_denominator=12)


@st.composite
def polys(draw, max_terms=4, max_degree=2, variables=VARS):
    terms = {}
    for _ in range(draw(st.integers(0, max_terms))):
        mono = {}
        for _ in range(draw(st.integers(0, max_degree))):
            v = draw(st.sampled_from(variables))
            mono[v] = mono.get(v, 0) + 1
        key = tuple(sorted(mono.items()))
        terms[key] = terms.get(key, 0) + draw(fracs)
    return PolyExpr(terms)


valuations = st.fixed_dictionaries({v: fracs for v in VARS})


def test_eval_examples():
    assert parse_poly("3*x + 2*y - 1").eval({"x": 1, "y": 1}) == 4
    assert parse_poly("x*y + x + 1").eval({"x": 2, "y": 3}) == 9
    assert parse_poly("1/2*x").eval({"x": Fraction(1, 3)}) == Fraction(1, 6)


def test_eval_unbound():
    with pytest.raises(UnboundVariableError):
        parse_poly("x + y").eval({"x": 1})


def test_substitute_examples():
    e = parse_poly("x*y + x + 1")
    assert e.substitute("x", parse_poly("y + 1")) == parse_poly("y^2 + 2*y + 2")
    assert parse_poly("2*x + 3").substitute("x", parse_poly("x - 1")) == parse_poly("2*x + 1")
    assert parse_poly("y + 1").substitute("x", 5) == parse_poly("y + 1")


def test_normal_form():
    assert parse_poly("x + x - 2*x") == PolyExpr()
    assert parse_poly("(x + 1)^2") == parse_poly("x^2 + 2*x + 1")
    assert str(parse_poly("0*x + 2/4")) == "1/2"
    assert parse_poly("x*y") == parse_poly("y*x")


def test_sat_point_examples():
    assert sat_point(parse_predicate("x > 0 and x < 0")) == "empty"
    assert sat_point(parse_predicate("x >= 0 and x <= 0")) == {"x": 0}
    assert sat_point(parse_predicate("x > 0 and x < 1/1000")) != "empty"
    assert sat_point(Predicate.false()) == "empty"
    assert sat_point(Predicate.true()) == {}
    pt = sat_point(parse_predicate("x >= 3 or y <= -7"))
    assert parse_predicate("x >= 3 or y <= -7").holds({"x": 0, "y": 0, **pt})


def test_sat_point_rejects_nonlinear():
    with pytest.raises(UnsupportedError):
        sat_point(parse_predicate("x*x >= 1"))


@settings(max_examples=60)
@given(polys(), polys(), valuations)
def test_eval_is_a_ring_homomorphism(p, q, val):
    assert (p + q).eval(val) == p.eval(val) + q.eval(val)
    assert (p * q).eval(val) == p.eval(val) * q.eval(val)
    assert (-p).eval(val) == -p.eval(val)


@settings(max_examples=60)
@given(polys(), polys(), valuations, st.sampled_from(VARS))
def test_substitution_lemma(p, q, val, v):
    # p[q/v] evaluated at val equals p evaluated at val[v := q(val)]
    moved = dict(val)
    moved[v] = q.eval(val)
    assert p.substitute(v, q).eval(val) == p.eval(moved)


@settings(max_examples=60)
@given(polys(max_degree=1), polys(max_degree=1), valuations)
def test_predicate_membership(a, b, val):
    ca, cb = LinConstraint(a), LinConstraint(b, GT)
    p = Predicate.of(ca, cb)
    assert p.holds(val) == (a.eval(val) >= 0 and b.eval(val) > 0)
    assert p.negate().holds(val) == (not p.holds(val))
    assert p.disj(Predicate.of(ca)).holds(val) == (p.holds(val) or a.eval(val) >= 0)


@settings(max_examples=40)
@given(polys())
def test_print_parse_round_trip(p):
    assert parse_poly(str(p)) == p


@settings(max_examples=40, deadline=None)
@given(polys(max_degree=1, max_terms=3), polys(max_degree=1, max_terms=3))
def test_sat_point_is_a_member(a, b):
    p = Predicate.of(LinConstraint(a), LinConstraint(b, GT))
    pt = sat_point(p)
    if pt != "empty":
        full = {v: pt.get(v, Fraction(0)) for v in VARS}
        assert p.holds(full)
    else:
        # a point of a nonempty set would violate this; probe a grid
        for x in range(-3, 4):
            for y in range(-3, 4):
                for z in range(-3, 4):
                    assert not p.holds({"x": x, "y": y, "z": z})
