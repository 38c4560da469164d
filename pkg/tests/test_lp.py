from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from martcert.constraints import NNREP, Affine, CertSpec, Implication
from martcert.expr import GE, LinConstraint, PolyExpr, parse_poly
from martcert.lp import (MAX, MIN, LpProblem, check_strong_duality, farkas_transform,
                         simplex_solve)
from martcert.synth import synthesize_linear

from conftest import bench

scipy_opt = pytest.importorskip("scipy.optimize")


def lin(text):
    return LinConstraint(parse_poly(text), GE)


def affine(**parts):
    """Consequent sum(u * expr) + const; key "_" is the constant part."""
    return Affine({(None if k == "_" else k): parse_poly(v) for k, v in parts.items()})


def test_tiny_lp():
    p = LpProblem()
    p.add_var("x")
    p.add_var("y")
    p.add_row({"x": 1, "y": 1}, "<=", 4)
    p.add_row({"x": 1, "y": 3}, "<=", 6)
    p.set_objective({"x": 3, "y": 2}, MAX)
    s = simplex_solve(p)
    assert s.status == "optimal" and s.objective == 12
    assert check_strong_duality(p, s)


def test_fractional_optimum():
    p = LpProblem()
    p.add_var("x")
    p.add_var("y")
    p.add_row({"x": 3, "y": 1}, ">=", 2)
    p.add_row({"x": 1, "y": 3}, ">=", 2)
    p.set_objective({"x": 1, "y": 1}, MIN)
    s = simplex_solve(p)
    assert s.objective == 1 and s.value("x") == Fraction(1, 2)


def test_infeasible_and_unbounded():
    p = LpProblem()
    p.add_var("x")
    p.add_row({"x": 1}, "<=", -1)
    assert simplex_solve(p).status == "infeasible"
    q = LpProblem()
    q.add_var("x", free=True)
    q.set_objective({"x": 1}, MIN)
    assert simplex_solve(q).status == "unbounded"


@pytest.mark.parametrize("rule", ["bland", "dantzig"])
def test_degenerate_cycling_example_terminates(rule):
    # Beale's example cycles under the textbook Dantzig rule without anti-cycling
    p = LpProblem()
    for v in ("x4", "x5", "x6", "x7"):
        p.add_var(v)
    p.add_row({"x4": Fraction(1, 4), "x5": -60, "x6": Fraction(-1, 25), "x7": 9}, "<=", 0)
    p.add_row({"x4": Fraction(1, 2), "x5": -90, "x6": Fraction(-1, 50), "x7": 3}, "<=", 0)
    p.add_row({"x6": 1}, "<=", 1)
    p.set_objective({"x4": Fraction(-3, 4), "x5": 150, "x6": Fraction(-1, 50), "x7": 6}, MIN)
    s = simplex_solve(p, rule=rule, max_pivots=1000)
    assert s.status == "optimal" and s.objective == Fraction(-1, 20)


def test_farkas_box_example():
    # x >= 0 and 10 - x >= 0  =>  a*x + b >= 0, minimise b + 5a
    imp = Implication((lin("x"), lin("10 - x")), affine(a="x", b="1"))
    fr = farkas_transform([imp], {"a": 1, "b": 1}, MIN)
    fr.problem.add_row({"b": 1}, ">=", 0)
    fr.problem.add_row({"a": 1, "b": 1}, ">=", 0)
    s = simplex_solve(fr.problem)
    assert s.status == "optimal"
    a, b = s.value("a"), s.value("b")
    # a*x + b >= 0 on [0, 10] iff b >= 0 and 10a + b >= 0
    assert b >= 0 and 10 * a + b >= 0


def test_farkas_true_antecedent():
    # true => a*x + b >= 0 forces a = 0, b >= 0
    imp = Implication((), affine(a="x", b="1"))
    fr = farkas_transform([imp], {"b": 1}, MIN)
    s = simplex_solve(fr.problem)
    assert s.value("a") == 0 and s.objective == 0


def test_empty_antecedent_dropped():
    imp = Implication((lin("x - 1"), lin("-x")), affine(a="x", _="-5"))
    fr = farkas_transform([imp])
    assert fr.dropped == [0]
    strict = Implication((LinConstraint(parse_poly("x"), ">"), lin("-x")), affine(_="-1"))
    assert farkas_transform([strict]).dropped == [0]


def test_random_walk_linear_bound():
    res = synthesize_linear(bench("d1.json"), CertSpec(NNREP))
    assert res.status == "found" and res.objective == Fraction(46, 91)


boxes = st.tuples(st.integers(-5, 5), st.integers(0, 6))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-6, 6)), min_size=1, max_size=3),
       st.tuples(st.integers(-5, 5), st.integers(1, 6)), st.tuples(st.integers(-5, 5), st.integers(1, 6)),
       st.integers(-3, 3), st.integers(-3, 3))
def test_farkas_is_sound(extra, bx, by, wa, wb):
    """Every LP solution gives a consequent that is nonnegative on the antecedent."""
    (x0, dx), (y0, dy) = bx, by
    ante = [lin(f"x - {x0}"), lin(f"{x0 + dx} - x"), lin(f"y - {y0}"), lin(f"{y0 + dy} - y")]
    ante += [lin(f"{a}*x + {b}*y + {c}") for a, b, c in extra]
    imp = Implication(tuple(ante), affine(a="x", b="y", c="1"))
    fr = farkas_transform([imp], {"a": wa, "b": wb, "c": 1}, MIN)
    for u in ("a", "b"):
        fr.problem.add_row({u: 1}, "<=", 3)
        fr.problem.add_row({u: 1}, ">=", -3)
    s = simplex_solve(fr.problem)
    if fr.dropped or s.status != "optimal":
        return
    f = PolyExpr.linear({"x": s.value("a"), "y": s.value("b")}, s.value("c"))
    for i in range(dx + 1):
        for j in range(dy + 1):
            for fx in (0, Fraction(1, 3)):
                pt = {"x": x0 + i - fx if i else x0, "y": y0 + j}
                if all(c.holds(pt) for c in ante):
                    assert f.eval(pt) >= 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_optimum_matches_reference_and_duality(n, m, data):
    coef = st.integers(-5, 5)
    A = [[data.draw(coef) for _ in range(n)] for _ in range(m)]
    b = [data.draw(st.integers(0, 10)) for _ in range(m)]
    c = [data.draw(coef) for _ in range(n)]
    p = LpProblem()
    names = [f"x{j}" for j in range(n)]
    for v in names:
        p.add_var(v)
    for row, rhs in zip(A, b):
        p.add_row(dict(zip(names, row)), "<=", rhs)
    for v in names:
        p.add_row({v: 1}, "<=", 10)
    p.set_objective(dict(zip(names, c)), MAX)
    s = simplex_solve(p, rule="dantzig")
    ref = scipy_opt.linprog([-x for x in c], A_ub=A, b_ub=b, bounds=[(0, 10)] * n, method="highs")
    assert s.status == "optimal" and ref.status == 0
    assert float(s.objective) == pytest.approx(-ref.fun, abs=1e-7)
    assert p.satisfied_by(s.assignment)
    assert check_strong_duality(p, s)
