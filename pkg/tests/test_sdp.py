import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from martcert.constraints import NNREP, Affine, CertSpec, Implication, gen_implications, \
    init_objective, make_template
from martcert.expr import GE, LinConstraint, PolyExpr, parse_poly
from martcert.sdp import (UNAVAILABLE, SdpError, SdpProblem, _dedupe, default_sos_degree,
                          export_sdpa, parse_solution, read_sdpa, run_external_sdp,
                          schmudgen_transform, write_solution)
from martcert.synth import SynthConfig, synthesize

from conftest import bench, needs_solver, solver_cmd


def lin(text):
    return LinConstraint(parse_poly(text), GE)


def const_imp(text, ante=()):
    return Implication(tuple(ante), Affine({None: parse_poly(text)}))


def a1_problem(degree=2):
    g = bench("a1.app", {"p1": Fraction(1, 5), "p2": Fraction(2, 5)})
    t = make_template(g, degree)
    imps = gen_implications(g, t, CertSpec(NNREP))
    coeffs, const = init_objective(g, t)
    return imps, schmudgen_transform(imps, objective=coeffs, sense="min", objective_constant=const)


def test_single_block_export(tmp_path):
    p = schmudgen_transform([const_imp("x^2 + 2*x + 1")], check_empty=False)
    assert p.block_sizes == [2]
    path = tmp_path / "p.dat-s"
    export_sdpa(p, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith('"')
    assert lines[1] == "3" and lines[2] == "1" and lines[3] == "2"


def test_free_scalar_becomes_two_diagonal_blocks():
    imp = Implication((), Affine({"u": PolyExpr.const(1), None: parse_poly("x^2")}))
    p = schmudgen_transform([imp])
    bp, bm = p.scalars["u"]
    assert p.block_sizes[bp] == -1 and p.block_sizes[bm] == -1


def test_block_census_counts_subsets():
    imps, p = a1_problem(2)
    k = default_sos_degree(imps)
    census = p.census()
    for n, imp in enumerate(imps):
        if n not in census:
            continue
        m = len(_dedupe(imp.antecedent))
        # every literal is linear, so a subset of size r has degree r
        assert census[n] == sum(math.comb(m, r) for r in range(min(m, 2 * k) + 1))
        assert census[n] <= 2 ** m


def test_degree_too_small_names_minimum():
    with pytest.raises(SdpError, match="minimum feasible is 2"):
        schmudgen_transform([const_imp("x^4")], sos_degree=1)


def test_literal_cap():
    ante = [lin(f"x + {i}") for i in range(5)]
    with pytest.raises(SdpError, match="cap"):
        schmudgen_transform([const_imp("x", ante)], max_literals=4, check_empty=False)


def test_export_round_trip_is_bit_identical(tmp_path):
    _, p = a1_problem(2)
    a, b = tmp_path / "a.dat-s", tmp_path / "b.dat-s"
    export_sdpa(p, a)
    q = read_sdpa(a)
    export_sdpa(q, b)
    assert a.read_bytes() == b.read_bytes()
    assert p.same_data(q)


def test_missing_solver_is_reported(monkeypatch):
    monkeypatch.delenv("MARTCERT_SDP_SOLVER", raising=False)
    p = schmudgen_transform([const_imp("x^2 + 1")])
    assert run_external_sdp(p, None).status == UNAVAILABLE
    assert run_external_sdp(p, "/nonexistent/solver").status == UNAVAILABLE
    g = bench("a1.app", {"p1": Fraction(1, 5), "p2": Fraction(2, 5)})
    res = synthesize(g, CertSpec(NNREP), SynthConfig(degree=2))
    assert res.status == "skipped" and res.message == UNAVAILABLE


def test_solution_validation_rejects_bad_gram(tmp_path):
    p = schmudgen_transform([const_imp("x^2 + 2*x + 1")])
    out = tmp_path / "sol"
    write_solution(out, [np.array([[1.0, 1.0], [1.0, 1.0]])], p.block_sizes, 0.0)
    assert parse_solution(p, out.read_text()).status == "optimal"
    write_solution(out, [np.array([[1.0, 2.0], [2.0, 1.0]])], p.block_sizes, 0.0)
    assert parse_solution(p, out.read_text()).status == "rejected"


@needs_solver
def test_perfect_square():
    p = schmudgen_transform([const_imp("x^2 + 2*x + 1")])
    r = run_external_sdp(p, solver_cmd())
    assert r.status == "optimal"
    assert np.allclose(r.blocks[0], [[1, 1], [1, 1]], atol=1e-6)


@needs_solver
def test_negative_constant_infeasible():
    r = run_external_sdp(schmudgen_transform([const_imp("-1")]), solver_cmd())
    assert r.status == "infeasible"


@needs_solver
def test_best_lower_bound_on_interval():
    # max c s.t. x >= 0, 1 - x >= 0  =>  x^2 - x - c >= 0 ; optimum c = -1/4
    imp = Implication((lin("x"), lin("1 - x")),
                      Affine({"c": PolyExpr.const(-1), None: parse_poly("x^2 - x")}))
    p = schmudgen_transform([imp], sos_degree=1, objective={"c": 1}, sense="max")
    r = run_external_sdp(p, solver_cmd())
    assert r.status == "optimal"
    assert r.assignment["c"] == pytest.approx(-0.25, abs=1e-5)


@needs_solver
def test_coefficients_reconstruct_from_grams():
    imps, p = a1_problem(2)
    r = run_external_sdp(p, solver_cmd())
    assert r.status == "optimal"
    assert r.residuals["max_row_residual"] < 1e-6
    assert r.residuals["min_eigenvalue"] > -1e-6
