#!/usr/bin/env python3
"""Solve an SDPA sparse file with cvxpy and write an SDPA-style result.

usage: sdpa_cvxpy_solver.py INPUT.dat-s OUTPUT [--solver CLARABEL]

Solves  max F0 . Y  s.t.  Fk . Y = c_k,  Y psd (block diagonal).
Point MARTCERT_SDP_SOLVER at this script to enable polynomial synthesis.
"""

import argparse
import sys

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from martcert.sdp import read_sdpa, write_solution


def build(p):
    m = len(p.rows)
    blocks, flat = [], []
    for s in p.block_sizes:
        if s > 0:
            Y = cp.Variable((s, s), symmetric=True)
            blocks.append(Y)
            flat.append(cp.vec(Y, order="F"))
        else:
            y = cp.Variable(-s, nonneg=True)
            blocks.append(y)
            flat.append(y)

    def coeff_matrix(entries_by_row, nrows):
        mats = []
        for b, s in enumerate(p.block_sizes):
            n = s * s if s > 0 else -s
            r, c, v = [], [], []
            for k, row in enumerate(entries_by_row):
                for (bb, i, j), val in row.get(b, {}).items():
                    if s > 0:
                        r.append(k), c.append(i + j * s), v.append(val)
                        if i != j:
                            r.append(k), c.append(j + i * s), v.append(val)
                    else:
                        r.append(k), c.append(i), v.append(val)
            mats.append(sp.csr_matrix((v, (r, c)), shape=(nrows, n)))
        return mats

    def by_block(row):
        out = {}
        for (b, i, j), v in row.items():
            out.setdefault(b, {})[(b, i, j)] = v
        return out

    A = coeff_matrix([by_block(r) for r in p.rows], m)
    C = coeff_matrix([by_block(p.objective)], 1)
    lhs = sum(a @ f for a, f in zip(A, flat))
    obj = sum(c @ f for c, f in zip(C, flat))
    cons = [lhs == np.array(p.rhs)] if m else []
    cons += [Y >> 0 for Y, s in zip(blocks, p.block_sizes) if s > 0]
    return blocks, cp.Problem(cp.Maximize(obj), cons)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--solver", default="CLARABEL")
    args = ap.parse_args(argv)
    p = read_sdpa(args.input)
    blocks, prob = build(p)
    tight = {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10}
    attempts = [tight, {}] if args.solver == "CLARABEL" else [{}]
    for opts in attempts:
        try:
            prob.solve(solver=args.solver, **opts)
            break
        except cp.error.SolverError as e:
            err = e
    else:
        print(f"solver error: {err}", file=sys.stderr)
        return 1
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        write_solution(args.output, [np.zeros((abs(s), abs(s))) for s in p.block_sizes],
                       p.block_sizes, float("nan"), "pINF")
        return 0
    if prob.status == "unbounded":
        write_solution(args.output, [np.zeros((abs(s), abs(s))) for s in p.block_sizes],
                       p.block_sizes, float("inf"), "dUNBD")
        return 0
    vals = [np.atleast_1d(b.value) for b in blocks]
    write_solution(args.output, vals, p.block_sizes, float(prob.value),
                   "pdOPT" if prob.status == "optimal" else "pdFEAS")
    return 0


if __name__ == "__main__":
    sys.exit(main())
