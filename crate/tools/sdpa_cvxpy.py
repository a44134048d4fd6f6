"""Solve an SDPA `.dat-s` file with cvxpy as an independent cross-check.

The file is read as SDPA's dual form `max F0.Y s.t. Fi.Y = ci, Y PSD`.
Negative block sizes are diagonal (LP) blocks.

    python3 tools/sdpa_cvxpy.py problem.dat-s [--feasibility] [--solver CLARABEL]
"""

import argparse
import re

import cvxpy as cp
import numpy as np


def read_sdpa(path):
    lines = []
    for raw in open(path):
        s = raw.strip()
        if not s or s[0] in "\"*":
            continue
        lines.append(re.sub(r"[,(){}]", " ", s).split())
    m = int(lines[0][0])
    nblocks = int(lines[1][0])
    dims = [int(x) for x in lines[2][:nblocks]]
    c = np.array([float(x) for x in lines[3][:m]])
    mats = [[{} for _ in dims] for _ in range(m + 1)]
    for t in lines[4:]:
        k, b, i, j, v = int(t[0]), int(t[1]) - 1, int(t[2]) - 1, int(t[3]) - 1, float(t[4])
        mats[k][b][(i, j)] = v
    return m, dims, c, mats


def inner(entries, Y, diag):
    terms = []
    for (i, j), v in entries.items():
        if diag:
            terms.append(v * Y[i])
        elif i == j:
            terms.append(v * Y[i, i])
        else:
            terms.append(2 * v * Y[i, j])
    return cp.sum(cp.hstack(terms)) if terms else 0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("file")
    ap.add_argument("--feasibility", action="store_true")
    ap.add_argument("--solver", default="CLARABEL")
    ap.add_argument("--margin", action="store_true", help="maximize the smallest eigenvalue over all blocks")
    args = ap.parse_args()
    m, dims, c, mats = read_sdpa(args.file)
    Ys = [cp.Variable(-d, nonneg=True) if d < 0 else cp.Variable((d, d), PSD=True) for d in dims]
    obj = sum(inner(mats[0][b], Ys[b], dims[b] < 0) for b in range(len(dims)))
    cons = []
    for k in range(1, m + 1):
        lhs = sum(inner(mats[k][b], Ys[b], dims[b] < 0) for b in range(len(dims)))
        cons.append(lhs == c[k - 1])
    if args.margin:
        t = cp.Variable()
        for d, Y in zip(dims, Ys):
            cons.append((Y >= t) if d < 0 else (Y - t * np.eye(d) >> 0))
            cons.append(cp.trace(Y) <= 1e3 if d > 0 else cp.sum(Y) <= 1e3)
        obj = t
    prob = cp.Problem(cp.Maximize(0 if args.feasibility else obj), cons)
    prob.solve(solver=args.solver)
    print(f"status {prob.status}")
    if prob.value is not None and np.isfinite(prob.value):
        print(f"objective {prob.value:.10g}")


if __name__ == "__main__":
    main()
