"""Conic programs with linear objective, linear constraints, and rotated
second-order cones, solved through cvxopt's conelp with an independent
residual audit.

The audit recomputes every residual from the raw program data: a solution is
only reported optimal when it passes at the requested tolerances, regardless
of what the backend claims.  Rotated cones u*w >= |z|^2 are handed to the
backend as standard cones via ||(2z, u-w)|| <= u+w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers, spmatrix

INF = math.inf


@dataclass
class SolveOptions:
    feas_tol: float = 1e-8
    rel_gap_tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.rel_gap_tol > 0 and self.max_iter > 0):
            raise ValueError("solver tolerances and iteration cap must be positive")


@dataclass
class ConeSolution:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    x: np.ndarray | None
    obj: float | None
    max_primal_residual: float
    duality_gap_estimate: float


class ConeProgram:
    """min c.x  s.t.  eq rows, ineq rows (A x <= b), box bounds, rotated cones."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.objective = np.zeros(n_vars)
        self.var_names = ["x%d" % i for i in range(n_vars)]
        self.lower = np.full(n_vars, -INF)
        self.upper = np.full(n_vars, INF)
        # triplet storage (rows built incrementally)
        self._eq_rows: list = []
        self._eq_rhs: list = []
        self._ineq_rows: list = []
        self._ineq_rhs: list = []
        self.rsoc: list = []  # (u, w, (z...)) index triples

    # -- construction -------------------------------------------------------

    def _check_idx(self, idx):
        if not 0 <= idx < self.n_vars:
            raise IndexError("variable index %d out of range (n_vars=%d)" % (idx, self.n_vars))

    def add_eq(self, idxs, coefs, rhs):
        """Append one equality row sum(coefs * x[idxs]) == rhs."""
        idxs = list(idxs)
        for i in idxs:
            self._check_idx(i)
        self._eq_rows.append((idxs, [float(c) for c in coefs]))
        self._eq_rhs.append(float(rhs))

    def add_ineq(self, idxs, coefs, rhs):
        """Append one inequality row sum(coefs * x[idxs]) <= rhs."""
        idxs = list(idxs)
        for i in idxs:
            self._check_idx(i)
        self._ineq_rows.append((idxs, [float(c) for c in coefs]))
        self._ineq_rhs.append(float(rhs))

    def set_bounds(self, idx, lo=-INF, hi=INF):
        self._check_idx(idx)
        if lo > hi:
            raise ValueError("empty bound interval on %s" % self.var_names[idx])
        self.lower[idx] = lo
        self.upper[idx] = hi

    def add_rsoc(self, u, w, z):
        """u*w >= sum(z_k^2), u >= 0, w >= 0."""
        z = tuple(z)
        for i in (u, w, *z):
            self._check_idx(i)
        if u == w:
            raise ValueError("rotated cone needs distinct u and w variables")
        self.rsoc.append((u, w, z))

    @property
    def n_eq(self):
        return len(self._eq_rows)

    @property
    def n_ineq(self):
        return len(self._ineq_rows)

    # -- views --------------------------------------------------------------

    def eq_matrix(self):
        return _to_arrays(self._eq_rows, self._eq_rhs, self.n_vars)

    def ineq_matrix(self):
        return _to_arrays(self._ineq_rows, self._ineq_rhs, self.n_vars)

    def dump(self) -> str:
        """Plain-text rendering, one constraint per line, for cross-checking."""
        def term(c, i):
            return "%+g*%s" % (c, self.var_names[i])

        lines = ["min " + " ".join(
            term(c, i) for i, c in enumerate(self.objective) if c != 0.0)]
        for (idxs, coefs), rhs in zip(self._eq_rows, self._eq_rhs):
            lines.append(" ".join(term(c, i) for i, c in zip(idxs, coefs)) + " == %g" % rhs)
        for (idxs, coefs), rhs in zip(self._ineq_rows, self._ineq_rhs):
            lines.append(" ".join(term(c, i) for i, c in zip(idxs, coefs)) + " <= %g" % rhs)
        for i in range(self.n_vars):
            lo, hi = self.lower[i], self.upper[i]
            if lo == hi:
                lines.append("%s == %g" % (self.var_names[i], lo))
            else:
                if lo > -INF:
                    lines.append("%s >= %g" % (self.var_names[i], lo))
                if hi < INF:
                    lines.append("%s <= %g" % (self.var_names[i], hi))
        for u, w, z in self.rsoc:
            lines.append("rsoc: %s*%s >= %s" % (
                self.var_names[u], self.var_names[w],
                " + ".join("%s^2" % self.var_names[k] for k in z)))
        return "\n".join(lines)

    # -- audit ----------------------------------------------------------

    def residuals(self, x: np.ndarray):
        """Worst violation per constraint family, recomputed from raw data."""
        a_eq, b_eq = self.eq_matrix()
        a_in, b_in = self.ineq_matrix()
        out = {"eq": 0.0, "ineq": 0.0, "bounds": 0.0, "cone": 0.0}
        if b_eq.size:
            out["eq"] = float(np.abs(a_eq @ x - b_eq).max())
        if b_in.size:
            out["ineq"] = float(np.maximum(a_in @ x - b_in, 0.0).max())
        lo_viol = np.where(np.isfinite(self.lower), self.lower - x, 0.0)
        hi_viol = np.where(np.isfinite(self.upper), x - self.upper, 0.0)
        if x.size:
            out["bounds"] = float(max(lo_viol.max(), hi_viol.max(), 0.0))
        for u, w, z in self.rsoc:
            zz = sum(x[k] ** 2 for k in z)
            out["cone"] = max(out["cone"], zz - x[u] * x[w], -x[u], -x[w])
        out["cone"] = float(max(out["cone"], 0.0))
        return out

    def max_residual(self, x: np.ndarray) -> float:
        return max(self.residuals(x).values())


def _to_arrays(rows, rhs, n_vars):
    a = np.zeros((len(rows), n_vars))
    for row, (idxs, coefs) in enumerate(rows):
        for i, c in zip(idxs, coefs):
            a[row, i] += c
    return a, np.array(rhs, dtype=float)


def solve(prog: ConeProgram, opts: SolveOptions | None = None) -> ConeSolution:
    """Solve a ConeProgram; 'optimal' is only returned after the audit passes."""
    if opts is None:
        opts = SolveOptions()

    c = matrix(prog.objective)

    # equalities: fixed bounds (lo == hi) join the eq block to keep an interior
    eq_i, eq_j, eq_v = [], [], []
    eq_rhs = []
    for row, (idxs, coefs) in enumerate(prog._eq_rows):
        for i, co in zip(idxs, coefs):
            eq_i.append(row)
            eq_j.append(i)
            eq_v.append(co)
    eq_rhs.extend(prog._eq_rhs)
    for i in range(prog.n_vars):
        if prog.lower[i] == prog.upper[i]:
            eq_i.append(len(eq_rhs))
            eq_j.append(i)
            eq_v.append(1.0)
            eq_rhs.append(prog.lower[i])

    # linear inequalities + finite non-fixed bounds form the l-block of G
    g_i, g_j, g_v = [], [], []
    h = []
    for row, (idxs, coefs) in enumerate(prog._ineq_rows):
        for i, co in zip(idxs, coefs):
            g_i.append(row)
            g_j.append(i)
            g_v.append(co)
    h.extend(prog._ineq_rhs)
    for i in range(prog.n_vars):
        lo, hi = prog.lower[i], prog.upper[i]
        if lo == hi:
            continue
        if lo > -INF:
            g_i.append(len(h))
            g_j.append(i)
            g_v.append(-1.0)
            h.append(-lo)
        if hi < INF:
            g_i.append(len(h))
            g_j.append(i)
            g_v.append(1.0)
            h.append(hi)
    n_lin = len(h)

    # rotated cones as standard SOC blocks s = (u+w, 2z, u-w)
    dims = {"l": n_lin, "q": [], "s": []}
    for u, w, z in prog.rsoc:
        base = len(h)
        dims["q"].append(2 + len(z))
        g_i += [base, base]
        g_j += [u, w]
        g_v += [-1.0, -1.0]
        h.append(0.0)
        for offset, k in enumerate(z, start=1):
            g_i.append(base + offset)
            g_j.append(k)
            g_v.append(-2.0)
            h.append(0.0)
        g_i += [base + 1 + len(z)] * 2
        g_j += [u, w]
        g_v += [-1.0, 1.0]
        h.append(0.0)

    if not h:  # conelp wants a nonempty cone block; add a vacuous row
        g_i.append(0)
        g_j.append(0)
        g_v.append(0.0)
        h.append(1.0)
        dims["l"] = 1

    G = spmatrix(g_v, g_i, g_j, size=(len(h), prog.n_vars))
    A = spmatrix(eq_v, eq_i, eq_j, size=(len(eq_rhs), prog.n_vars))

    # target one decade tighter than requested; the audit (not the backend
    # report) decides whether the request was met
    options = {
        "show_progress": False,
        "maxiters": opts.max_iter,
        "abstol": max(1e-12, opts.rel_gap_tol * 0.1),
        "reltol": max(1e-12, opts.rel_gap_tol * 0.1),
        "feastol": max(1e-12, opts.feas_tol * 0.1),
        "refinement": 2,
    }
    try:
        raw = solvers.conelp(c, G, matrix(np.array(h)), dims,
                             A=A, b=matrix(np.array(eq_rhs)), options=options)
    except (ValueError, ArithmeticError) as err:
        raise RuntimeError("conic backend failed: %s" % err) from err

    return _interpret(prog, opts, raw)


def _interpret(prog: ConeProgram, opts: SolveOptions, raw) -> ConeSolution:
    status = raw["status"]
    if status == "primal infeasible":
        return ConeSolution("infeasible", None, None, INF, INF)
    if status == "dual infeasible":
        return ConeSolution("unbounded", None, None, INF, INF)

    if raw["x"] is None:
        return ConeSolution("iteration-limit", None, None, INF, INF)
    x = np.array(raw["x"]).ravel()
    obj = float(prog.objective @ x)
    resid = prog.max_residual(x)
    gap = raw.get("gap")
    gap = INF if gap is None else float(gap)

    audited = resid <= opts.feas_tol and gap <= opts.rel_gap_tol * (1.0 + abs(obj))
    dinf = raw.get("dual infeasibility")
    certified = dinf is not None and float(dinf) <= opts.feas_tol
    # the audit, not the backend flag, decides optimality; an 'unknown' iterate
    # that satisfies both the residual and the gap request is accepted
    if audited and (status == "optimal" or (status == "unknown" and certified)):
        return ConeSolution("optimal", x, obj, resid, gap)
    return ConeSolution("iteration-limit", x, obj, resid, gap)
