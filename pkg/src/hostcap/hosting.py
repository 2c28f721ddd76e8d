"""Assembly of the hosting-capacity cone programs and state extraction.

Variable layout for a feeder with E edges and N nodes::

    [P_0..P_{E-1} | Q | l | v_0..v_{N-1} | pv_0..pv_{N-1} | p_sub]

The relaxed hosting program maximizes total PV injection (as minimize the
negative sum) subject to the linear DistFlow equations, PV bounds, the ANSI
voltage window on non-substation nodes, thermal limits, no reverse flow at
the substation, and one rotated cone v_i*l_ij >= P_ij^2 + Q_ij^2 per edge.
The loss-minimization variant replaces the objective with sum(r*l) and drops
the reverse-flow bound; it is the exactness contrast case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .branchflow import BranchFlowState, substation_export
from .cones import ConeProgram, ConeSolution, SolveOptions, solve
from .feeder import FeederModel


@dataclass(frozen=True)
class HostingProgramIndex:
    """Maps feeder quantities to cone-program variable indices.

    The substation carries no PV variable: a root injection never enters the
    branch-flow equations, so it would be an unbounded free ride in the
    objective.
    """

    n_edges: int
    n_nodes: int
    root: int

    def P(self, k):
        return k

    def Q(self, k):
        return self.n_edges + k

    def l(self, k):
        return 2 * self.n_edges + k

    def v(self, i):
        return 3 * self.n_edges + i

    def pv(self, i):
        if i == self.root:
            raise ValueError("the substation node has no PV variable")
        return 3 * self.n_edges + self.n_nodes + (i if i < self.root else i - 1)

    @property
    def psub(self):
        return 3 * self.n_edges + 2 * self.n_nodes - 1

    @property
    def n_vars(self):
        return 3 * self.n_edges + 2 * self.n_nodes


def _base_program(model: FeederModel, include_losses: bool) -> tuple[ConeProgram, HostingProgramIndex]:
    """Shared skeleton: DistFlow equalities, bounds (7)-(10); no cones yet.

    With include_losses=False every l variable is pinned to zero and the
    thermal limit is dropped, which yields the LinDistFlow linearization.
    """
    e, n = model.n_edges, model.n_nodes
    idx = HostingProgramIndex(e, n, model.root)
    prog = ConeProgram(idx.n_vars)

    for k in range(e):
        lbl = model.edge_label(k)
        prog.var_names[idx.P(k)] = "P[%s]" % lbl
        prog.var_names[idx.Q(k)] = "Q[%s]" % lbl
        prog.var_names[idx.l(k)] = "l[%s]" % lbl
    for i, node in enumerate(model.nodes):
        prog.var_names[idx.v(i)] = "v[%s]" % node.id
        if i != model.root:
            prog.var_names[idx.pv(i)] = "pv[%s]" % node.id
    prog.var_names[idx.psub] = "p_sub"

    r, x = model.r, model.x
    par, chi = model.parent_of_edge, model.child_of_edge

    # real / reactive balance and voltage drop, one row per edge
    for k in range(e):
        j = int(chi[k])
        down = model.out_edges[j]
        cols = [idx.P(k)] + [idx.P(kk) for kk in down] + [idx.l(k), idx.pv(j)]
        coefs = [1.0] + [-1.0] * len(down) + [-r[k], 1.0]
        prog.add_eq(cols, coefs, model.load_p[j])

        cols = [idx.Q(k)] + [idx.Q(kk) for kk in down] + [idx.l(k)]
        coefs = [1.0] + [-1.0] * len(down) + [-x[k]]
        prog.add_eq(cols, coefs, model.load_q[j])

        i = int(par[k])
        prog.add_eq(
            [idx.v(j), idx.v(i), idx.P(k), idx.Q(k), idx.l(k)],
            [1.0, -1.0, 2.0 * r[k], 2.0 * x[k], -(r[k] ** 2 + x[k] ** 2)],
            0.0)

    # substation export definition and boundary voltage
    root_out = model.out_edges[model.root]
    prog.add_eq([idx.psub] + [idx.P(k) for k in root_out],
                [1.0] + [-1.0] * len(root_out), 0.0)
    prog.set_bounds(idx.v(model.root), model.v_sub, model.v_sub)

    # voltage window and PV bounds on non-substation nodes
    for i in range(n):
        if i != model.root:
            prog.set_bounds(idx.v(i), model.v_min_sq, model.v_max_sq)
            prog.set_bounds(idx.pv(i), model.pv_lo[i], model.pv_hi[i])

    if include_losses:
        for k in range(e):
            prog.set_bounds(idx.l(k), 0.0, model.i_rated[k] ** 2)
    else:
        for k in range(e):
            prog.set_bounds(idx.l(k), 0.0, 0.0)

    return prog, idx


def build_relaxed_hosting(model: FeederModel) -> tuple[ConeProgram, HostingProgramIndex]:
    """Relaxed SOCP for maximum PV hosting (objective: -sum pv)."""
    prog, idx = _base_program(model, include_losses=True)
    for i in range(model.n_nodes):
        if i != model.root:
            prog.objective[idx.pv(i)] = -1.0
    prog.set_bounds(idx.psub, 0.0, np.inf)  # no reverse power flow
    for k in range(model.n_edges):
        prog.add_rsoc(idx.v(int(model.parent_of_edge[k])), idx.l(k), [idx.P(k), idx.Q(k)])
    return prog, idx


def build_loss_min(model: FeederModel) -> tuple[ConeProgram, HostingProgramIndex]:
    """Loss-minimization variant: min sum(r*l), reverse flow allowed.

    For this objective the relaxation is exact (solution on the cone
    surface), the counterpart of the hosting maximization being inexact.
    """
    prog, idx = _base_program(model, include_losses=True)
    for k in range(model.n_edges):
        prog.objective[idx.l(k)] = model.r[k]
    for k in range(model.n_edges):
        prog.add_rsoc(idx.v(int(model.parent_of_edge[k])), idx.l(k), [idx.P(k), idx.Q(k)])
    return prog, idx


def build_lindistflow(model: FeederModel) -> tuple[ConeProgram, HostingProgramIndex]:
    """Hosting LP with losses dropped (l pinned to 0): the warm-start problem."""
    prog, idx = _base_program(model, include_losses=False)
    for i in range(model.n_nodes):
        if i != model.root:
            prog.objective[idx.pv(i)] = -1.0
    prog.set_bounds(idx.psub, 0.0, np.inf)
    return prog, idx


def extract_state(sol: ConeSolution, idx: HostingProgramIndex, model: FeederModel,
                  psub_tol: float = 1e-8) -> BranchFlowState:
    """Map a solved program back to a BranchFlowState."""
    if sol.status != "optimal":
        raise ValueError("cannot extract state from a %s solution" % sol.status)
    x = sol.x
    e, n = model.n_edges, model.n_nodes
    state = BranchFlowState(
        P=np.array([x[idx.P(k)] for k in range(e)]),
        Q=np.array([x[idx.Q(k)] for k in range(e)]),
        l=np.array([x[idx.l(k)] for k in range(e)]),
        v=np.array([x[idx.v(i)] for i in range(n)]),
        p_pv=np.array([0.0 if i == model.root else x[idx.pv(i)] for i in range(n)]),
    )
    state.p_sub = substation_export(model, state.P)
    if abs(state.p_sub - x[idx.psub]) > psub_tol:
        raise ValueError(
            "substation export mismatch: recomputed %.12g vs program %.12g"
            % (state.p_sub, x[idx.psub]))
    return state


def lindistflow_init(model: FeederModel, opts: SolveOptions | None = None) -> BranchFlowState:
    """Initial point from the linearized hosting problem.

    Solves the LP with loss terms dropped, then back-fills squared currents
    from the quadratic equality so the starting point lies on the cone
    surface (its linear-balance residuals carry the neglected losses).
    """
    prog, idx = build_lindistflow(model)
    sol = solve(prog, opts)
    if sol.status == "infeasible":
        raise InfeasibleModelError(
            "linearized hosting problem infeasible: the voltage window cannot "
            "be met even with losses neglected")
    if sol.status != "optimal":
        raise RuntimeError("linearized init solve ended with status %r" % sol.status)
    state = extract_state(sol, idx, model)
    state.l = (state.P**2 + state.Q**2) / state.v[model.parent_of_edge]
    return state


class InfeasibleModelError(RuntimeError):
    """The feeder admits no operating point satisfying the constraints."""


def binding_constraints(model: FeederModel, s: BranchFlowState, atol: float = 1e-6) -> list:
    """Names of operating constraints active at a state.

    Checks voltage-upper, thermal, reverse-flow and pv-cap activity within
    atol (per-unit quantities, squared where the constraint is squared).
    """
    names = []
    others = [i for i in range(model.n_nodes) if i != model.root]
    if others and (model.v_max_sq - s.v[others]).min() <= atol:
        names.append("voltage-upper")
    if model.n_edges and (model.i_rated**2 - s.l).min() <= atol:
        names.append("thermal")
    if abs(substation_export(model, s.P)) <= atol:
        names.append("reverse-flow")
    if others and (model.pv_hi[others] - s.p_pv[others]).min() <= atol:
        names.append("pv-cap")
    return names
