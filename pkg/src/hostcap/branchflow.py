"""DistFlow evaluation on a radial feeder: residuals, feasibility gap,
forward/backward sweep, angle recovery, and small-instance hosting oracles.

Sign convention is consumption-positive: the real-power balance on edge
(i, j) reads  P_ij = sum_k P_jk + r_ij*l_ij + (load_j - pv_j),  so adding PV
at a node reduces the upstream flow and the substation import.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .feeder import FeederModel

SWEEP_STEP_TOL = 1e-12
SWEEP_MAX_ITER = 200


class SweepDivergence(RuntimeError):
    """Fixed-point sweep failed to converge (collapsed or infeasible point)."""

    def __init__(self, message, last_change=None):
        super().__init__(message)
        self.last_change = last_change


class AngleRecoveryError(ValueError):
    """State is not on the cone surface; voltage angles are undefined."""


@dataclass
class BranchFlowState:
    """One full power-flow point over a feeder.

    P, Q, l are per-edge sending-end real/reactive flow and squared current;
    v is per-node squared voltage; p_pv per-node PV injection. All per-unit.
    """

    P: np.ndarray
    Q: np.ndarray
    l: np.ndarray
    v: np.ndarray
    p_pv: np.ndarray
    p_sub: float = 0.0

    def copy(self) -> "BranchFlowState":
        return BranchFlowState(self.P.copy(), self.Q.copy(), self.l.copy(),
                               self.v.copy(), self.p_pv.copy(), self.p_sub)


def substation_export(model: FeederModel, P: np.ndarray) -> float:
    """P_sub: total sending-end real flow on edges leaving the root."""
    return float(sum(P[k] for k in model.out_edges[model.root]))


def zero_state(model: FeederModel) -> BranchFlowState:
    e, n = model.n_edges, model.n_nodes
    v = np.full(n, model.v_sub)
    return BranchFlowState(np.zeros(e), np.zeros(e), np.zeros(e), v, np.zeros(n), 0.0)


@dataclass
class FlowResiduals:
    """Residuals of the three linear DistFlow equations, one entry per edge."""

    p: np.ndarray  # P_ij - sum P_jk - r*l - (load_j - pv_j)
    q: np.ndarray  # Q_ij - sum Q_jk - x*l - q_load_j
    v: np.ndarray  # v_j - v_i + 2(rP + xQ) - (r^2+x^2) l

    def max_abs(self) -> float:
        if self.p.size == 0:
            return 0.0
        return float(max(np.abs(self.p).max(), np.abs(self.q).max(), np.abs(self.v).max()))


def flow_residuals(model: FeederModel, s: BranchFlowState) -> FlowResiduals:
    """Evaluate the linear DistFlow equations at a state."""
    _check_dims(model, s)
    r, x = model.r, model.x
    par, chi = model.parent_of_edge, model.child_of_edge

    down = np.zeros((2, model.n_edges))  # summed child flows per edge
    for k in range(model.n_edges):
        for kk in model.out_edges[chi[k]]:
            down[0, k] += s.P[kk]
            down[1, k] += s.Q[kk]

    res_p = s.P - down[0] - r * s.l - (model.load_p[chi] - s.p_pv[chi])
    res_q = s.Q - down[1] - x * s.l - model.load_q[chi]
    res_v = s.v[chi] - s.v[par] + 2.0 * (r * s.P + x * s.Q) - (r**2 + x**2) * s.l
    return FlowResiduals(res_p, res_q, res_v)


@dataclass
class GapVector:
    """Per-edge cone feasibility gap e_ij = P^2 + Q^2 - v_i*l_ij."""

    e: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.e).max()) if self.e.size else 0.0

    @property
    def min(self) -> float:
        return float(self.e.min()) if self.e.size else 0.0

    @property
    def argmax_abs(self) -> int:
        return int(np.abs(self.e).argmax()) if self.e.size else -1


def feasibility_gap(model: FeederModel, s: BranchFlowState) -> GapVector:
    """Distance from the quadratic equality; negative inside the relaxed cone."""
    _check_dims(model, s)
    e = s.P**2 + s.Q**2 - s.v[model.parent_of_edge] * s.l
    return GapVector(e)


def power_flow_sweep(model: FeederModel, p_pv=None) -> BranchFlowState:
    """Exact DistFlow solution by backward/forward sweep fixed point.

    Backward pass accumulates P, Q toward the root using the current
    squared-current estimates; forward pass propagates voltages from the
    substation; squared currents are then refreshed from the quadratic
    equality. Converges (step < 1e-12) well inside the tolerances this
    oracle is used to certify.
    """
    if p_pv is None:
        p_pv = np.zeros(model.n_nodes)
    p_pv = np.asarray(p_pv, dtype=float)
    if p_pv.shape != (model.n_nodes,):
        raise ValueError("p_pv must have one entry per node")

    r, x = model.r, model.x
    par, chi = model.parent_of_edge, model.child_of_edge
    down_order = model.edge_order_downstream
    up_order = down_order[::-1]
    p_net = model.load_p - p_pv
    q_net = model.load_q.copy()

    s = zero_state(model)
    s.p_pv = p_pv.copy()
    for it in range(SWEEP_MAX_ITER):
        prev_P, prev_Q = s.P.copy(), s.Q.copy()
        prev_l, prev_v = s.l.copy(), s.v.copy()

        for k in up_order:  # leaves first
            j = chi[k]
            s.P[k] = p_net[j] + r[k] * s.l[k] + sum(s.P[kk] for kk in model.out_edges[j])
            s.Q[k] = q_net[j] + x[k] * s.l[k] + sum(s.Q[kk] for kk in model.out_edges[j])
        s.v[model.root] = model.v_sub
        for k in down_order:  # root outward
            i, j = par[k], chi[k]
            s.v[j] = s.v[i] - 2.0 * (r[k] * s.P[k] + x[k] * s.Q[k]) + (r[k]**2 + x[k]**2) * s.l[k]
        if np.any(s.v <= 0):
            raise SweepDivergence("voltage collapsed below zero during sweep")
        s.l = (s.P**2 + s.Q**2) / s.v[par]

        change = max(
            _max_abs(s.P - prev_P), _max_abs(s.Q - prev_Q),
            _max_abs(s.l - prev_l), _max_abs(s.v - prev_v))
        if change < SWEEP_STEP_TOL:
            s.p_sub = substation_export(model, s.P)
            return s

    resid = flow_residuals(model, s).max_abs()
    raise SweepDivergence(
        "sweep did not converge in %d iterations (last step %.3e, residual %.3e); "
        "operating point is infeasible or near voltage collapse"
        % (SWEEP_MAX_ITER, change, resid), last_change=change)


def recover_angles(model: FeederModel, s: BranchFlowState, tol: float = 1e-8) -> np.ndarray:
    """Per-node voltage angles (radians, root = 0) from an exact state.

    Uses the branch-flow relation V_i * conj(V_j) = v_i - conj(z_ij) * S_ij,
    which pins the angle difference across each edge once the state sits on
    the cone surface.
    """
    gap = feasibility_gap(model, s)
    resid = flow_residuals(model, s)
    worst = max(gap.max_abs, resid.max_abs())
    if worst > tol:
        raise AngleRecoveryError(
            "state not on cone surface (max violation %.3e > %.1e); "
            "angles are undefined for relaxed interior points" % (worst, tol))

    theta = np.zeros(model.n_nodes)
    for k in model.edge_order_downstream:
        i, j = model.parent_of_edge[k], model.child_of_edge[k]
        z = complex(model.r[k], model.x[k])
        s_ij = complex(s.P[k], s.Q[k])
        theta[j] = theta[i] - np.angle(s.v[i] - z.conjugate() * s_ij)
    return theta


# ---------------------------------------------------------------------------
# small-instance hosting oracles
# ---------------------------------------------------------------------------

OPERATING_TOL = 1e-9  # slack when classifying a swept point as feasible


def check_operating_limits(model: FeederModel, s: BranchFlowState, tol: float = OPERATING_TOL):
    """Violations of voltage window, thermal ratings and no-reverse-flow.

    Returns a dict of constraint name -> worst violation (only entries > tol).
    Voltage is checked on squared magnitudes at non-substation nodes.
    """
    bad = {}
    others = np.arange(model.n_nodes) != model.root
    v = s.v[others]
    if v.size:
        over = float((v - model.v_max_sq).max())
        under = float((model.v_min_sq - v).max())
        if over > tol:
            bad["voltage-upper"] = over
        if under > tol:
            bad["voltage-lower"] = under
    if model.n_edges:
        thermal = float((s.l - model.i_rated**2).max())
        if thermal > tol:
            bad["thermal"] = thermal
    p_sub = substation_export(model, s.P)
    if -p_sub > tol:
        bad["reverse-flow"] = -p_sub
    pv_over = float((s.p_pv - model.pv_hi).max()) if model.n_nodes else 0.0
    pv_under = float((model.pv_lo - s.p_pv).max()) if model.n_nodes else 0.0
    if pv_over > tol:
        bad["pv-cap"] = pv_over
    if pv_under > tol:
        bad["pv-floor"] = pv_under
    return bad


def brute_force_hosting(model: FeederModel, grid_step: float = 1e-3):
    """Exhaustive grid search for hosting capacity on tiny feeders.

    Every candidate injection vector on the grid is validated with the exact
    sweep plus operating limits; returns (best total pu, injection vector).
    Guarded to <= 4 nodes -- the grid explodes combinatorially beyond that.
    """
    if model.n_nodes > 4:
        raise ValueError("brute force oracle is limited to feeders with <= 4 nodes")
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")

    axes = []
    for i in range(model.n_nodes):
        lo, hi = model.pv_lo[i], model.pv_hi[i]
        pts = np.arange(lo, hi + grid_step / 2, grid_step)
        if pts.size == 0 or pts[-1] < hi - 1e-15:
            pts = np.append(pts, hi)
        axes.append(pts)

    best_total = -math.inf
    best = None
    for combo in itertools.product(*axes):
        p_pv = np.array(combo)
        try:
            s = power_flow_sweep(model, p_pv)
        except SweepDivergence:
            continue
        if check_operating_limits(model, s):
            continue
        total = float(p_pv.sum())
        if total > best_total:
            best_total = total
            best = p_pv
    if best is None:
        raise RuntimeError("no feasible grid point found (even zero injection fails)")
    return best_total, best


def bisect_hosting(model: FeederModel, direction=None, tol: float = 1e-9):
    """Direct nonlinear hosting solve: bisection on total PV along a ray.

    Runs the exact sweep at p_pv = t * direction and bisects the largest
    feasible t.  With a single PV-capable node this is the true nonlinear
    optimum; used as the agreement oracle on tiny fixtures.
    """
    if direction is None:
        direction = model.pv_hi.copy()
    direction = np.asarray(direction, dtype=float)
    total_dir = direction.sum()
    if total_dir <= 0:
        return 0.0, np.zeros(model.n_nodes)

    def feasible(t):
        p_pv = np.clip(t * direction, model.pv_lo, model.pv_hi)
        try:
            s = power_flow_sweep(model, p_pv)
        except SweepDivergence:
            return False, None
        return not check_operating_limits(model, s), p_pv

    ok, _ = feasible(0.0)
    if not ok:
        raise RuntimeError("zero injection is already infeasible; no hosting capacity")
    lo, hi = 0.0, 1.0
    ok_hi, pv_hi_vec = feasible(hi)
    if ok_hi:
        return float(pv_hi_vec.sum()), pv_hi_vec
    while hi - lo > tol / max(total_dir, 1.0):
        mid = 0.5 * (lo + hi)
        ok, _ = feasible(mid)
        if ok:
            lo = mid
        else:
            hi = mid
    p_pv = np.clip(lo * direction, model.pv_lo, model.pv_hi)
    return float(p_pv.sum()), p_pv


def _check_dims(model: FeederModel, s: BranchFlowState):
    if (s.P.shape != (model.n_edges,) or s.Q.shape != (model.n_edges,)
            or s.l.shape != (model.n_edges,) or s.v.shape != (model.n_nodes,)
            or s.p_pv.shape != (model.n_nodes,)):
        raise ValueError("state dimensions do not match the feeder")


def _max_abs(a):
    return float(np.abs(a).max()) if a.size else 0.0
