import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hostcap import (AngleRecoveryError, SweepDivergence, bisect_hosting,
                     brute_force_hosting, bundled_feeder, feasibility_gap,
                     flow_residuals, parse_feeder, power_flow_sweep, recover_angles,
                     zero_state)

from conftest import random_feeder, two_bus_closed_form

GOLDEN = Path(__file__).parent / "golden" / "two_bus_base.csv"


def test_zero_feeder_zero_residuals():
    m = parse_feeder("""
[base]
kv=10
kva=1000
[nodes]
sub,0,0,0
a,0,0,0
b,0,0,0
[edges]
sub,a,1,1,
a,b,1,2,
""")
    s = zero_state(m)
    assert flow_residuals(m, s).max_abs() == 0.0
    assert feasibility_gap(m, s).max_abs == 0.0


def test_sweep_matches_closed_form(two_bus_basic):
    s = power_flow_sweep(two_bus_basic)
    P, Q, l, v2 = two_bus_closed_form(1.0, 0.01, 0.01, 0.1, 0.05)
    i2 = two_bus_basic.node_index["n2"]
    assert s.P[0] == pytest.approx(P, abs=1e-12)
    assert s.Q[0] == pytest.approx(Q, abs=1e-12)
    assert s.l[0] == pytest.approx(l, abs=1e-12)
    assert s.v[i2] == pytest.approx(v2, abs=1e-12)
    assert s.v[i2] < two_bus_basic.v_sub
    assert s.l[0] > 0
    assert s.p_sub == pytest.approx(s.P[0])


def test_sweep_matches_golden_file(two_bus_basic):
    s = power_flow_sweep(two_bus_basic)
    got = {}
    for line in GOLDEN.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        parts = line.split(",")
        got[(parts[0], parts[1])] = [float(p) for p in parts[2:]]
    P, Q, l = got[("edge", "sub->n2")]
    assert s.P[0] == pytest.approx(P, rel=1e-11)
    assert s.Q[0] == pytest.approx(Q, rel=1e-11)
    assert s.l[0] == pytest.approx(l, rel=1e-11)
    assert s.v[two_bus_basic.node_index["n2"]] == pytest.approx(got[("node", "n2")][0], rel=1e-11)


def test_sweep_oracle_integrity(two_bus_basic):
    s = power_flow_sweep(two_bus_basic)
    assert flow_residuals(two_bus_basic, s).max_abs() < 1e-10
    assert feasibility_gap(two_bus_basic, s).max_abs < 1e-10


def test_sweep_pv_cancels_load():
    m = parse_feeder("""
[base]
kv=10
kva=1000
[nodes]
sub,0,0,0
n2,100,0,200
[edges]
sub,n2,1.0,1.0,
""")
    s = power_flow_sweep(m, p_pv=np.array([0.0, 0.1]))
    i2 = m.node_index["n2"]
    assert abs(s.P[0]) < 1e-6
    assert s.v[i2] == pytest.approx(m.v_sub, abs=1e-6)


def test_residual_perturbation_linearity(two_bus_basic):
    s = power_flow_sweep(two_bus_basic)
    base = flow_residuals(two_bus_basic, s)
    delta = 1e-3
    s.P[0] += delta
    pert = flow_residuals(two_bus_basic, s)
    assert pert.p[0] - base.p[0] == pytest.approx(delta, rel=1e-9)
    assert pert.v[0] - base.v[0] == pytest.approx(2 * two_bus_basic.r[0] * delta, rel=1e-9)
    np.testing.assert_allclose(pert.q, base.q, atol=1e-15)


def test_sweep_divergence_reported():
    # absurd loading: no operating point exists
    m = parse_feeder("""
[base]
kv=10
kva=1000
[nodes]
sub,0,0,0
n2,20000,10000,0
[edges]
sub,n2,5.0,5.0,
""")
    with pytest.raises(SweepDivergence):
        power_flow_sweep(m)


@given(st.integers(min_value=2, max_value=30), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_sweep_random_feeders_satisfy_equations(n_nodes, seed):
    rng = np.random.default_rng(seed)
    m = random_feeder(rng, n_nodes)
    s = power_flow_sweep(m)
    assert flow_residuals(m, s).max_abs() < 1e-10
    assert feasibility_gap(m, s).max_abs < 1e-10


@given(st.integers(min_value=2, max_value=20), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25, deadline=None)
def test_monotone_voltage_drop_without_pv(n_nodes, seed):
    rng = np.random.default_rng(seed)
    m = random_feeder(rng, n_nodes)
    s = power_flow_sweep(m)
    for k in range(m.n_edges):
        i, j = m.parent_of_edge[k], m.child_of_edge[k]
        assert s.v[j] <= s.v[i] + 1e-14


# -- angle recovery ----------------------------------------------------------


def test_angles_zero_state():
    m = parse_feeder("""
[base]
kv=10
kva=1000
[nodes]
sub,0,0,0
a,0,0,0
[edges]
sub,a,1,1,
""")
    theta = recover_angles(m, zero_state(m))
    np.testing.assert_allclose(theta, 0.0)


def _complex_two_bus_oracle(v1_sq, r, x, p_load, q_load):
    """Direct phasor solve of the 2-bus circuit (nodal fixed point)."""
    z = complex(r, x)
    s_load = complex(p_load, q_load)
    v1 = complex(math.sqrt(v1_sq), 0.0)
    v2 = v1
    for _ in range(500):
        nxt = v1 - z * (s_load / v2).conjugate()
        if abs(nxt - v2) < 1e-15:
            v2 = nxt
            break
        v2 = nxt
    return v2


def test_angles_match_complex_oracle(two_bus_basic):
    s = power_flow_sweep(two_bus_basic)
    theta = recover_angles(two_bus_basic, s)
    v2 = _complex_two_bus_oracle(1.0, 0.01, 0.01, 0.1, 0.05)
    i2 = two_bus_basic.node_index["n2"]
    assert theta[two_bus_basic.root] == 0.0
    assert theta[i2] == pytest.approx(np.angle(v2), abs=1e-10)
    assert abs(v2) ** 2 == pytest.approx(s.v[i2], abs=1e-10)


def test_angles_reject_interior_state(two_bus_basic):
    s = power_flow_sweep(two_bus_basic)
    s.l[0] *= 1.5  # push strictly inside the cone
    with pytest.raises(AngleRecoveryError, match="cone surface"):
        recover_angles(two_bus_basic, s)


@given(st.integers(min_value=2, max_value=15), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=20, deadline=None)
def test_phasor_reconstruction_consistency(n_nodes, seed):
    rng = np.random.default_rng(seed)
    m = random_feeder(rng, n_nodes)
    s = power_flow_sweep(m)
    theta = recover_angles(m, s)
    volt = np.sqrt(s.v) * np.exp(1j * theta)
    for k in range(m.n_edges):
        i, j = m.parent_of_edge[k], m.child_of_edge[k]
        z = complex(m.r[k], m.x[k])
        current = np.conj(complex(s.P[k], s.Q[k]) / volt[i])
        assert abs(volt[i] - z * current) ** 2 == pytest.approx(s.v[j], abs=1e-6)


# -- small-instance oracles ----------------------------------------------------


def test_brute_force_zero_caps(two_bus_basic):
    cap, inj = brute_force_hosting(two_bus_basic, grid_step=1e-2)
    assert cap == 0.0
    np.testing.assert_allclose(inj, 0.0)


def test_brute_force_guard():
    rng = np.random.default_rng(0)
    m = random_feeder(rng, 6)
    with pytest.raises(ValueError, match="4 nodes"):
        brute_force_hosting(m)


def test_brute_force_two_bus_voltage_cap_analytic():
    m = bundled_feeder("two_bus")
    step = 1e-3
    cap, inj = brute_force_hosting(m, grid_step=step)

    # analytic root of v2(pv) = v_max^2 via the closed-form state
    from scipy.optimize import brentq

    def v2_of(pv):
        return two_bus_closed_form(m.v_sub, m.r[0], m.x[0],
                                   m.load_p[1] - pv, m.load_q[1])[3]

    pv_star = brentq(lambda t: v2_of(t) - m.v_max_sq, 0.0, float(m.pv_hi[1]), xtol=1e-12)
    assert cap == pytest.approx(pv_star, abs=step)
    # the binder really is the upper voltage bound, not reverse flow
    s = power_flow_sweep(m, inj)
    assert s.p_sub > 1e-3


def test_bisect_matches_brute_force_two_bus():
    m = bundled_feeder("two_bus")
    cap_grid, _ = brute_force_hosting(m, grid_step=1e-3)
    cap_bis, _ = bisect_hosting(m)
    assert cap_bis == pytest.approx(cap_grid, abs=1e-3)
