import numpy as np
import pytest

from hostcap import ConeProgram, SolveOptions, solve


def test_lp_corner():
    p = ConeProgram(1)
    p.objective[0] = 1.0
    p.set_bounds(0, 3.0, np.inf)
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-8)
    assert sol.obj == pytest.approx(3.0, abs=1e-8)


def test_unit_rotated_cone_boundary():
    # minimize -z with u = w = 1 drives z to the cone boundary z^2 = u*w
    p = ConeProgram(3)
    u, w, z = 0, 1, 2
    p.objective[z] = -1.0
    p.set_bounds(u, 1.0, 1.0)
    p.set_bounds(w, 1.0, 1.0)
    p.add_rsoc(u, w, [z])
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.x[z] == pytest.approx(1.0, abs=1e-8)


def test_rsoc_hand_derived():
    # minimize u+w with z fixed at 2: u*w >= 4 and symmetry give u = w = 2
    p = ConeProgram(3)
    u, w, z = 0, 1, 2
    p.objective[u] = 1.0
    p.objective[w] = 1.0
    p.add_eq([z], [1.0], 2.0)
    p.add_rsoc(u, w, [z])
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.x[u] == pytest.approx(2.0, abs=1e-7)
    assert sol.x[w] == pytest.approx(2.0, abs=1e-7)


def test_optimal_passes_independent_audit():
    p = ConeProgram(4)
    p.objective[:] = [1.0, 1.0, 0.0, 0.5]
    p.add_eq([2], [1.0], 2.0)
    p.add_ineq([0, 3], [-1.0, -1.0], -1.0)  # x0 + x3 >= 1
    p.set_bounds(3, 0.0, 10.0)
    p.add_rsoc(0, 1, [2])
    opts = SolveOptions()
    sol = solve(p, opts)
    assert sol.status == "optimal"
    assert p.max_residual(sol.x) <= opts.feas_tol
    assert sol.duality_gap_estimate <= opts.rel_gap_tol * (1 + abs(sol.obj))


def test_objective_scaling_leaves_argmin():
    def build(scale):
        p = ConeProgram(3)
        p.objective[:] = np.array([1.0, 2.0, -1.0]) * scale
        p.add_eq([0, 1], [1.0, 1.0], 4.0)
        p.set_bounds(2, -np.inf, 5.0)
        p.set_bounds(0, 0.0, np.inf)
        p.set_bounds(1, 0.5, np.inf)
        return p

    opts = SolveOptions()
    a = solve(build(1.0), opts)
    b = solve(build(7.5), opts)
    assert a.status == b.status == "optimal"
    np.testing.assert_allclose(a.x, b.x, atol=10 * opts.feas_tol)


def test_infeasible_detected():
    p = ConeProgram(1)
    p.objective[0] = 1.0
    p.add_ineq([0], [-1.0], -3.0)  # x >= 3
    p.add_ineq([0], [1.0], 2.0)    # x <= 2
    assert solve(p).status == "infeasible"


def test_unbounded_detected():
    p = ConeProgram(1)
    p.objective[0] = 1.0
    p.add_ineq([0], [1.0], 3.0)  # x <= 3, minimize x -> unbounded below
    assert solve(p).status == "unbounded"


def test_malformed_index_rejected():
    p = ConeProgram(2)
    with pytest.raises(IndexError):
        p.add_eq([5], [1.0], 0.0)
    with pytest.raises(IndexError):
        p.add_rsoc(0, 1, [7])
    with pytest.raises(ValueError):
        p.add_rsoc(0, 0, [1])


def test_options_validated():
    with pytest.raises(ValueError):
        SolveOptions(feas_tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(max_iter=0)


def test_dump_mentions_every_block():
    p = ConeProgram(3)
    p.var_names = ["a", "b", "c"]
    p.objective[0] = 1.0
    p.add_eq([0, 1], [1.0, -1.0], 0.0)
    p.add_ineq([2], [1.0], 4.0)
    p.set_bounds(1, 0.0, 2.0)
    p.add_rsoc(0, 1, [2])
    text = p.dump()
    assert "==" in text and "<=" in text and "rsoc" in text
    assert "a" in text and "c^2" in text
