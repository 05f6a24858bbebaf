import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weakhj.geometry import GridField, lipschitz_estimate, make_grid, sample, sup_norm
from weakhj.hamiltonian import quadratic
from weakhj.scalar_solver import f_transform, linear_problem, residual, solve_increasing
from weakhj.semigroup import (
    DiscretizationFailure,
    LagrangianTable,
    MonotonicityError,
    VelocityBoundError,
    aubry_set,
    backward_fixed_point,
    backward_semigroup,
    backward_step,
    check_domination,
    check_forward_bounds,
    commensurate_dt,
    decreasing_pipeline,
    domination_report,
    forward_limit,
    scalar_bounds,
    t_plus,
)


def increasing_problem(n=64):
    return linear_problem(quadratic(np.sin), make_grid(n), 1.0, np.cos)


def contracting_table(prob, lip):
    # commensurate steps are (n_q - 1)/2 cells long; keep theta * dt below 1/2
    q_max = max(2.0 * (lip + 1.0), 100.0 * prob.grid.spacing * prob.theta / 0.4)
    return LagrangianTable.build(prob, q_max)


def test_table_matches_closed_form_lagrangian():
    prob = increasing_problem(32)
    tab = LagrangianTable.build(prob, 3.0, n_q=31)
    X, Q = np.meshgrid(prob.grid.nodes, tab.q_grid, indexing="ij")
    assert np.allclose(tab.kinetic, Q ** 2 / 4 - np.sin(X), atol=1e-8)
    with pytest.raises(ValueError):
        LagrangianTable.build(prob, 3.0, n_q=30)


def test_commensurate_step_moves_whole_cells():
    prob = increasing_problem(64)
    tab = LagrangianTable.build(prob, 5.0, n_q=41)
    shifts = tab.q_grid * commensurate_dt(tab) / prob.grid.spacing
    assert np.allclose(shifts, np.round(shifts), atol=1e-9)


def test_constant_data_evolves_like_the_ode():
    # h = p^2, u_term = u: T-_t c = c e^{-t} exactly (the optimal curve stays put)
    g = make_grid(32)
    prob = linear_problem(quadratic(), g, 1.0)
    tab = LagrangianTable.build(prob, 2.0, n_q=21)
    out = backward_semigroup(GridField.constant(g, 1.0), tab, 0.4, 0.1)
    assert np.allclose(out.values, np.exp(-0.4), atol=1e-3)


def test_semigroup_property():
    prob = increasing_problem(64)
    phi = sample(prob.grid, lambda x: 0.5 * np.sin(x))
    tab = contracting_table(prob, 1.0)
    t, s, dt = 0.3, 0.5, 0.07
    composed = backward_semigroup(backward_semigroup(phi, tab, t, dt), tab, s, dt)
    direct = backward_semigroup(phi, tab, t + s, dt)
    slack = 5.0 * dt * (t + s)
    assert sup_norm(composed, direct) <= slack


@given(st.integers(0, 10_000))
def test_forward_backward_duality(seed):
    prob = increasing_problem(32)
    rng = np.random.default_rng(seed)
    steps = rng.uniform(-0.2, 0.2, 32)
    # centred increments so the field closes up across the seam of the torus
    phi = GridField(prob.grid, 0.3 * np.cumsum(steps - steps.mean()))
    F = f_transform(prob)
    tab = LagrangianTable.build(F, 4.0, n_q=21)
    dt = 0.05
    expected = -backward_semigroup(-phi, tab, 0.2, dt)
    assert sup_norm(t_plus(phi, prob, 0.2, dt, table=tab), expected) <= 1e-12


def test_backward_fixed_point_consistency():
    prob = increasing_problem(128)
    u = solve_increasing(prob)
    tab = contracting_table(prob, lipschitz_estimate(u))
    dt = commensurate_dt(tab)
    u_minus, steps = backward_fixed_point(u, tab, dt, tol=1e-12)
    assert sup_norm(backward_step(u_minus, tab, dt), u_minus) <= 10 * 1e-12
    # the two discretizations agree to discretization accuracy
    assert sup_norm(u_minus, u) <= 0.1


def decreasing_problem(n):
    return linear_problem(quadratic(), make_grid(n), -1.0, np.sin)


@pytest.fixture(scope="module")
def pipeline128():
    prob = decreasing_problem(128)
    return prob, decreasing_pipeline(prob)


def test_decreasing_pipeline_residual(pipeline128):
    prob, sol = pipeline128
    assert sol.polished
    assert residual(sol.field, prob) <= 1e-8


def test_forward_orbit_nonincreasing(pipeline128):
    _, sol = pipeline128
    frames = sol.run.trajectory.data
    assert np.max(np.diff(frames, axis=0)) <= 10 * 1e-10
    assert sol.run.monotone_flag


def test_forward_bounds_and_aubry_set(pipeline128):
    prob, sol = pipeline128
    F = f_transform(prob)
    bounds = scalar_bounds(F)
    aubry = aubry_set(sol.u_minus, sol.v_plus)
    assert len(aubry) > 0
    report = check_forward_bounds(sol.u_minus, sol.v_plus, bounds, aubry)
    assert report["ok"]
    assert np.max(np.abs(sol.field.values)) <= bounds.decreasing_bound


def test_aubry_set_empty_raises():
    g = make_grid(16)
    with pytest.raises(DiscretizationFailure):
        aubry_set(GridField.constant(g, 0.0), GridField.constant(g, 5.0), tol_set=1.0)


def test_forward_limit_flags_non_monotone_input():
    prob = increasing_problem(32)
    tab = LagrangianTable.build(f_transform(prob), 4.0, n_q=21)
    # a constant far above the solution is no backward fixed point: its forward orbit rises
    start = GridField.constant(prob.grid, 5.0)
    with pytest.raises(MonotonicityError):
        forward_limit(start, prob, dt=0.05, table=tab, strict=True, t_max=1.0)
    with pytest.raises(VelocityBoundError):
        forward_limit(GridField.constant(prob.grid, -5.0), prob, dt=0.05, table=tab, t_max=1.0)


def test_domination_of_solution_and_counterexample():
    prob = increasing_problem(64)
    u = solve_increasing(prob)
    assert check_domination(u, prob, n_curves=16, seed=3)
    steep = sample(prob.grid, lambda x: 5.0 * np.sin(3 * x))
    report = domination_report(steep, prob, n_curves=16, seed=3)
    assert not report["ok"] and report["worst_excess"] > 0
