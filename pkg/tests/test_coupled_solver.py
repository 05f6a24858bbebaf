import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakhj.coupled_solver import (
    CoupledTrajectory,
    coupled_newton,
    coupled_residual,
    detect_period,
    evolve_coupled,
    gauss_seidel,
    lower_envelope,
    oscillation_amplitude,
    rescale_component,
    rescale_fields,
    unscale_fields,
    verify_iteration_bounds,
)
from weakhj.demos import exx_pair, exx_system, manufactured_pair_residual
from weakhj.geometry import TWO_PI, GridField, SpaceTimeField, make_grid, sample, sup_norm
from weakhj.hamiltonian import CouplingLaw, SystemSpec, bounds_ledger, quadratic
from weakhj.scalar_solver import (
    NonConvergenceError,
    SchemeParams,
    explicit_dt,
    linear_problem,
    solve_increasing,
    viscosity_for,
)

TOL = 1e-8


@pytest.fixture(scope="module")
def solved():
    law = CouplingLaw.linear([[1.0, -0.4], [-0.4, 1.0]], monotone=True)
    spec = SystemSpec((quadratic(np.sin), quadratic()), law, make_grid(64))
    ledger = bounds_ledger(spec)
    return spec, ledger, gauss_seidel(spec, ledger=ledger)


def test_gauss_seidel_converges_by_residual(solved):
    spec, _, trace = solved
    assert trace.converged
    assert trace.case == "a"
    assert max(coupled_residual(spec, trace.final)) <= TOL
    assert trace.changes[0] == math.inf


def test_limit_is_a_fixed_point_of_one_more_sweep(solved):
    spec, _, trace = solved
    again = gauss_seidel(spec, init=trace.final, max_sweeps=1)
    assert max(sup_norm(a, b) for a, b in zip(again.final, trace.final)) <= 10 * TOL


def test_newton_agrees_with_alternating_iteration(solved):
    spec, _, trace = solved
    fields = coupled_newton(spec)
    assert max(sup_norm(a, b) for a, b in zip(fields, trace.final)) <= 10 * TOL


def test_sweep_bounds_hold(solved):
    _, ledger, trace = solved
    report = verify_iteration_bounds(trace, ledger)
    assert report["ok"], report["violations"][:3]
    assert report["worst_margin"] >= 0


def test_trace_export(solved, tmp_path):
    _, ledger, trace = solved
    recs = trace.records(ledger)
    assert {"sweep", "component", "residual", "sup_norm", "predicted_bound"} <= set(recs[0])
    assert len(recs) == 2 * len(trace.sweeps)
    path = tmp_path / "trace.json"
    trace.to_json(ledger, path)
    assert path.read_text().startswith("[")


def test_three_equations_converge():
    law = CouplingLaw.linear([[1, -0.3, -0.3], [-0.3, 1, -0.3], [-0.3, -0.3, 1]], monotone=True)
    spec = SystemSpec((quadratic(np.sin), quadratic(np.cos), quadratic()), law, make_grid(64))
    trace = gauss_seidel(spec)
    assert trace.converged and trace.case == "m-general"
    assert max(coupled_residual(spec, trace.final)) <= TOL


def test_mixed_classes_respect_sweep_bounds():
    spec = SystemSpec((quadratic(np.sin), quadratic()), CouplingLaw.linear([[1, -0.2], [0.1, -1]]), make_grid(64))
    ledger = bounds_ledger(spec)
    trace = gauss_seidel(spec, ledger=ledger, max_sweeps=30)
    assert trace.case == "c" and trace.converged
    assert verify_iteration_bounds(trace, ledger)["ok"]


def test_strong_coupling_failure_carries_trace():
    spec = SystemSpec((quadratic(np.sin), quadratic()), CouplingLaw.linear([[1, 1.5], [1.5, 1]]), make_grid(64))
    with pytest.raises(NonConvergenceError) as info:
        gauss_seidel(spec, max_sweeps=50)
    assert hasattr(info.value, "trace")
    assert not info.value.trace.converged


def test_unclassified_components_rejected():
    law = CouplingLaw.nonlinear([lambda x, a, b: a ** 2 - b - 1, lambda x, a, b: b ** 2 + a - 1], theta=4.0,
                                modulus=[0, 0], classes=["none", "none"], sample_box=(-1.5, 1.5))
    spec = SystemSpec((quadratic(), quadratic()), law, make_grid(32))
    with pytest.raises(ValueError):
        gauss_seidel(spec)


@pytest.mark.parametrize("c,d", [(-1, -1), (-1, 1), (0, 0), (1, -1), (0.5, 2.0)])
def test_exchange_pairs_are_discrete_solutions(c, d):
    g = make_grid(64)
    h = quadratic()
    u0 = solve_increasing(linear_problem(h, g, 2.0))
    assert max(coupled_residual(exx_system(h, c, d, g), exx_pair(u0, c, d))) <= 4 * g.spacing


def test_manufactured_pair_residual_is_first_order():
    res = [manufactured_pair_residual(n) for n in (64, 128, 256)]
    for a, b in zip(res, res[1:]):
        assert 1.6 <= a / b <= 2.4


# ---------------------------------------------------------------------------
# evolution


def fixed_scheme(spec, fields, T_fields=()):
    p_max = 2.0 * (max(float(np.max(np.abs(np.diff(f.values)))) / spec.grid.spacing
                       for f in list(fields) + list(T_fields)) + 1.0)
    sigma = max(viscosity_for(h, spec.grid, p_max=p_max) for h in spec.kinetic)
    return SchemeParams(viscosity_coeff=sigma, dt=explicit_dt(sigma, spec.theta(), spec.grid.spacing, 0.9))


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1))
def test_evolution_preserves_order(seed):
    g = make_grid(32)
    law = CouplingLaw.linear([[1.0, -0.5], [-0.7, 1.2]], monotone=True)
    spec = SystemSpec((quadratic(np.sin), quadratic(np.cos)), law, g)
    rng = np.random.default_rng(seed)
    low = [GridField(g, np.cumsum(rng.uniform(-0.2, 0.2, 32))) for _ in range(2)]
    high = [GridField(g, f.values + rng.uniform(0.0, 1.0, 32)) for f in low]
    params = fixed_scheme(spec, low, high)
    a = evolve_coupled(spec, low, 1.0, params)
    b = evolve_coupled(spec, high, 1.0, params)
    for ca, cb in zip(a.components, b.components):
        assert np.min(cb.data - ca.data) >= -10 * TOL


def test_rescaled_evolution_maps_back():
    g = make_grid(32)
    law = CouplingLaw.linear([[1.0, -0.5], [-0.7, 1.2]], monotone=True)
    spec = SystemSpec((quadratic(np.sin), quadratic(np.cos)), law, g)
    phis = [sample(g, np.sin), sample(g, lambda x: 0.5 * np.cos(2 * x))]
    params = fixed_scheme(spec, phis)
    s = 0.5
    scaled = rescale_component(spec, 0, s)
    original = evolve_coupled(spec, phis, 1.0, params)
    other = evolve_coupled(scaled, rescale_fields(phis, 0, s), 1.0, params)
    back = unscale_fields(other.final, 0, s)
    assert max(sup_norm(a, b) for a, b in zip(back, original.final)) <= 10 * TOL


def test_evolution_reaches_stationary_solution(solved):
    spec, _, trace = solved
    traj = evolve_coupled(spec, [GridField.constant(spec.grid, 0.0)] * 2, 25.0, store_every=500)
    assert max(sup_norm(a, b) for a, b in zip(traj.final, trace.final)) <= 1e-6


def test_trajectory_csv_columns():
    g = make_grid(16)
    law = CouplingLaw.linear([[1.0, -0.5], [-0.5, 1.0]], monotone=True)
    spec = SystemSpec((quadratic(), quadratic()), law, g)
    traj = evolve_coupled(spec, [sample(g, np.sin), sample(g, np.cos)], 0.2, store_every=5)
    rows = list(csv.reader(io.StringIO(traj.to_csv())))
    assert rows[0] == ["t", "x", "component", "value"]
    assert len(rows) == 1 + len(traj.times) * 2 * 16
    assert {r[2] for r in rows[1:]} == {"0", "1"}


# ---------------------------------------------------------------------------
# periodicity diagnostics on synthetic trajectories


def synthetic(kind, t_end=4 * np.pi, n=64, frames=400):
    g = make_grid(n)
    times = np.linspace(0.0, t_end, frames + 1)
    dt = times[1]
    x = g.nodes
    if kind == "rotating":
        comps = [np.sin(x[None, :] + times[:, None]), np.cos(x[None, :] + times[:, None])]
    else:
        comps = [np.ones((times.size, n)), np.zeros((times.size, n))]
    return CoupledTrajectory(tuple(SpaceTimeField(g, dt, c) for c in comps), dt)


def test_detect_period_on_exact_rotation():
    traj = synthetic("rotating")
    rep = detect_period(traj, TWO_PI, 0.05)
    assert rep.periodic and not rep.stationary
    assert rep.deviation < 0.05
    assert not detect_period(traj, 1.0, 0.05).periodic


def test_detect_period_flags_stationary_runs():
    rep = detect_period(synthetic("still"), TWO_PI, 0.05)
    assert rep.periodic and rep.stationary


def test_detect_period_needs_two_periods():
    with pytest.raises(ValueError):
        detect_period(synthetic("rotating", t_end=1.5 * TWO_PI), TWO_PI, 0.05)


def test_amplitude_and_lower_envelope():
    traj = synthetic("rotating")
    assert oscillation_amplitude(traj, TWO_PI) == pytest.approx(2.0, abs=1e-3)
    env = lower_envelope(traj, 2 * np.pi)
    assert np.allclose(env[0].values, -1.0, atol=1e-3)
    assert np.allclose(env[1].values, -1.0, atol=1e-3)
