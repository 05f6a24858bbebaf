import numpy as np
import pytest

from weakhj.critical_value import (
    DEFAULT_EPS,
    BoundViolation,
    DiscountedSpec,
    alpha_curve,
    discount_comparison,
    find_c0,
    solve_discounted,
    thread_count,
    vanishing_discount,
)
from weakhj.coupled_solver import coupled_residual
from weakhj.geometry import make_grid
from weakhj.hamiltonian import quadratic
from weakhj.scalar_solver import SchemeParams

EPS = [0.1, 0.01, 0.001]


def constant_potentials(k1=0.3, k2=-0.6, rates=(2.0, 1.0), n=32):
    return DiscountedSpec((quadratic(lambda x: k1 + 0.0 * x), quadratic(lambda x: k2 + 0.0 * x)), rates, make_grid(n))


def exact_alpha(c, k1=0.3, k2=-0.6, l1=2.0, l2=1.0):
    # constant fields: eq 1 forces u1 - u2 = (c - k1)/l1, eq 2 then gives eps u2 exactly
    return k2 - l2 * (c - k1) / l1


def test_default_discounts():
    assert DEFAULT_EPS[0] == 0.1 and len(DEFAULT_EPS) == 8
    assert DEFAULT_EPS[-1] <= 1e-3


def test_rates_must_be_positive():
    with pytest.raises(ValueError):
        DiscountedSpec((quadratic(), quadratic()), (1.0, lambda x: np.sin(x)), make_grid(16))


def test_a_priori_oracle():
    dspec = DiscountedSpec((quadratic(np.sin), quadratic(lambda x: np.cos(2 * x))), (2.0, 1.0), make_grid(64))
    b = dspec.a_priori(0.0)
    assert b["iota"] == 0.5 and b["iota_tilde"] == 2.0
    assert b["eps_u2_lower"] == pytest.approx(-1.5)
    assert b["eps_u2_upper"] == pytest.approx(1.5)
    # h1 = p^2 + sin x <= level forces |p| <= sqrt(level + 1)
    assert b["slope_bound"][0] == pytest.approx(np.sqrt(b["kinetic_level"][0] + 1.0), rel=1e-2)


@pytest.mark.parametrize("c", [-1.0, 0.0, 0.7])
def test_alpha_exact_for_constant_potentials(c):
    res = vanishing_discount(constant_potentials(), c, EPS)
    assert res.alpha == pytest.approx(exact_alpha(c), abs=1e-7)
    assert all(res.checks[k] for k in ("step1_bounds", "equi_lipschitz", "certified"))
    assert res.pair[1].values[res.anchor_index] == 0.0
    assert res.second_anchor["gap"] <= 1e-7
    assert max(res.critical_residual) <= 1e-6


def test_symmetric_zero_potentials_have_zero_critical_value():
    dspec = DiscountedSpec((quadratic(), quadratic()), (1.0, 1.0), make_grid(32))
    assert abs(vanishing_discount(dspec, 0.0, EPS).alpha) <= 1e-12


def test_discounted_solution_is_certified():
    dspec = DiscountedSpec((quadratic(np.sin), quadratic(np.cos)), (1.0, 2.0), make_grid(64))
    sol = solve_discounted(dspec, 0.01, 0.5)
    assert sol.certified
    assert max(sol.residuals) <= 1e-8
    assert sol.sweep_change <= 1e-7 and sol.agreement <= 1e-7
    assert max(coupled_residual(dspec.system(0.01, 0.5), sol.fields)) <= 1e-8


def test_order_and_gap_in_c():
    dspec = DiscountedSpec((quadratic(np.sin), quadratic(np.cos)), (1.0, lambda x: 1.0 + 0.5 * np.sin(x)),
                           make_grid(64))
    rep = discount_comparison(dspec, 0.05, 0.4, -0.3)
    assert rep["ordered"] and rep["gap_ok"]
    assert rep["min_difference"] >= 0
    with pytest.raises(ValueError):
        discount_comparison(dspec, 0.05, -0.3, 0.4)


def test_alpha_curve_shape_checks_and_slope():
    curve = alpha_curve(constant_potentials(), [-1.0, 0.0, 1.0], EPS, threads=2)
    assert curve.fitted_slope == pytest.approx(-0.5, abs=1e-7)
    assert curve.monotone_ok and curve.lipschitz_ok and not curve.violations
    assert curve.to_csv().splitlines()[0] == "c,alpha"
    with pytest.raises(ValueError):
        alpha_curve(constant_potentials(), [0.0, 1.0], EPS)
    with pytest.raises(ValueError):
        alpha_curve(constant_potentials(), [1.0, 0.0, 2.0], EPS)


def test_fixed_point_matches_closed_form():
    # c0 = alpha(c0)  <=>  c0 = (l1 k2 + l2 k1) / (l1 + l2)
    fp = find_c0(constant_potentials(), (-2.0, 2.0), tol_c=1e-6, eps_list=EPS)
    assert fp.c0 == pytest.approx((2.0 * -0.6 + 1.0 * 0.3) / 3.0, abs=1e-5)
    assert abs(fp.gap) <= 1e-6
    with pytest.raises(ValueError, match="same sign"):
        find_c0(constant_potentials(), (1.0, 2.0), eps_list=EPS)


def test_eps_list_validation():
    dspec = constant_potentials()
    with pytest.raises(ValueError):
        vanishing_discount(dspec, 0.0, [0.1, 0.2, 0.001])
    with pytest.raises(ValueError):
        vanishing_discount(dspec, 0.0, [0.1, 0.01])
    with pytest.raises(ValueError):
        vanishing_discount(dspec, 0.0, EPS, anchor_index=99)


def test_bound_violation_is_raised(monkeypatch):
    dspec = constant_potentials()
    tight = dspec.a_priori(0.0)
    tight.update(eps_u2_lower=0.0, eps_u2_upper=0.0)
    monkeypatch.setattr(DiscountedSpec, "a_priori", lambda self, c=0.0: tight)
    with pytest.raises(BoundViolation) as info:
        vanishing_discount(dspec, 0.0, EPS)
    assert "record" in info.value.details


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("WEAKHJ_THREADS", "2")
    assert thread_count(10) == 2
    assert thread_count(1) == 1
    monkeypatch.setenv("WEAKHJ_THREADS", "junk")
    assert thread_count(3) >= 1


def test_tolerance_flows_through():
    res = vanishing_discount(constant_potentials(), 0.0, EPS, params=SchemeParams(tol=1e-10))
    assert all(r["residual"] <= 1e-10 for r in res.eps_sequence)
