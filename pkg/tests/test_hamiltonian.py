import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from weakhj.geometry import make_grid
from weakhj.hamiltonian import (
    BoundsLedger,
    CouplingLaw,
    KineticHamiltonian,
    SystemSpec,
    bounds_ledger,
    check_chain_condition,
    coupling_constants,
    coupling_strength,
    iteration_case,
    legendre,
    legendre_auto,
    limit_sup_bound,
    max_cycle_product,
    predicted_sup_bound,
    quadratic,
)

GRID = make_grid(64)
XS = GRID.nodes


def cubic():
    return KineticHamiltonian(lambda x, p: np.abs(p) ** 3 / 3.0 + 0.0 * np.asarray(x), 2.0,
                              lambda x, p: p * np.abs(p) + 0.0 * np.asarray(x), "|p|^3/3")


# ---------------------------------------------------------------------------
# Legendre transform


def test_legendre_of_quadratic_with_potential():
    h = quadratic(np.sin)
    q = np.linspace(-3, 3, 13)
    X, Q = np.meshgrid(XS[::8], q, indexing="ij")
    exact = Q ** 2 / 4.0 - np.sin(X)
    assert np.max(np.abs(legendre_auto(h, X, Q) - exact)) < 1e-8


def test_legendre_of_cubic():
    # sup_p (q p - |p|^3/3) = (2/3) |q|^{3/2}
    q = np.linspace(-4, 4, 9)
    got = legendre_auto(cubic(), np.zeros_like(q), q)
    assert np.allclose(got, 2.0 / 3.0 * np.abs(q) ** 1.5, atol=1e-7)


def test_legendre_radius_checks():
    h = quadratic()
    with pytest.raises(ValueError):
        legendre(h, 0.0, 0.0, radius=0.5 * h.p_bound_hint)
    with pytest.raises(ValueError, match="radius too small"):
        legendre(h, 0.0, 10.0, radius=h.p_bound_hint)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_fenchel_young(q, p, x):
    h = quadratic(np.cos)
    assert q * p <= float(legendre_auto(h, x, q)) + float(h(x, p)) + 1e-9


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_legendre_is_convex_in_velocity(a, b, x):
    h = cubic()
    mid = float(legendre_auto(h, x, 0.5 * (a + b)))
    ends = 0.5 * (float(legendre_auto(h, x, a)) + float(legendre_auto(h, x, b)))
    assert mid <= ends + 1e-8


# ---------------------------------------------------------------------------
# system construction


def test_kinetic_rejects_noncoercive():
    with pytest.raises(ValueError, match="coercive"):
        KineticHamiltonian(lambda x, p: np.sin(p) + 0.0 * np.asarray(x), 1.0)


def test_shift_and_reflection():
    h = KineticHamiltonian(lambda x, p: (p - 1.0) ** 2 + 0.0 * np.asarray(x), 3.0)
    assert float(h.shifted(2.0)(0.0, 1.0)) == pytest.approx(-2.0)
    assert float(h.reflected()(0.0, -1.0)) == pytest.approx(0.0)


def test_monotone_flag_checks_sign_pattern():
    with pytest.raises(ValueError, match="monotone pattern"):
        SystemSpec((quadratic(), quadratic()), CouplingLaw.linear([[1, 0.5], [-0.5, 1]], monotone=True), GRID)


def test_classes_from_diagonal_sign():
    spec = SystemSpec((quadratic(), quadratic()), CouplingLaw.linear([[1, 0.2], [0.3, -2]]), GRID)
    assert spec.classes == ("increasing", "decreasing")
    assert iteration_case(spec.classes) == "c"
    with pytest.raises(ValueError, match="changes sign"):
        SystemSpec((quadratic(), quadratic()), CouplingLaw.linear([[np.sin, 0.2], [0.3, 1]]), GRID)


def test_linear_coupling_constants_oracle():
    law = CouplingLaw.linear([[2.0, lambda x: -0.5 + 0.25 * np.cos(x)], [-0.3, 1.5]])
    spec = SystemSpec((quadratic(), quadratic()), law, GRID)
    b = coupling_constants(spec)
    assert b[0, 1] == pytest.approx(0.75 / 2.0)
    assert b[1, 0] == pytest.approx(0.3 / 1.5)
    assert b[0, 0] == b[1, 1] == 0.0
    assert coupling_strength(spec) == pytest.approx(0.375 * 0.2)


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-2, -0.01), st.floats(-2, -0.01))
def test_coupling_constants_invariant_under_row_scaling(s1, s2, l12, l21):
    base = [[1.0, l12], [l21, 1.0]]
    scaled = [[s1, s1 * l12], [s2 * l21, s2]]
    b = coupling_constants(SystemSpec((quadratic(), quadratic()), CouplingLaw.linear(base), GRID))
    c = coupling_constants(SystemSpec((quadratic(), quadratic()), CouplingLaw.linear(scaled), GRID))
    assert np.allclose(b, c, rtol=1e-12)


def test_nonlinear_sampled_ratio_and_declared_override(caplog):
    terms = [lambda x, a, b: 2.0 * a - 0.5 * np.sin(b), lambda x, a, b: a ** 3 + 3.0 * b - 0.3 * a]
    law = CouplingLaw.nonlinear(terms, theta=400.0, modulus=[2.0, 3.0], classes=["increasing", "increasing"],
                                sample_box=(-2.0, 2.0))
    spec = SystemSpec((quadratic(), quadratic()), law, GRID)
    b = coupling_constants(spec)
    assert 0.2 < b[0, 1] <= 0.25 + 1e-12
    assert b[1, 0] > 1.0  # |d(a^3 - 0.3 a)| over the box reaches 11.7 against 3
    declared = CouplingLaw.nonlinear(terms, theta=400.0, modulus=[2.0, 3.0], classes=["increasing", "increasing"],
                                     sample_box=(-2.0, 2.0), declared_b=[[0, 0.1], [0.1, 0]])
    with caplog.at_level(logging.WARNING):
        b2 = coupling_constants(SystemSpec((quadratic(), quadratic()), declared, GRID))
    assert np.allclose(b2, [[0, 0.1], [0.1, 0]])
    assert "exceed the declared" in caplog.text


def test_unclassified_component_has_infinite_ratio():
    law = CouplingLaw.nonlinear([lambda x, a, b: a ** 2 - b - 1, lambda x, a, b: b ** 2 + a - 1], theta=4.0,
                                modulus=[0, 0], classes=["none", "none"], sample_box=(-1.5, 1.5))
    spec = SystemSpec((quadratic(), quadratic()), law, GRID)
    assert math.isinf(coupling_strength(spec))
    assert not check_chain_condition(spec).ok


# ---------------------------------------------------------------------------
# cycle products


def brute_force_cycle_max(b):
    """Independent enumeration: every ordered subset of nodes closed into a loop."""
    m = b.shape[0]
    best = -1.0
    for size in range(2, m + 1):
        for nodes in itertools.permutations(range(m), size):
            prod = 1.0
            for s, t in zip(nodes, nodes[1:] + nodes[:1]):
                prod *= b[s, t]
            best = max(best, prod)
    return best


@given(st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
def test_cycle_product_matches_brute_force(m, seed):
    rng = np.random.default_rng(seed)
    b = rng.uniform(0, 1.5, size=(m, m))
    np.fill_diagonal(b, 0.0)
    assert max_cycle_product(b)[0] == pytest.approx(brute_force_cycle_max(b), rel=1e-12)


def test_chain_example_three_equations():
    b = np.full((3, 3), 0.3)
    np.fill_diagonal(b, 0.0)
    report = check_chain_condition(b)
    assert report.ok
    assert report.worst_product == pytest.approx(0.09)
    assert report.worst_cycle[0] == report.worst_cycle[-1]


@given(st.floats(0, 3), st.floats(0, 3))
def test_chain_condition_implies_weak_coupling_for_two(b12, b21):
    b = np.array([[0.0, b12], [b21, 0.0]])
    if check_chain_condition(b).ok:
        assert coupling_strength(b) < 1.0


# ---------------------------------------------------------------------------
# bounds ledger


def test_ledger_oracle_for_weak_linear(weak_linear_spec):
    spec = weak_linear_spec(64)
    led = bounds_ledger(spec)
    assert led.zero_state_sup == pytest.approx((1.0, 0.0))
    assert led.theta == pytest.approx(1.4)
    assert led.self_moduli == (1.0, 1.0)
    assert led.ball_radius == 1.0
    # L(x, q, 0) = q^2/4 - sin x, maximal at |q| = 1 and sin x = -1
    assert led.lagrangian_cap == pytest.approx(1.25, abs=1e-3)
    mu = math.pi
    assert led.transit_time == pytest.approx(mu)
    assert led.growth_factor == pytest.approx(1.4 * mu * math.exp(1.4 * mu), rel=1e-12)
    assert led.offset == pytest.approx(led.lagrangian_cap * mu * math.exp(1.4 * mu), rel=1e-12)
    A = led.growth_factor
    assert led.inflated_ratio[0, 1] == pytest.approx((1 + A) * 0.4 + A)
    assert led.cycle_product == pytest.approx(0.16)
    assert led.coupling_strength == pytest.approx(0.16)
    assert led.case_feasibility["a"]["default_ok"]
    assert "cross_ratio" in led.to_dict()


def recursive_bounds(case, n_max, r1, r2, b12, b21, bb12, bb21, A, B):
    """Sweep-by-sweep sup bounds obtained by iterating the one-step estimates."""
    m2 = 0.0
    out = []
    for _ in range(n_max + 1):
        if case == "a":
            m1 = r1 + b12 * m2
            m2 = r2 + b21 * m1
        elif case == "b":
            m1 = (1 + A) * r1 + B + bb12 * m2
            m2 = (1 + A) * r2 + B + bb21 * m1
        else:
            m1 = r1 + b12 * m2
            m2 = (1 + A) * r2 + B + bb21 * m1
        out.append((m1, m2))
    return out


def make_ledger(r1, r2, b12, b21, A, B):
    bb12, bb21 = (1 + A) * b12 + A, (1 + A) * b21 + A
    return BoundsLedger(
        zero_state_sup=(r1, r2), theta=1.0, self_moduli=(1.0, 1.0),
        cross_ratio=np.array([[0.0, b12], [b21, 0.0]]), ball_radius=1.0, lagrangian_cap=1.0,
        lagrangian_cap_raw=1.0, transit_time=1.0, growth_factor=A, offset=B,
        inflated_ratio=np.array([[0.0, bb12], [bb21, 0.0]]), cycle_product=b12 * b21,
        inflated_cycle_product=bb12 * bb21, mixed_cycle_product=b12 * bb21, coupling_strength=b12 * b21,
        classes=("increasing", "increasing"), case_feasibility={},
    ), bb12, bb21


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 0.9), st.floats(0, 0.9), st.floats(0, 0.2), st.floats(0, 3),
       st.sampled_from(["a", "b", "c"]))
def test_closed_form_bound_matches_recursion(r1, r2, b12, b21, A, B, case):
    led, bb12, bb21 = make_ledger(r1, r2, b12, b21, A, B)
    k = {"a": b12 * b21, "b": bb12 * bb21, "c": b12 * bb21}[case]
    assume(k < 0.95)
    rec = recursive_bounds(case, 12, r1, r2, b12, b21, bb12, bb21, A, B)
    for n, (m1, m2) in enumerate(rec):
        assert predicted_sup_bound(led, n, case, 0) == pytest.approx(m1, rel=1e-9, abs=1e-12)
        assert predicted_sup_bound(led, n, case, 1) == pytest.approx(m2, rel=1e-9, abs=1e-12)
    for comp in (0, 1):
        seq = [predicted_sup_bound(led, n, case, comp) for n in range(30)]
        assert all(b >= a - 1e-12 for a, b in zip(seq, seq[1:]))
        assert limit_sup_bound(led, case, comp) >= seq[-1] - 1e-9


def test_limit_bound_infinite_when_cycle_not_contracting():
    led, _, _ = make_ledger(1.0, 1.0, 1.0, 1.0, 0.0, 0.0)
    assert math.isinf(limit_sup_bound(led, "a", 0))


def test_predicted_bound_argument_checks(weak_linear_spec):
    led = bounds_ledger(weak_linear_spec(64))
    with pytest.raises(ValueError):
        predicted_sup_bound(led, -1, "a", 0)
    with pytest.raises(ValueError):
        predicted_sup_bound(led, 0, "z", 0)
