"""Reproducible worked examples with built-in pass/fail checks.

Each ``*_demo`` function returns a :class:`DemoReport`: a list of
:class:`Check` outcomes plus plot-ready data and fields.  The command-line
``demo`` command writes these to disk; the acceptance tests call the same
functions.

The module also holds the analytic regressions used to measure the order
of the scheme (:func:`scalar_analytic_residual`, :func:`manufactured_pair_residual`,
:func:`periodic_truncation_residual`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import build_discounted, build_system, sample_config
from .coupled_solver import (
    coupled_operator,
    coupled_residual,
    detect_period,
    evolve_coupled,
    gauss_seidel,
    lower_envelope,
    oscillation_amplitude,
)
from .critical_value import alpha_curve
from .geometry import TWO_PI, GridField, TorusGrid, make_grid, sample
from .hamiltonian import (
    CouplingLaw,
    KineticHamiltonian,
    SystemSpec,
    check_chain_condition,
    coupling_strength,
    quadratic,
)
from .scalar_solver import SchemeParams, linear_problem, residual, solve_increasing, viscosity_for

logger = logging.getLogger(__name__)

DEMOS = ("exx", "periodic", "nonmonotone-lower-limit", "alpha-line", "chain")


@dataclass
class Check:
    """One quantitative test: ``value`` compared with ``threshold`` by ``relation``."""

    name: str
    value: float
    threshold: float
    relation: str = "<="
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        ops = {
            "<=": lambda a, b: a <= b,
            ">=": lambda a, b: a >= b,
            "==": lambda a, b: a == b,
        }
        self.passed = bool(ops[self.relation](self.value, self.threshold))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.6g} {self.relation} {self.threshold:.6g}"

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "relation": self.relation, "passed": self.passed}


@dataclass
class DemoReport:
    name: str
    checks: list
    data: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    trajectory: object | None = None
    curve: object | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]


# ---------------------------------------------------------------------------
# exchange-coupled system with a one-parameter family of solutions


def exx_system(h: KineticHamiltonian, c: float, d: float, grid: TorusGrid) -> SystemSpec:
    """``h(Du_1) + u_1 + u_2 = c`` and ``h(Du_2) + u_2 - u_1 = d``."""
    law = CouplingLaw.linear([[1.0, 1.0], [-1.0, 1.0]])
    return SystemSpec((h.shifted(c), h.shifted(d)), law, grid, f"exchange c={c:g} d={d:g}")


def exx_pair(u0: GridField, c: float, d: float) -> list[GridField]:
    """The pair ``(u0 + (c - d)/2, u0 + (c + d)/2)``."""
    return [u0 + 0.5 * (c - d), u0 + 0.5 * (c + d)]


def exx_demo(n: int = 256, tol: float = 1e-8, shifts=(-1.0, 0.0, 1.0)) -> DemoReport:
    """Residuals of the shifted pairs built from the solution of ``h(Du) + 2u = 0``."""
    grid = make_grid(n)
    h = quadratic()
    params = SchemeParams(tol=tol)
    u0 = solve_increasing(linear_problem(h, grid, 2.0), params)
    threshold = 4.0 * grid.spacing
    rows = []
    worst = 0.0
    for c in shifts:
        for d in shifts:
            res = max(coupled_residual(exx_system(h, c, d, grid), exx_pair(u0, c, d)))
            rows.append({"c": c, "d": d, "residual": res})
            worst = max(worst, res)
    checks = [Check("largest residual over the (c, d) grid", worst, threshold)]
    return DemoReport("exx", checks, {"residuals": rows, "spacing": grid.spacing}, {"u0": [u0]})


def _half_sine_potential(x):
    # chosen so that u = sin(x) / 2 solves p^2 + V(x) + 2u = 0
    return -(0.25 * np.cos(x) ** 2 + np.sin(x))


def scalar_analytic_residual(n: int) -> float:
    """Scheme residual of the exact solution ``sin(x)/2`` of ``p^2 + V(x) + 2u = 0``.

    The shifted pairs of :func:`exx_pair` solve the exchange system only
    when ``u0`` vanishes identically, so this scalar equation is the
    non-trivial analytic regression behind that example.
    """
    grid = make_grid(n)
    prob = linear_problem(quadratic(_half_sine_potential), grid, 2.0)
    u = sample(grid, lambda x: 0.5 * np.sin(x))
    return residual(u, prob)


def manufactured_pair_system(grid: TorusGrid, coupling: float = 0.4) -> SystemSpec:
    """Monotone linear system whose exact solution is ``(sin x, cos x)``."""
    k = coupling
    v1 = lambda x: -(np.cos(x) ** 2 + np.sin(x) - k * np.cos(x))
    v2 = lambda x: -(np.sin(x) ** 2 + np.cos(x) - k * np.sin(x))
    law = CouplingLaw.linear([[1.0, -k], [-k, 1.0]], monotone=True)
    return SystemSpec((quadratic(v1), quadratic(v2)), law, grid, "manufactured pair")


def manufactured_pair_residual(n: int) -> float:
    """Coupled scheme residual of the sampled exact pair of :func:`manufactured_pair_system`."""
    grid = make_grid(n)
    pair = [sample(grid, np.sin), sample(grid, np.cos)]
    return max(coupled_residual(manufactured_pair_system(grid), pair))


# ---------------------------------------------------------------------------
# the sin/cos system


def sin_cos_system(grid: TorusGrid) -> SystemSpec:
    """``|Du_1|^2 + u_1^2 - u_2 - 1 = 0`` and ``|Du_2|^2 + u_2^2 + u_1 - 1 = 0``."""
    cfg = sample_config("sin-cos")
    cfg["grid"] = {"n": grid.n, "length": grid.length}
    return build_system(cfg)


def rotating_pair(grid: TorusGrid, t: float) -> list[GridField]:
    """The exact solution ``(sin(x + t), cos(x + t))``."""
    return [sample(grid, lambda x: np.sin(x + t)), sample(grid, lambda x: np.cos(x + t))]


def periodic_truncation_residual(n: int, times=(0.0, 0.7, 1.9, 3.1), cfl: float = 0.5) -> float:
    """Local truncation error of one explicit step applied to the exact rotating pair."""
    grid = make_grid(n)
    spec = sin_cos_system(grid)
    worst = 0.0
    for t in times:
        now = rotating_pair(grid, t)
        values = [f.values for f in now]
        sigmas = [viscosity_for(spec.kinetic[i], grid, values[i]) for i in range(2)]
        dt = cfl * grid.spacing / max(sigmas)
        later = rotating_pair(grid, t + dt)
        ops = coupled_operator(spec, values, sigmas)
        for a, b, r in zip(later, now, ops):
            worst = max(worst, float(np.max(np.abs((a.values - b.values) / dt + r))))
    return worst


def periodic_demo(n: int = 256, tol: float = 0.05, periods: float = 2.0, store_every: int = 4) -> DemoReport:
    """Track ``(sin(x + t), cos(x + t))`` and test ``2 pi`` periodicity.

    The run covers ``periods`` periods because the periodicity test compares
    frames inside the trailing half of the run.
    """
    grid = make_grid(n)
    spec = sin_cos_system(grid)
    traj = evolve_coupled(spec, rotating_pair(grid, 0.0), periods * TWO_PI, SchemeParams(), store_every=store_every)
    errors = []
    for t in traj.times:
        exact = rotating_pair(grid, float(t))
        now = traj.at(float(t))
        errors.append(max(float(np.max(np.abs(a - b.values))) for a, b in zip(now, exact)))
    errors = np.asarray(errors)
    one_period = traj.times <= TWO_PI + 1e-9
    err_end = max(float(np.max(np.abs(a - b.values)))
                  for a, b in zip(traj.at(TWO_PI), rotating_pair(grid, TWO_PI)))
    report = detect_period(traj, TWO_PI, tol)
    checks = [
        Check("sup-error against the exact pair over one period", float(np.max(errors[one_period])), tol),
        Check("sup-error at t = 2 pi", err_end, tol),
        Check("periodicity deviation", report.deviation, tol),
    ]
    data = {"times": traj.times.tolist(), "errors": errors.tolist(), "period_report": vars(report),
            "dt": traj.dt}
    return DemoReport("periodic", checks, data, trajectory=traj)


def nonmonotone_lower_limit_demo(n: int = 256, t_end: float = 4.0 * TWO_PI, trailing: float = TWO_PI,
                                 store_every: int = 4, oscillation_floor: float = 0.5,
                                 residual_floor: float = 0.5) -> DemoReport:
    """Lower limits of the sin/cos evolution are not stationary solutions.

    Three checks: the constant pair ``(-1, -1)`` has residual exactly one in
    the first equation; the trajectory keeps oscillating over the trailing
    window (range at least ``oscillation_floor``); and the trailing
    pointwise lower envelope has coupled residual at least ``residual_floor``.
    """
    grid = make_grid(n)
    spec = sin_cos_system(grid)
    minus_one = [GridField.constant(grid, -1.0), GridField.constant(grid, -1.0)]
    res_const = coupled_residual(spec, minus_one)
    traj = evolve_coupled(spec, rotating_pair(grid, 0.0), t_end, SchemeParams(), store_every=store_every)
    amplitude = oscillation_amplitude(traj, trailing)
    envelope = lower_envelope(traj, t_end - trailing)
    res_env = coupled_residual(spec, envelope)
    checks = [
        Check("residual of (-1, -1) in equation 1", res_const[0], 1.0, "=="),
        Check("oscillation range over the trailing window", amplitude, oscillation_floor, ">="),
        Check("residual of the trailing lower envelope", max(res_env), residual_floor, ">="),
    ]
    data = {
        "constant_pair_residuals": res_const,
        "envelope_residuals": res_env,
        "oscillation_amplitude": amplitude,
        "final_sup": [float(np.max(np.abs(f.values))) for f in traj.final],
        "envelope_range": [[float(f.values.min()), float(f.values.max())] for f in envelope],
    }
    return DemoReport("nonmonotone-lower-limit", checks, data, {"envelope": envelope}, trajectory=traj)


# ---------------------------------------------------------------------------
# critical curve and chains


def alpha_line_demo(n: int = 256, tol: float = 1e-8, slope_tol: float = 5e-2, slack: float = 1e-2,
                    threads: int | None = None) -> DemoReport:
    """``alpha(c)`` for constant rates is a line of slope ``-Lambda_2 / Lambda_1``."""
    cfg = sample_config("alpha-line")
    dspec = build_discounted(cfg, n)
    l1, l2 = dspec.rate_values()
    expected = -float(np.mean(l2)) / float(np.mean(l1))
    curve = alpha_curve(dspec, cfg["critical"]["c_list"], params=SchemeParams(tol=tol), slack=slack, threads=threads)
    certified = all(rec["certified"] for r in curve.results for rec in r.eps_sequence)
    checks = [
        Check("fitted slope error", abs(curve.fitted_slope - expected), slope_tol),
        Check("monotonicity violations", float(sum(v["kind"] == "monotone" for v in curve.violations)), 0.0, "=="),
        Check("Lipschitz violations", float(sum(v["kind"] == "lipschitz" for v in curve.violations)), 0.0, "=="),
        Check("uncertified discounted solves",
              float(sum(not rec["certified"] for r in curve.results for rec in r.eps_sequence)), 0.0, "=="),
    ]
    data = {"expected_slope": expected, "curve": curve.to_dict(), "all_certified": certified,
            "per_c": [r.to_dict() for r in curve.results]}
    return DemoReport("alpha-line", checks, data, curve=curve)


def chain_demo(n: int = 256, tol: float = 1e-8) -> DemoReport:
    """Chain condition and alternating iteration for the three-equation sample."""
    spec = build_system(sample_config("chain3"), n)
    report = check_chain_condition(spec)
    trace = gauss_seidel(spec, params=SchemeParams(tol=tol))
    checks = [
        Check("worst simple-cycle product", report.worst_product, 1.0, "<="),
        Check("alternating iteration residual", max(trace.residuals[-1]), tol),
    ]
    data = {
        "worst_cycle": list(report.worst_cycle),
        "worst_product": report.worst_product,
        "chain_condition": report.ok,
        "coupling_strength": coupling_strength(spec),
        "sweeps": len(trace.sweeps),
        "converged": trace.converged,
    }
    return DemoReport("chain", checks, data, {"solution": trace.final})


def run_demo(name: str, n: int = 256, tol: float | None = None) -> DemoReport:
    """Dispatch by demo name; ``tol`` overrides the solver tolerance where one applies."""
    if name == "exx":
        return exx_demo(n, tol or 1e-8)
    if name == "periodic":
        return periodic_demo(n)
    if name == "nonmonotone-lower-limit":
        return nonmonotone_lower_limit_demo(n)
    if name == "alpha-line":
        return alpha_line_demo(n, tol or 1e-8)
    if name == "chain":
        return chain_demo(n, tol or 1e-8)
    raise ValueError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
