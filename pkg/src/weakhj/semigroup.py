"""Lax-Oleinik semigroups with u-dependent Lagrangians and the decreasing case.

The backward step is a semi-Lagrangian discretization of

    T_dt u(x) = min over q of [ u(x - q dt) + int L(gamma, q, T u(gamma)) ],

with the running cost ``L(x, q, u) = l(x, q) - g(x, u)`` (``l`` the Legendre
transform of the kinetic part, ``g`` the zeroth-order term).  The integral
over the straight segment is approximated by the trapezoidal rule, which
makes the step implicit in the new value at ``x``; that scalar equation is
solved by fixed-point iteration.

When the time step is commensurate with the velocity grid (every
displacement ``q dt`` is a whole number of cells) the step is a min-plus
operator on the grid graph.  Its forward counterpart
``T+ phi = -Tbar(-phi)`` is then the exact adjoint, so for a backward fixed
point ``u`` the forward orbit ``T+^k u`` is pointwise nonincreasing in exact
arithmetic.  The decreasing-case pipeline relies on this.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridField, SpaceTimeField, TorusGrid, lipschitz_estimate, sup_norm
from .hamiltonian import DECREASING, INCREASING, admissible_velocity_radii, growth_constants, legendre_auto
from .scalar_solver import (
    NonConvergenceError,
    ScalarProblem,
    SchemeParams,
    _solve_consistent,
    f_transform,
    max_speed,
    newton_solve,
    residual,
    solve_increasing,
    viscosity_for,
)

logger = logging.getLogger(__name__)

DEFAULT_NQ = 201
INNER_ITERATIONS = 50


class VelocityBoundError(ValueError):
    """The minimizing velocity sits on the edge of the velocity grid."""


class MonotonicityError(RuntimeError):
    """A forward orbit increased by more than the allowed slack."""


class DiscretizationFailure(RuntimeError):
    """A set the theory guarantees to be nonempty came out empty."""


@dataclass(frozen=True, eq=False)
class LagrangianTable:
    """Kinetic Lagrangian ``l(x_k, q_j)`` tabulated at nodes and velocities.

    The u-dependence ``-g(x, u)`` is evaluated on demand from ``problem``.
    Off-node values of ``l`` are linearly interpolated in ``x``.
    """

    problem: ScalarProblem
    q_grid: np.ndarray
    kinetic: np.ndarray

    @classmethod
    def build(cls, problem: ScalarProblem, q_max: float, n_q: int = DEFAULT_NQ) -> "LagrangianTable":
        if n_q < 3 or n_q % 2 == 0:
            raise ValueError("n_q must be an odd integer >= 3")
        q = np.linspace(-q_max, q_max, n_q)
        x = problem.grid.nodes
        X, Q = np.meshgrid(x, q, indexing="ij")
        return cls(problem, q, legendre_auto(problem.h, X, Q))

    @property
    def grid(self) -> TorusGrid:
        return self.problem.grid

    @property
    def q_max(self) -> float:
        return float(self.q_grid[-1])

    @property
    def theta(self) -> float:
        return self.problem.theta

    def reflect(self, problem: ScalarProblem) -> "LagrangianTable":
        """Table for a problem whose kinetic part is ``h(x, -p)``: ``l(x, q) -> l(x, -q)``."""
        return LagrangianTable(problem, self.q_grid, self.kinetic[:, ::-1].copy())

    def value(self, x, q_index, u) -> np.ndarray:
        """``L(x, q_j, u)`` at arbitrary points."""
        ell = self._kinetic_at(np.asarray(x, dtype=float), np.asarray(q_index))
        return ell - self.problem.zeroth(x, u)

    def _kinetic_at(self, x: np.ndarray, j: np.ndarray) -> np.ndarray:
        grid = self.grid
        s = x / grid.spacing
        k0 = np.floor(s)
        w = s - k0
        i0 = k0.astype(np.int64) % grid.n
        i1 = (i0 + 1) % grid.n
        return (1.0 - w) * self.kinetic[i0, j] + w * self.kinetic[i1, j]


def commensurate_dt(table: LagrangianTable) -> float:
    """Step for which every displacement ``q_j dt`` is a whole number of cells."""
    return ((table.q_grid.size - 1) // 2) * table.grid.spacing / table.q_max


def _integer_shifts(table: LagrangianTable, dt: float) -> np.ndarray | None:
    shifts = table.q_grid * dt / table.grid.spacing
    rounded = np.rint(shifts)
    if np.max(np.abs(shifts - rounded)) < 1e-9:
        return rounded.astype(np.int64)
    return None


def _check_step(table: LagrangianTable, dt: float) -> None:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if table.theta * dt >= 0.5:
        raise ValueError(f"inner iteration not contracting: theta*dt = {table.theta * dt:.3g} >= 1/2")


def _resolve_implicit(m: np.ndarray, x: np.ndarray, problem: ScalarProblem, dt: float, sign: float,
                      tol: float) -> np.ndarray:
    """Solve ``w + sign (dt/2) g(x, w) = m`` by fixed-point iteration."""
    w = m.copy()
    half = 0.5 * dt * sign
    for _ in range(INNER_ITERATIONS):
        new = m - half * problem.zeroth(x, w)
        if float(np.max(np.abs(new - w))) <= tol:
            return new
        w = new
    raise ValueError("inner iteration not contracting (dt too large)")


def _candidates(values: np.ndarray, table: LagrangianTable, dt: float, direction: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-(node, velocity) values ``phi(foot)`` and the trapezoidal running cost.

    ``direction=-1`` looks back along ``x - q dt`` (backward step),
    ``+1`` looks ahead along ``x + q dt`` (forward step).
    """
    grid = table.grid
    problem = table.problem
    n = grid.n
    nq = table.q_grid.size
    jj = np.broadcast_to(np.arange(nq)[None, :], (n, nq))
    shifts = _integer_shifts(table, dt)
    if shifts is not None:
        idx = (np.arange(n)[:, None] + int(direction) * shifts[None, :]) % n
        phi_f = values[idx]
        x_f = grid.nodes[idx]
        ell_f = table.kinetic[idx, jj]
    else:
        x_f = grid.wrap(grid.nodes[:, None] + direction * table.q_grid[None, :] * dt)
        phi_f = grid.interpolate(values, x_f)
        ell_f = table._kinetic_at(x_f, jj)
    cost = 0.5 * dt * (table.kinetic + ell_f) - 0.5 * dt * problem.zeroth(x_f, phi_f)
    return phi_f, cost


def _boundary_check(arg: np.ndarray, nq: int) -> None:
    hit = (arg == 0) | (arg == nq - 1)
    if np.any(hit):
        k = int(np.flatnonzero(hit)[0])
        raise VelocityBoundError(f"optimal velocity on the grid boundary at node {k} (q_max too small)")


def backward_step(u: GridField, table: LagrangianTable, dt: float, tol: float = 1e-12) -> GridField:
    """One step of the backward semigroup.

    Solves ``w_k + (dt/2) g(x_k, w_k) = min_j [u(foot) + (dt/2)(l(x_k,q_j) + l(foot,q_j)) - (dt/2) g(foot, u(foot))]``
    with ``foot = x_k - q_j dt``.

    Raises
    ------
    ValueError
        If ``theta * dt >= 1/2`` (the implicit resolution may not contract).
    VelocityBoundError
        If a minimizing velocity is an endpoint of the velocity grid.
    """
    _check_step(table, dt)
    phi_f, cost = _candidates(np.asarray(u.values), table, dt, -1.0)
    cand = phi_f + cost
    arg = np.argmin(cand, axis=1)
    _boundary_check(arg, table.q_grid.size)
    m = cand[np.arange(cand.shape[0]), arg]
    return GridField(u.grid, _resolve_implicit(m, table.grid.nodes, table.problem, dt, 1.0, tol))


def forward_step(phi: GridField, table: LagrangianTable, dt: float, tol: float = 1e-12) -> GridField:
    """One forward step written directly in terms of the original Lagrangian.

    Solves ``w_k - (dt/2) g(x_k, w_k) = max_j [phi(x_k + q_j dt) - cost_j]``;
    this equals ``-backward_step(-phi)`` for the transformed problem.
    """
    _check_step(table, dt)
    phi_f, cost = _candidates(np.asarray(phi.values), table, dt, 1.0)
    cand = phi_f - cost
    arg = np.argmax(cand, axis=1)
    _boundary_check(arg, table.q_grid.size)
    M = cand[np.arange(cand.shape[0]), arg]
    return GridField(phi.grid, _resolve_implicit(M, table.grid.nodes, table.problem, dt, -1.0, tol))


def _steps(t: float, dt: float) -> tuple[int, float]:
    k = max(1, int(math.ceil(t / dt - 1e-9)))
    return k, t / k


def backward_semigroup(phi: GridField, table: LagrangianTable, t: float, dt: float, tol: float = 1e-12) -> GridField:
    """``T-_t phi`` by repeated :func:`backward_step` (``dt`` shrunk to divide ``t``)."""
    k, h = _steps(t, dt)
    u = phi
    for _ in range(k):
        u = backward_step(u, table, h, tol)
    return u


def t_plus(phi: GridField, problem: ScalarProblem, t: float, dt: float, tol: float = 1e-12,
           table: LagrangianTable | None = None) -> GridField:
    """Forward semigroup ``T+_t phi = -Tbar-_t(-phi)`` via the transformed problem.

    ``table`` may be supplied for the *transformed* problem to avoid
    rebuilding it.
    """
    if table is None:
        q_max = 2.0 * (lipschitz_estimate(phi) + 1.0)
        table = LagrangianTable.build(f_transform(problem), q_max)
    return -backward_semigroup(-phi, table, t, dt, tol)


@dataclass(frozen=True, eq=False)
class SemigroupRun:
    """Record of an iterated semigroup run."""

    direction: str
    trajectory: SpaceTimeField
    monotone_flag: bool
    max_violation: float = 0.0
    steps: int = 0
    converged: bool = True


def backward_fixed_point(u0: GridField, table: LagrangianTable, dt: float, tol: float = 1e-12,
                         max_steps: int = 20_000) -> tuple[GridField, int]:
    """Iterate :func:`backward_step` until successive iterates agree to ``tol``."""
    u = u0
    for k in range(1, max_steps + 1):
        nxt = backward_step(u, table, dt, 0.01 * tol)
        if sup_norm(nxt, u) <= tol:
            return nxt, k
        u = nxt
    raise NonConvergenceError(f"backward iteration did not settle in {max_steps} steps")


def forward_limit(u_minus: GridField, problem: ScalarProblem, dt: float | None = None, tol: float = 1e-10,
                  t_max: float = 1e4, table: LagrangianTable | None = None, q_max: float | None = None,
                  strict: bool = True) -> tuple[GridField, SemigroupRun]:
    """Long-time limit of ``T+_t u_minus`` for a solution ``u_minus`` of ``problem``.

    Each step records ``max(T+ v - v)``, the amount by which the orbit
    increased.  In exact arithmetic this is never positive; the recorded
    value therefore measures discretization or roundoff defects, and the
    iterate is clamped to ``min(T+ v, v)`` so roundoff cannot accumulate.

    Parameters
    ----------
    u_minus
        Backward fixed point of the scheme for ``problem``.
    problem
        The increasing problem whose forward semigroup is iterated.
    dt
        Time step; by default the commensurate step of the table.
    table
        Lagrangian table of ``f_transform(problem)``.

    Raises
    ------
    MonotonicityError
        If ``strict`` and the orbit increased by more than ``10 tol``.
    NonConvergenceError
        If ``t_max`` is reached first.
    """
    if table is None:
        q_max = q_max or 2.0 * (lipschitz_estimate(u_minus) + 1.0)
        table = LagrangianTable.build(f_transform(problem), q_max)
    if dt is None:
        dt = commensurate_dt(table)
    max_steps = max(1, int(t_max / dt))
    v = u_minus
    frames = [v.values]
    worst = 0.0
    converged = False
    steps = 0
    for steps in range(1, max_steps + 1):
        nxt = -backward_step(-v, table, dt, 1e-3 * tol)
        worst = max(worst, float(np.max(nxt.values - v.values)))
        clamped = GridField(v.grid, np.minimum(nxt.values, v.values))
        frames.append(clamped.values)
        change = sup_norm(clamped, v)
        v = clamped
        if change < tol:
            converged = True
            break
    flag = worst <= 10.0 * tol
    run = SemigroupRun("forward", SpaceTimeField(v.grid, dt, np.array(frames)), flag, worst, steps, converged)
    if strict and not flag:
        raise MonotonicityError(f"forward orbit increased by {worst:.3g} (> 10 tol)")
    if not converged:
        raise NonConvergenceError(f"forward limit not reached by t_max={t_max:g}")
    return v, run


@dataclass(frozen=True, eq=False)
class DecreasingSolution:
    """Everything produced by the decreasing-case pipeline.

    ``field`` is the returned solution; ``semigroup_field`` the unpolished
    ``-v_plus``; ``u_minus`` the backward fixed point of the transformed
    (increasing) problem and ``v_plus`` its forward limit.
    """

    field: GridField
    semigroup_field: GridField
    u_minus: GridField
    v_plus: GridField
    run: SemigroupRun
    dt: float
    q_max: float
    polish_displacement: float
    polished: bool
    sigma: float | None
    notes: list = field(default_factory=list)


def _initial_q_max(prob: ScalarProblem, u: GridField) -> float:
    lip = lipschitz_estimate(u)
    return max(2.0 * (lip + 1.0), 1.1 * max_speed(prob.h, prob.grid, 1.5 * lip + 1.0))


def decreasing_pipeline(prob: ScalarProblem, params: SchemeParams | None = None, n_q: int = DEFAULT_NQ,
                        polish: bool = True) -> DecreasingSolution:
    """Solve a strictly decreasing equation through its transform.

    1. ``F(x, p, u) = H(x, -p, -u)`` is increasing; solve it on the grid.
    2. Re-anchor that solution as the fixed point ``u_minus`` of the
       commensurate backward semigroup of ``F``.
    3. Iterate the forward semigroup of ``F`` from ``u_minus`` to its limit
       ``v_plus``; then ``-v_plus`` solves the original equation.
    4. Polish ``-v_plus`` with Newton's method on the Lax-Friedrichs scheme
       so the result is certified by the same residual as every other
       solver output.

    The velocity range is doubled whenever a minimizer hits its edge.
    """
    params = params or SchemeParams()
    if prob.monotonicity != DECREASING:
        raise ValueError(f"decreasing pipeline needs a decreasing problem, got {prob.monotonicity!r}")
    F = f_transform(prob)
    u_F = solve_increasing(F, params)
    q_max = _initial_q_max(F, u_F)
    notes = []
    for attempt in range(6):
        table_F = LagrangianTable.build(F, q_max, n_q)
        dt = commensurate_dt(table_F)
        if F.theta * dt >= 0.45:
            q_max *= (F.theta * dt) / 0.45 * 1.01
            continue
        try:
            u_minus, k_back = backward_fixed_point(u_F, table_F, dt, tol=1e-12)
            table_G = table_F.reflect(prob)
            v_plus, run = forward_limit(u_minus, F, dt, tol=1e-12, table=table_G, strict=False)
            break
        except VelocityBoundError as exc:
            notes.append(f"q_max={q_max:.4g}: {exc}; doubling")
            q_max *= 2.0
    else:
        raise NonConvergenceError("velocity range kept saturating in the decreasing pipeline")
    if not run.monotone_flag:
        logger.warning("forward orbit increased by %.3g", run.max_violation)
    raw = -v_plus
    out, polished, sigma = raw, False, None
    if polish:
        try:
            values = _solve_consistent(prob, params, raw.values,
                                       lambda u, s: newton_solve(prob, u, s, params.tol)[0])
            out = GridField(prob.grid, values)
            polished = True
            sigma = params.viscosity_coeff or viscosity_for(prob.h, prob.grid, values)
        except NonConvergenceError as exc:
            notes.append(f"Newton polish failed: {exc}")
            logger.warning("Newton polish failed; returning the semigroup solution")
    return DecreasingSolution(out, raw, u_minus, v_plus, run, dt, q_max, sup_norm(out, raw), polished, sigma, notes)


def solve_decreasing(prob: ScalarProblem, params: SchemeParams | None = None) -> GridField:
    """Discrete solution of a strictly decreasing equation (see :func:`decreasing_pipeline`)."""
    return decreasing_pipeline(prob, params).field


def aubry_set(u_ref: GridField, u_limit: GridField, tol_set: float | None = None) -> list[int]:
    """Nodes where ``|u_ref - u_limit| <= tol_set`` (default ``5 sqrt(spacing)``).

    Raises
    ------
    DiscretizationFailure
        If no node qualifies, which the continuous theory rules out.
    """
    if u_ref.grid != u_limit.grid:
        raise ValueError("grid mismatch")
    if tol_set is None:
        tol_set = 5.0 * math.sqrt(u_ref.grid.spacing)
    idx = np.flatnonzero(np.abs(u_ref.values - u_limit.values) <= tol_set)
    if idx.size == 0:
        raise DiscretizationFailure("projected Aubry set came out empty")
    return [int(k) for k in idx]


@dataclass(frozen=True)
class ScalarBounds:
    """Sup-norm constants for one equation with frozen partners baked in."""

    zero_state_sup: float
    modulus: float
    theta: float
    ball_radius: float
    lagrangian_cap: float
    transit_time: float
    growth_factor: float
    offset: float

    @property
    def increasing_bound(self) -> float:
        return self.zero_state_sup / self.modulus

    @property
    def decreasing_bound(self) -> float:
        return (1.0 + self.growth_factor) * self.zero_state_sup / self.modulus + self.offset

    def forward_gap(self, u_minus_sup: float) -> float:
        """``(C + theta |u_minus|) mu e^{theta mu}`` for the forward lower bound."""
        return (self.lagrangian_cap + self.theta * u_minus_sup) * self.transit_time * math.exp(self.theta * self.transit_time)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["increasing_bound"] = self.increasing_bound
        out["decreasing_bound"] = self.decreasing_bound
        return out


def scalar_bounds(prob: ScalarProblem) -> ScalarBounds:
    """Constants of the single-equation sup bounds for ``prob``.

    The frozen partners are part of ``prob.u_term``, so the terms that the
    two-equation bounds write as ``b |v|`` are already inside the zero-state
    value and the Lagrangian cap.
    """
    x = prob.grid.nodes

    def cap_of(delta: float) -> float:
        qs = np.linspace(-delta, delta, 21)
        X, Q = np.meshgrid(x, qs, indexing="ij")
        return float(np.max(legendre_auto(prob.h, X, Q) - prob.zeroth(X, np.zeros_like(X))))

    caps = admissible_velocity_radii(cap_of)
    delta = max(caps)
    cap = max(caps[delta], 0.0)
    mu = prob.grid.diameter / delta
    growth, offset = growth_constants(prob.theta, mu, cap)
    return ScalarBounds(prob.zero_state_sup(), prob.modulus, prob.theta, delta, cap, mu, growth, offset)


def check_forward_bounds(u_minus: GridField, v_plus: GridField, bounds: ScalarBounds,
                         aubry: list[int], slack: float = 0.0) -> dict:
    """Check ``u_minus(y) - gap <= v_plus(x) <= u_minus(x)`` for all nodes ``x`` and Aubry nodes ``y``."""
    gap = bounds.forward_gap(float(np.max(np.abs(u_minus.values))))
    upper_margin = float(np.min(u_minus.values - v_plus.values))
    lower_margin = float(np.min(v_plus.values) - (np.max(u_minus.values[aubry]) - gap))
    return {
        "gap": gap,
        "upper_margin": upper_margin,
        "lower_margin": lower_margin,
        "ok": bool(upper_margin >= -slack and lower_margin >= -slack),
    }


def check_domination(u: GridField, problem: ScalarProblem, n_curves: int = 64, q_max: float | None = None,
                     seed: int = 0, slack: float | None = None, segments: int = 16) -> bool:
    """Falsification test of ``u(gamma(t)) - u(gamma(t')) <= int L(gamma, gamma', u(gamma))``.

    Random piecewise-linear curves with ``segments`` pieces, uniform random
    knots and speeds at most ``q_max`` are drawn; the inequality is checked
    between every pair of knots.  The slack defaults to
    ``2 (1 + lip(u)) spacing`` per unit of elapsed time plus one such unit.
    """
    report = domination_report(u, problem, n_curves, q_max, seed, slack, segments)
    return report["ok"]


def domination_report(u: GridField, problem: ScalarProblem, n_curves: int = 64, q_max: float | None = None,
                      seed: int = 0, slack: float | None = None, segments: int = 16) -> dict:
    """Like :func:`check_domination` but returns the worst violation found."""
    grid = u.grid
    rng = np.random.default_rng(seed)
    lip = lipschitz_estimate(u)
    if q_max is None:
        q_max = 2.0 * (lip + 1.0)
    unit = 2.0 * (1.0 + lip) * grid.spacing if slack is None else slack
    nodes, weights = np.polynomial.legendre.leggauss(8)
    worst = -math.inf
    worst_curve = None
    for c in range(n_curves):
        start = rng.uniform(0.0, grid.length)
        disp = rng.uniform(-0.25 * grid.length, 0.25 * grid.length, size=segments)
        speed = rng.uniform(0.05 * q_max, q_max, size=segments)
        dur = np.abs(disp) / speed
        vel = np.sign(disp) * speed
        knots = start + np.concatenate([[0.0], np.cumsum(disp)])
        times = np.concatenate([[0.0], np.cumsum(dur)])
        # running cost of each segment by Gauss-Legendre quadrature
        s = 0.5 * (nodes + 1.0)
        pts = knots[:-1, None] + disp[:, None] * s[None, :]
        xw = grid.wrap(pts)
        uval = grid.interpolate(u.values, xw)
        qq = np.broadcast_to(vel[:, None], pts.shape)
        L = legendre_auto(problem.h, xw, qq) - problem.zeroth(xw, uval)
        seg_cost = 0.5 * dur * (L @ weights)
        cum = np.concatenate([[0.0], np.cumsum(seg_cost)])
        uk = grid.interpolate(u.values, grid.wrap(knots))
        gain = uk[None, :] - uk[:, None]            # u(t_b) - u(t_a)
        cost = cum[None, :] - cum[:, None]
        elapsed = times[None, :] - times[:, None]
        upper = np.triu(np.ones_like(gain, dtype=bool), k=1)
        viol = (gain - cost - unit * (1.0 + elapsed))[upper]
        if viol.max() > worst:
            worst = float(viol.max())
            worst_curve = c
    return {"ok": bool(worst <= 0.0), "worst_excess": worst, "worst_curve": worst_curve, "slack_unit": unit}
