"""Coupled systems: alternating iteration, monolithic Newton and time evolution.

The stationary system

    h_i(x, Du_i) + g_i(x, u_1, ..., u_m) = 0,     i = 0, ..., m-1,

is attacked in two ways.  :func:`gauss_seidel` freezes all partners but one
and solves a scalar equation for that component (dispatching on its
monotonicity class), sweeping through the components in order.  For two
equations, sweep ``n`` produces ``u_1^n`` and then ``u_2^{n+1}`` starting
from ``u_2^0 = 0``; the recorded sup norms can be compared with the
closed-form bounds of :func:`weakhj.hamiltonian.predicted_sup_bound`.
:func:`coupled_newton` solves all components at once, which is much faster
when the coupling is close to critical.

:func:`evolve_coupled` advances the evolutionary system with synchronized
explicit Lax-Friedrichs steps; :func:`long_time_limit` runs it until the
solution stops moving, and :func:`detect_period` tests for time-periodic
behaviour.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import GridField, SpaceTimeField, TorusGrid, lipschitz_estimate, sup_norm
from .hamiltonian import (
    DECREASING,
    INCREASING,
    UNCLASSIFIED,
    BoundsLedger,
    CouplingLaw,
    KineticHamiltonian,
    SystemSpec,
    bounds_ledger,
    coupling_strength,
    iteration_case,
    limit_sup_bound,
    predicted_sup_bound,
)
from .scalar_solver import (
    SIGMA_RELTOL,
    InstabilityError,
    NonConvergenceError,
    ScalarProblem,
    SchemeParams,
    _jacobian,
    explicit_dt,
    solve_increasing,
    stationary_operator,
    viscosity_for,
    with_params,
)
from .semigroup import solve_decreasing

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 100.0
DIVERGENCE_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# component problems


def _partner_sampler(grid: TorusGrid, values: np.ndarray):
    nodes = grid.nodes

    def at(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape == nodes.shape and np.array_equal(x, nodes):
            return values
        return grid.interpolate(values, grid.wrap(x))

    return at


def component_problem(spec: SystemSpec, i: int, fields: Sequence[GridField]) -> ScalarProblem:
    """Equation ``i`` of ``spec`` with every other component frozen at ``fields``.

    Off-grid evaluations of the frozen partners use periodic linear
    interpolation, so the problem can also be fed to the semigroup solvers.
    """
    law = spec.coupling
    grid = spec.grid
    m = spec.m
    partners = {j: _partner_sampler(grid, np.asarray(fields[j].values)) for j in range(m) if j != i}
    cls = spec.classes[i]

    def state(x, s):
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        shape = np.broadcast_shapes(x.shape, s.shape)
        return [np.broadcast_to(s, shape) if j == i else np.broadcast_to(partners[j](x), shape) for j in range(m)]

    if law.kind == "linear":
        diag = law.matrix[i][i]
        x_nodes = grid.nodes
        lam = law.coefficient(i, i, x_nodes)

        def u_term(x, s):
            return law.term(i, x, state(x, s))

        def du(x, s):
            return np.asarray(diag(np.asarray(x, dtype=float)), dtype=float) + 0.0 * np.asarray(s, dtype=float)

        modulus = float(np.min(np.abs(lam)))
        theta = float(np.max(np.abs(lam)))
    else:
        def u_term(x, s):
            return law.term(i, x, state(x, s))

        def du(x, s):
            return law.partial(i, i, x, state(x, s))

        modulus = float(law.modulus[i]) if cls != UNCLASSIFIED else 0.0
        theta = float(law.theta)
    frozen = tuple(fields[j] for j in range(m) if j != i)
    return ScalarProblem(spec.kinetic[i], u_term, grid, cls, modulus, theta, frozen, du)


def solve_component(spec: SystemSpec, i: int, fields: Sequence[GridField], params: SchemeParams,
                    init: GridField | None = None) -> GridField:
    """Solve equation ``i`` with frozen partners, dispatching on its class."""
    prob = component_problem(spec, i, fields)
    if prob.monotonicity == INCREASING:
        return solve_increasing(prob, params, init)
    if prob.monotonicity == DECREASING:
        return solve_decreasing(prob, params)
    raise ValueError(f"component {i} has no monotonicity class; the stationary equation cannot be solved on its own")


# ---------------------------------------------------------------------------
# residuals


def _sigmas(spec: SystemSpec, values: Sequence[np.ndarray], params: SchemeParams | None = None) -> list[float]:
    if params is not None and params.viscosity_coeff is not None:
        return [params.viscosity_coeff] * spec.m
    return [viscosity_for(spec.kinetic[i], spec.grid, values[i]) for i in range(spec.m)]


def coupled_operator(spec: SystemSpec, values: Sequence[np.ndarray], sigmas: Sequence[float]) -> list[np.ndarray]:
    """Nodal values of ``h_LF,i(x, Du_i) + g_i(x, u)`` for every component."""
    grid = spec.grid
    x = grid.nodes
    out = []
    for i in range(spec.m):
        left = (values[i] - np.roll(values[i], 1)) / grid.spacing
        right = np.roll(left, -1)
        h = spec.kinetic[i]
        lf = h(x, 0.5 * (left + right)) - 0.5 * sigmas[i] * (right - left)
        out.append(lf + spec.coupling.term(i, x, values))
    return out


def coupled_residual(spec: SystemSpec, fields: Sequence[GridField], sigmas: Sequence[float] | None = None) -> list[float]:
    """Per-component sup norm of the stationary scheme applied to ``fields``.

    The viscosity of each component is derived from its own field unless
    ``sigmas`` is given, matching what the solvers use.
    """
    values = [np.asarray(f.values, dtype=float) for f in fields]
    if sigmas is None:
        sigmas = _sigmas(spec, values)
    return [float(np.max(np.abs(r))) for r in coupled_operator(spec, values, sigmas)]


# ---------------------------------------------------------------------------
# alternating iteration


@dataclass(eq=False)
class IterationTrace:
    """Snapshots of the alternating iteration.

    Attributes
    ----------
    sweeps
        One list of component fields per sweep (the state after the sweep).
    residuals
        Coupled scheme residual of each component after each sweep.
    sup_norms
        Sup norm of each component after each sweep.
    changes
        Sup distance to the previous sweep (``inf`` for the first).
    converged
        Whether residuals and changes fell below the tolerance.
    case
        ``"a"``, ``"b"``, ``"c"`` or ``"m-general"``.
    """

    sweeps: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    sup_norms: list = field(default_factory=list)
    changes: list = field(default_factory=list)
    converged: bool = False
    case: str = "m-general"
    tol: float = 1e-8
    message: str = ""

    @property
    def final(self) -> list[GridField]:
        return self.sweeps[-1]

    def records(self, ledger: BoundsLedger | None = None) -> list[dict]:
        """Per-sweep, per-component records for export."""
        out = []
        for n, (res, sups) in enumerate(zip(self.residuals, self.sup_norms)):
            for i, (r, s) in enumerate(zip(res, sups)):
                bound = None
                if ledger is not None and ledger.m == 2 and self.case in ("a", "b", "c"):
                    bound = predicted_sup_bound(ledger, n, self.case, i)
                out.append({"sweep": n, "component": i, "residual": r, "sup_norm": s, "predicted_bound": bound})
        return out

    def to_json(self, ledger: BoundsLedger | None = None, path: str | Path | None = None) -> str:
        text = json.dumps(self.records(ledger), indent=1, allow_nan=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def _divergence_limits(spec: SystemSpec, case: str, ledger: BoundsLedger | None) -> list[float]:
    if spec.m != 2 or case not in ("a", "b", "c"):
        return [math.inf] * spec.m
    if ledger is None:
        ledger = bounds_ledger(spec)
    return [max(DIVERGENCE_FACTOR * limit_sup_bound(ledger, case, i), DIVERGENCE_FLOOR) for i in range(2)]


def gauss_seidel(spec: SystemSpec, init: Sequence[GridField] | None = None, params: SchemeParams | None = None,
                 max_sweeps: int = 200, ledger: BoundsLedger | None = None,
                 warm_start: bool = True) -> IterationTrace:
    """Alternating component iteration.

    Each sweep solves the components in order, every solve using the
    freshest available partners.  Component 0 is solved against the
    previous sweep's values, so for two equations sweep ``n`` records
    ``(u_1^n, u_2^{n+1})``.

    Parameters
    ----------
    spec
        System whose components are all classified.
    init
        Starting fields; zero by default (the iteration starts from
        ``u_2^0 = 0``).
    params
        Scheme parameters; component solves use ``tol / 10``.
    max_sweeps
        Sweep budget.
    ledger
        Bounds ledger (computed on demand for two equations) used for the
        divergence test: a sup norm above 100 times the limit bound aborts.
    warm_start
        Start each component solve from the current value of that
        component (default) or from zero.  Cold starts make a single sweep
        an independent check of a candidate solution.

    Returns
    -------
    IterationTrace
        ``converged`` is set when every coupled residual and the change
        from the previous sweep are at most ``params.tol``.

    Raises
    ------
    NonConvergenceError
        On divergence or when a component solve fails (the trace so far
        is attached as ``exc.trace``).
    """
    params = params or SchemeParams()
    grid = spec.grid
    classes = spec.classes
    if UNCLASSIFIED in classes:
        raise ValueError("every component needs a monotonicity class for the alternating iteration")
    case = iteration_case(classes) if spec.m == 2 else "m-general"
    chi = coupling_strength(spec)
    if chi >= 1.0:
        logger.warning("coupling strength %.4g >= 1: convergence of the iteration is not guaranteed", chi)
    limits = _divergence_limits(spec, case, ledger)
    inner = with_params(params, tol=0.1 * params.tol)
    fields = [GridField.constant(grid, 0.0) for _ in range(spec.m)] if init is None else list(init)
    trace = IterationTrace(case=case, tol=params.tol)
    prev = None
    for n in range(max_sweeps):
        for i in range(spec.m):
            try:
                fields[i] = solve_component(spec, i, fields, inner, init=fields[i] if warm_start else None)
            except NonConvergenceError as exc:
                trace.message = f"component {i} solve failed at sweep {n}: {exc}"
                exc.trace = trace  # type: ignore[attr-defined]
                raise
        res = coupled_residual(spec, fields)
        sups = [float(np.max(np.abs(f.values))) for f in fields]
        change = math.inf if prev is None else max(sup_norm(a, b) for a, b in zip(fields, prev))
        trace.sweeps.append(list(fields))
        trace.residuals.append(res)
        trace.sup_norms.append(sups)
        trace.changes.append(change)
        logger.debug("sweep %d: residuals %s change %.3g", n, res, change)
        bad = [i for i in range(spec.m) if not math.isfinite(sups[i]) or sups[i] > limits[i]]
        if bad:
            trace.message = f"divergence at sweep {n}: component {bad[0]} sup {sups[bad[0]]:.4g} > {limits[bad[0]]:.4g}"
            exc = NonConvergenceError(trace.message, [max(r) for r in trace.residuals])
            exc.trace = trace  # type: ignore[attr-defined]
            raise exc
        if max(res) <= params.tol and change <= params.tol:
            trace.converged = True
            trace.message = f"converged after {n + 1} sweeps"
            return trace
        prev = list(fields)
    trace.message = f"no convergence within {max_sweeps} sweeps"
    logger.log(logging.WARNING if max_sweeps > 1 else logging.DEBUG, trace.message)
    return trace


def verify_iteration_bounds(trace: IterationTrace, ledger: BoundsLedger, slack: float | None = None) -> dict:
    """Compare every recorded sup norm with the closed-form sweep bound.

    Only defined for two equations in cases ``a``, ``b``, ``c``.  The slack
    defaults to ``10 * trace.tol``.
    """
    if ledger.m != 2 or trace.case not in ("a", "b", "c"):
        raise ValueError("sweep bounds are available for two equations in cases a, b, c only")
    slack = 10.0 * trace.tol if slack is None else slack
    violations = []
    worst_margin = math.inf
    for n, sups in enumerate(trace.sup_norms):
        for i, s in enumerate(sups):
            bound = predicted_sup_bound(ledger, n, trace.case, i)
            margin = bound + slack - s
            worst_margin = min(worst_margin, margin)
            if margin < 0:
                violations.append({"sweep": n, "component": i, "sup_norm": s, "bound": bound})
    return {"ok": not violations, "case": trace.case, "slack": slack, "worst_margin": worst_margin,
            "violations": violations, "sweeps": len(trace.sup_norms)}


# ---------------------------------------------------------------------------
# monolithic Newton


def _coupled_jacobian(spec: SystemSpec, values: Sequence[np.ndarray], sigmas: Sequence[float]) -> sp.csc_matrix:
    m, n = spec.m, spec.grid.n
    x = spec.grid.nodes
    fields = [GridField(spec.grid, v) for v in values]
    blocks = [[None] * m for _ in range(m)]
    for i in range(m):
        prob = component_problem(spec, i, fields)
        blocks[i][i] = _jacobian(values[i], prob, sigmas[i])
        for j in range(m):
            if j != i:
                blocks[i][j] = sp.diags(spec.coupling.partial(i, j, x, values), format="csc")
    return sp.bmat(blocks, format="csc")


def _newton_fixed_sigma(spec: SystemSpec, values: list[np.ndarray], sigmas: Sequence[float], tol: float,
                        max_iters: int = 100, polish_steps: int = 2) -> list[np.ndarray]:
    """Damped Newton at fixed viscosities.

    After the residual drops below ``tol`` up to ``polish_steps`` further
    steps are taken while they still reduce it; near-singular systems
    (small discounts) need this to pin the solution down, not just the
    residual.
    """
    n = spec.grid.n
    U = np.concatenate(values)

    def split(vec):
        return [vec[k * n:(k + 1) * n] for k in range(spec.m)]

    res = np.concatenate(coupled_operator(spec, split(U), sigmas))
    history = [float(np.max(np.abs(res)))]
    extra = polish_steps
    for _ in range(max_iters + polish_steps):
        if history[-1] <= tol:
            if extra == 0:
                return split(U)
            extra -= 1
        step = spla.spsolve(_coupled_jacobian(spec, split(U), sigmas), -res)
        t = 1.0
        while t > 1e-6:
            trial = U + t * step
            trial_res = np.concatenate(coupled_operator(spec, split(trial), sigmas))
            r = float(np.max(np.abs(trial_res)))
            if np.isfinite(r) and r < history[-1]:
                break
            t *= 0.5
        else:
            if history[-1] <= tol:
                return split(U)  # polishing reached roundoff
            raise NonConvergenceError("coupled Newton line search stalled", history)
        U, res = trial, trial_res
        history.append(r)
    if history[-1] <= tol:
        return split(U)
    raise NonConvergenceError(f"coupled Newton did not reach tol={tol:g}", history)


def coupled_newton(spec: SystemSpec, init: Sequence[GridField] | None = None,
                   params: SchemeParams | None = None, max_rounds: int = 30) -> list[GridField]:
    """Solve the whole stationary system with damped Newton.

    The viscosities are iterated to consistency with the fields, as in
    the scalar solver.  The Jacobian is an M-matrix for monotone linear
    couplings, which is the intended use (all components increasing).
    """
    params = params or SchemeParams()
    grid = spec.grid
    values = [np.zeros(grid.n) if init is None else np.array(init[i].values, dtype=float) for i in range(spec.m)]
    sigmas = _sigmas(spec, values, params)
    for _ in range(max_rounds):
        values = _newton_fixed_sigma(spec, values, sigmas, params.tol)
        if params.viscosity_coeff is not None:
            break
        nxt = _sigmas(spec, values)
        if all(abs(a - b) <= SIGMA_RELTOL * b for a, b in zip(nxt, sigmas)):
            break
        sigmas = nxt
    else:
        values = _newton_fixed_sigma(spec, values, sigmas, params.tol)
        logger.warning("coupled viscosities did not settle exactly after %d rounds", max_rounds)
    return [GridField(grid, v) for v in values]


# ---------------------------------------------------------------------------
# time evolution


@dataclass(frozen=True, eq=False)
class CoupledTrajectory:
    """Synchronized snapshots of every component."""

    components: tuple
    dt: float
    instability_flag: bool = False
    message: str = ""

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a trajectory needs at least one component")
        g, times = comps[0].grid, comps[0].times
        for c in comps[1:]:
            if c.grid != g or c.times.shape != times.shape or not np.allclose(c.times, times):
                raise ValueError("all components must share grid and time stamps")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> TorusGrid:
        return self.components[0].grid

    @property
    def times(self) -> np.ndarray:
        return self.components[0].times

    @property
    def final(self) -> list[GridField]:
        return [c.final for c in self.components]

    def at(self, t: float) -> list[np.ndarray]:
        return [c.at(t) for c in self.components]

    def to_csv(self, path: str | Path | None = None, every: int = 1) -> str:
        """Long-format export with columns ``t,x,component,value``."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "x", "component", "value"])
        xs = [f"{v:.12g}" for v in self.grid.nodes]
        for j in range(0, len(self.times), every):
            t = f"{self.times[j]:.12g}"
            for i, comp in enumerate(self.components):
                for xk, vk in zip(xs, comp.data[j]):
                    writer.writerow([t, xk, i, repr(float(vk))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


class _Stepper:
    """Explicit synchronized Lax-Friedrichs stepping for a whole system."""

    def __init__(self, spec: SystemSpec, phis: Sequence[GridField], params: SchemeParams):
        if len(phis) != spec.m:
            raise ValueError(f"need {spec.m} initial fields")
        for f in phis:
            if f.grid != spec.grid:
                raise ValueError("grid mismatch")
        self.spec = spec
        self.params = params
        self.x = spec.grid.nodes
        self.theta = spec.theta()
        self.sigma0 = [params.viscosity_coeff or viscosity_for(spec.kinetic[i], spec.grid,
                                                                p_max=2.0 * (lipschitz_estimate(phis[i]) + 1.0))
                       for i in range(spec.m)]
        self.dt = params.dt or min(explicit_dt(s, self.theta, spec.grid.spacing, params.cfl) for s in self.sigma0)
        vals = [np.array(f.values, dtype=float) for f in phis]
        self.base = max(float(np.max(np.abs(v))) for v in vals)
        self.speed = max(float(np.max(np.abs(r))) for r in coupled_operator(spec, vals, self.sigma0))

    def envelope(self, t: float) -> float:
        return (self.base + self.speed * t) * math.exp(min(self.theta * t, 700.0))

    def advance(self, values: list[np.ndarray], dt: float) -> list[np.ndarray]:
        spec = self.spec
        sigmas = _sigmas(spec, values, self.params)
        limit = min(explicit_dt(s, self.theta, spec.grid.spacing, self.params.cfl) for s in sigmas)
        sub = max(1, math.ceil(dt / limit - 1e-12))
        h = dt / sub
        for _ in range(sub):
            ops = coupled_operator(spec, values, sigmas)
            values = [v - h * r for v, r in zip(values, ops)]
        return values


def evolve_coupled(spec: SystemSpec, phis: Sequence[GridField], T: float, params: SchemeParams | None = None,
                   store_every: int = 1, abort: bool = True) -> CoupledTrajectory:
    """Explicit time marching of ``d_t u_i + h_i(x, Du_i) + g_i(x, u) = 0``.

    All components advance together (step ``k + 1`` of each uses step
    ``k`` of the others).  The step is the smallest single-equation step
    over the components, computed with the coupling's Lipschitz constant.

    Parameters
    ----------
    abort
        If true an instability raises :class:`InstabilityError`; otherwise
        the run stops and the partial trajectory is returned flagged.
    """
    params = params or SchemeParams()
    if not T > 0:
        raise ValueError("T must be positive")
    stepper = _Stepper(spec, phis, params)
    n_steps = max(1, math.ceil(T / stepper.dt - 1e-9))
    dt = T / n_steps
    values = [np.array(f.values, dtype=float) for f in phis]
    frames = [[v.copy()] for v in values]
    times = [0.0]
    flag, message = False, ""
    for k in range(1, n_steps + 1):
        values = stepper.advance(values, dt)
        t = k * dt
        sup = max(float(np.max(np.abs(v))) for v in values)
        bound = stepper.envelope(t)
        if not math.isfinite(sup) or sup > 10.0 * bound + 10.0:
            message = f"instability at t={t:.4g}: sup={sup:.4g}, envelope={bound:.4g}"
            if abort:
                raise InstabilityError(message, t, sup, bound)
            flag = True
            break
        if k % store_every == 0 or k == n_steps:
            for store, v in zip(frames, values):
                store.append(v.copy())
            times.append(t)
    comps = tuple(SpaceTimeField(spec.grid, dt * store_every, np.array(f), np.array(times)) for f in frames)
    return CoupledTrajectory(comps, dt, flag, message)


@dataclass(frozen=True, eq=False)
class LongTimeResult:
    """Terminal fields of a long run and how fast it settled."""

    fields: list
    window_times: np.ndarray
    window_changes: np.ndarray
    reference_distance: np.ndarray | None
    converged: bool
    t_final: float
    dt: float


def long_time_limit(spec: SystemSpec, phis: Sequence[GridField], params: SchemeParams | None = None,
                    t_max: float = 200.0, window: float = 1.0, tol: float | None = None,
                    reference: Sequence[GridField] | None = None) -> LongTimeResult:
    """Evolve until the solution moves less than ``tol`` over a time window.

    The change over a window is the largest sup distance between any frame
    inside the window and the frame at its start.  When ``reference`` is
    given (e.g. a stationary solution from :func:`gauss_seidel`) its sup
    distance is recorded at the end of every window.
    """
    params = params or SchemeParams()
    tol = params.tol if tol is None else tol
    if spec.coupling.kind != "linear" or not spec.coupling.monotone or coupling_strength(spec) >= 1.0:
        logger.warning("long-time convergence is only guaranteed for monotone linear coupling with strength < 1")
    stepper = _Stepper(spec, phis, params)
    per_window = max(1, math.ceil(window / stepper.dt - 1e-9))
    dt = window / per_window
    values = [np.array(f.values, dtype=float) for f in phis]
    ref = None if reference is None else [np.asarray(f.values) for f in reference]
    times, changes, dist = [], [], []
    t = 0.0
    converged = False
    while t < t_max - 1e-12:
        start = [v.copy() for v in values]
        change = 0.0
        for _ in range(per_window):
            values = stepper.advance(values, dt)
            change = max(change, max(float(np.max(np.abs(v - s))) for v, s in zip(values, start)))
        t += window
        sup = max(float(np.max(np.abs(v))) for v in values)
        if not math.isfinite(sup) or sup > 10.0 * stepper.envelope(t) + 10.0:
            raise InstabilityError(f"instability at t={t:.4g}", t, sup, stepper.envelope(t))
        times.append(t)
        changes.append(change)
        if ref is not None:
            dist.append(max(float(np.max(np.abs(v - r))) for v, r in zip(values, ref)))
        if change <= tol:
            converged = True
            break
    if not converged:
        logger.warning("long-time limit not reached by t=%.4g (last window change %.3g)", t, changes[-1])
    return LongTimeResult([GridField(spec.grid, v) for v in values], np.array(times), np.array(changes),
                          None if ref is None else np.array(dist), converged, t, dt)


# ---------------------------------------------------------------------------
# periodicity


@dataclass(frozen=True)
class PeriodReport:
    periodic: bool
    deviation: float
    stationary: bool
    period: float
    tol: float


def detect_period(traj: CoupledTrajectory, period: float, tol: float) -> PeriodReport:
    """Test ``u(., t + period) = u(., t)`` over the trailing half of the run.

    Pairs ``(t, t + period)`` are taken with ``t + period`` in the second
    half of the run, ``t`` ranging over the stored frames (the later time
    is interpolated linearly between frames).  The report also flags runs
    that are stationary over that half.
    """
    times = traj.times
    t_end = float(times[-1])
    if not period > 0:
        raise ValueError("period must be positive")
    if t_end < 2.0 * period - 1e-9:
        raise ValueError(f"run length {t_end:.4g} is shorter than two periods ({2 * period:.4g})")
    lo = 0.5 * t_end - period
    hi = t_end - period + 1e-12
    deviation = 0.0
    for j, t in enumerate(times):
        if t < lo - 1e-12 or t > hi:
            continue
        later = traj.at(float(t) + period)
        for comp, v in zip(traj.components, later):
            deviation = max(deviation, float(np.max(np.abs(v - comp.data[j]))))
    half = times >= 0.5 * t_end - 1e-12
    spread = max(float(np.max(np.abs(c.data[half] - c.data[-1]))) for c in traj.components)
    return PeriodReport(bool(deviation <= tol), deviation, bool(spread <= tol), period, tol)


def oscillation_amplitude(traj: CoupledTrajectory, window: float) -> float:
    """Largest pointwise range ``max_t u - min_t u`` over the last ``window`` time units."""
    sel = traj.times >= traj.times[-1] - window - 1e-12
    return max(float(np.max(np.ptp(c.data[sel], axis=0))) for c in traj.components)


def lower_envelope(traj: CoupledTrajectory, t_from: float) -> list[GridField]:
    """Pointwise minimum over frames with ``t >= t_from`` for each component."""
    sel = traj.times >= t_from - 1e-12
    if not np.any(sel):
        raise ValueError("no frames after t_from")
    return [GridField(traj.grid, np.min(c.data[sel], axis=0)) for c in traj.components]


# ---------------------------------------------------------------------------
# rescaling


def _scaled_kinetic(h: KineticHamiltonian, s: float) -> KineticHamiltonian:
    f, d = h.func, h.dp
    func = lambda x, p: np.asarray(f(x, s * np.asarray(p, dtype=float)), dtype=float) / s
    dp = None if d is None else (lambda x, p: np.asarray(d(x, s * np.asarray(p, dtype=float)), dtype=float))
    hint = h.p_bound_hint / s
    for _ in range(40):
        try:
            return KineticHamiltonian(func, hint, dp, f"{h.label} rescaled by {s:g}", h.length)
        except ValueError:
            hint *= 2.0
    raise ValueError("rescaled kinetic part is not coercive")


def rescale_component(spec: SystemSpec, k: int, s: float) -> SystemSpec:
    """The system satisfied by ``v`` where ``u_k = s v_k`` and ``u_j = v_j`` otherwise.

    Equation ``k`` is divided by ``s``: its kinetic part becomes
    ``h_k(x, s p) / s`` and its coupling row ``g_k(x, ..., s v_k, ...) / s``.
    Other equations see ``s v_k`` in place of ``u_k``.  With ``s = b_12``
    and ``k = 0`` this is the change of unknowns that turns a monotone
    two-equation system into one with nonnegative row sums.
    """
    if not s > 0:
        raise ValueError("scale factor must be positive")
    law = spec.coupling
    m = spec.m
    kinetic = list(spec.kinetic)
    kinetic[k] = _scaled_kinetic(kinetic[k], s)

    def scale_col(j):
        return s if j == k else 1.0

    if law.kind == "linear":
        rows = []
        for i in range(m):
            row = []
            for j in range(m):
                factor = scale_col(j) / (s if i == k else 1.0)
                entry = law.matrix[i][j]
                row.append(lambda x, e=entry, c=factor: c * np.asarray(e(x), dtype=float))
            rows.append(row)
        new_law = CouplingLaw("linear", m, matrix=tuple(tuple(r) for r in rows), monotone=law.monotone)
    else:
        terms = []
        for i in range(m):
            def term(x, *v, i=i):
                u = [s * np.asarray(v[j], dtype=float) if j == k else v[j] for j in range(m)]
                return law.term(i, x, u) / (s if i == k else 1.0)
            terms.append(term)
        modulus = list(law.modulus)
        new_law = CouplingLaw.nonlinear(terms, theta=law.theta * max(s, 1.0 / s), modulus=modulus,
                                        classes=law.classes, sample_box=law.sample_box)
    return SystemSpec(tuple(kinetic), new_law, spec.grid, f"{spec.name} (component {k} scaled by {s:g})")


def rescale_fields(fields: Sequence[GridField], k: int, s: float) -> list[GridField]:
    """Map original unknowns ``u`` to rescaled ones ``v`` (``v_k = u_k / s``)."""
    return [f * (1.0 / s) if j == k else f for j, f in enumerate(fields)]


def unscale_fields(fields: Sequence[GridField], k: int, s: float) -> list[GridField]:
    """Inverse of :func:`rescale_fields`."""
    return [f * s if j == k else f for j, f in enumerate(fields)]
