"""Single equations ``h(x, Du) + g(x, u) = 0`` and their evolutionary form.

Everything here is built on the Lax-Friedrichs numerical Hamiltonian

    h_LF(x, p_left, p_right) = h(x, (p_left + p_right)/2) - (sigma/2) (p_right - p_left),

which is monotone (nonincreasing in ``p_right``, nondecreasing in ``p_left``)
as long as ``sigma >= |dh/dp|`` on the slopes that occur.

The viscosity ``sigma`` is a function of the field it is applied to (see
:func:`viscosity_for`).  Stationary solves iterate until the solution and
its viscosity are consistent, so :func:`residual` can re-derive ``sigma``
from the field alone and still certify the solver output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .geometry import GridField, SpaceTimeField, TorusGrid, lipschitz_estimate
from .hamiltonian import DECREASING, INCREASING, UNCLASSIFIED, KineticHamiltonian

logger = logging.getLogger(__name__)

SIGMA_SAFETY = 1.1
SIGMA_MIN = 1e-3
SIGMA_RELTOL = 1e-13
SIGMA_P_FLOOR = 1.0


class NonConvergenceError(RuntimeError):
    """A solver hit its iteration budget; ``history`` holds the residuals seen."""

    def __init__(self, message: str, history: Sequence[float] = ()):
        super().__init__(message)
        self.history = list(history)


class InstabilityError(RuntimeError):
    """Explicit time marching left the a-priori envelope."""

    def __init__(self, message: str, time: float, sup: float, bound: float):
        super().__init__(message)
        self.time, self.sup, self.bound = time, sup, bound


@dataclass(frozen=True)
class SchemeParams:
    """Numerical knobs shared by the grid solvers.

    ``viscosity_coeff=None`` selects the field-dependent rule of
    :func:`viscosity_for`; a number fixes ``sigma`` for the whole call.
    ``method`` picks damped Newton (default) or pseudo-time marching for
    stationary solves.
    """

    viscosity_coeff: float | None = None
    cfl: float = 0.9
    pseudo_dt: float | None = None
    tol: float = 1e-8
    max_iters: int = 200_000
    method: str = "newton"
    dt: float | None = None

    def __post_init__(self) -> None:
        if self.viscosity_coeff is not None and not self.viscosity_coeff > 0:
            raise ValueError("viscosity_coeff must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not self.tol > 0 or self.max_iters < 1:
            raise ValueError("tol and max_iters must be positive")
        if self.method not in ("newton", "march"):
            raise ValueError("method must be 'newton' or 'march'")


@dataclass(frozen=True, eq=False)
class ScalarProblem:
    """One equation ``h(x, Du) + u_term(x, u) = 0`` with frozen partners.

    Parameters
    ----------
    h
        Kinetic part.
    u_term
        Vectorized ``(x, u) -> g``; any frozen partner components are already
        baked in (it must accept off-grid ``x``).
    grid
        The torus grid.
    monotonicity
        ``"increasing"``, ``"decreasing"`` or ``"none"``.
    modulus
        Strict monotonicity modulus of ``u_term`` in ``u`` (0 for ``"none"``).
    theta
        Lipschitz constant of ``u_term`` in ``u``.
    frozen
        The frozen partner fields, kept for reporting and bounds.
    du
        Optional exact ``d u_term / du``.
    """

    h: KineticHamiltonian
    u_term: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grid: TorusGrid
    monotonicity: str = INCREASING
    modulus: float = 0.0
    theta: float = 0.0
    frozen: tuple = ()
    du: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.monotonicity not in (INCREASING, DECREASING, UNCLASSIFIED):
            raise ValueError(f"unknown monotonicity class {self.monotonicity!r}")
        if self.monotonicity != UNCLASSIFIED and not self.modulus > 0:
            raise ValueError("a classified problem needs a positive modulus")
        object.__setattr__(self, "theta", max(float(self.theta), float(self.modulus)))
        object.__setattr__(self, "frozen", tuple(self.frozen))

    def zeroth(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.u_term(x, u), dtype=float), np.broadcast_shapes(x.shape, np.shape(u)))

    def zeroth_du(self, x, u) -> np.ndarray:
        if self.du is not None:
            return np.asarray(self.du(x, u), dtype=float) + 0.0 * np.asarray(u)
        u = np.asarray(u, dtype=float)
        step = 1e-6 * (1.0 + np.abs(u))
        return (self.zeroth(x, u + step) - self.zeroth(x, u - step)) / (2.0 * step)

    def zero_state_sup(self) -> float:
        """``max_x |h(x, 0) + u_term(x, 0)|`` over the nodes."""
        x = self.grid.nodes
        return float(np.max(np.abs(self.h(x, np.zeros_like(x)) + self.zeroth(x, np.zeros_like(x)))))

    def frozen_sup(self) -> float:
        return max((float(np.max(np.abs(f.values))) for f in self.frozen), default=0.0)


def linear_problem(h: KineticHamiltonian, grid: TorusGrid, coefficient: float,
                   source: Callable[[np.ndarray], np.ndarray] | float = 0.0) -> ScalarProblem:
    """``h(x, Du) + coefficient * u + source(x) = 0`` (no frozen partner)."""
    src = source if callable(source) else (lambda x, s=float(source): np.full(np.shape(x), s))
    cls = INCREASING if coefficient > 0 else DECREASING if coefficient < 0 else UNCLASSIFIED
    return ScalarProblem(
        h=h,
        u_term=lambda x, u: coefficient * np.asarray(u, dtype=float) + src(np.asarray(x, dtype=float)),
        grid=grid,
        monotonicity=cls,
        modulus=abs(coefficient),
        theta=abs(coefficient),
        du=lambda x, u: np.full(np.broadcast_shapes(np.shape(x), np.shape(u)), float(coefficient)),
    )


def numerical_hamiltonian(h: KineticHamiltonian, x, p_left, p_right, sigma: float) -> np.ndarray:
    """Lax-Friedrichs flux ``h(x, (pl + pr)/2) - (sigma/2)(pr - pl)``."""
    p_left = np.asarray(p_left, dtype=float)
    p_right = np.asarray(p_right, dtype=float)
    return h(x, 0.5 * (p_left + p_right)) - 0.5 * sigma * (p_right - p_left)


def one_sided_slopes(values: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward difference quotients with periodic wrap."""
    right = (np.roll(values, -1) - values) / spacing
    left = np.roll(right, 1)
    return left, right


def max_speed(h: KineticHamiltonian, grid: TorusGrid, p_max: float) -> float:
    """``max |dh/dp|`` over the nodes and ``|p| <= p_max``."""
    ps = np.linspace(-p_max, p_max, 65)
    x = grid.nodes
    return float(np.max(np.abs(h.grad_p(x[:, None], ps[None, :]))))


def viscosity_for(h: KineticHamiltonian, grid: TorusGrid, values: np.ndarray | None = None,
                  p_max: float | None = None) -> float:
    """Lax-Friedrichs viscosity adapted to a field.

    ``sigma = 1.1 max |dh/dp|`` over the nodes and ``|p| <= P``, where ``P``
    is the largest one-sided slope of ``values`` (at least 1) unless
    ``p_max`` is given.  The rule is a continuous function of the field,
    which lets the stationary solvers find a field and viscosity that agree.
    """
    if p_max is None:
        p_max = SIGMA_P_FLOOR
        if values is not None:
            _, right = one_sided_slopes(np.asarray(values, dtype=float), grid.spacing)
            p_max = max(p_max, float(np.max(np.abs(right))))
    return max(SIGMA_MIN, SIGMA_SAFETY * max_speed(h, grid, p_max))


def stationary_operator(u: np.ndarray, prob: ScalarProblem, sigma: float) -> np.ndarray:
    """Nodal values of ``h_LF(x, Du) + u_term(x, u)``."""
    x = prob.grid.nodes
    left, right = one_sided_slopes(u, prob.grid.spacing)
    return numerical_hamiltonian(prob.h, x, left, right, sigma) + prob.zeroth(x, u)


def residual(u: GridField, prob: ScalarProblem, sigma: float | None = None) -> float:
    """Sup norm of the stationary scheme applied to ``u``.

    With ``sigma=None`` the viscosity is derived from ``u`` by
    :func:`viscosity_for`, matching what the solvers use.
    """
    if sigma is None:
        sigma = viscosity_for(prob.h, prob.grid, u.values)
    return float(np.max(np.abs(stationary_operator(u.values, prob, sigma))))


def _jacobian(u: np.ndarray, prob: ScalarProblem, sigma: float) -> sp.csc_matrix:
    n, dx = prob.grid.n, prob.grid.spacing
    x = prob.grid.nodes
    left, right = one_sided_slopes(u, dx)
    hp = prob.h.grad_p(x, 0.5 * (left + right))
    diag = sigma / dx + prob.zeroth_du(x, u)
    upper = hp / (2 * dx) - sigma / (2 * dx)   # d S_k / d u_{k+1}
    lower = -hp / (2 * dx) - sigma / (2 * dx)  # d S_k / d u_{k-1}
    k = np.arange(n)
    rows = np.concatenate([k, k, k])
    cols = np.concatenate([k, (k + 1) % n, (k - 1) % n])
    data = np.concatenate([diag, upper, lower])
    return sp.csc_matrix((data, (rows, cols)), shape=(n, n))


def newton_solve(prob: ScalarProblem, u0: np.ndarray, sigma: float, tol: float,
                 max_iters: int = 100) -> tuple[np.ndarray, list[float]]:
    """Damped Newton iteration on the stationary scheme at fixed ``sigma``.

    The step is halved until the sup residual decreases.  Raises
    :class:`NonConvergenceError` when the line search stalls or the budget
    is spent.
    """
    u = np.array(u0, dtype=float)
    res = stationary_operator(u, prob, sigma)
    history = [float(np.max(np.abs(res)))]
    for _ in range(max_iters):
        if history[-1] <= tol:
            return u, history
        step = spla.spsolve(_jacobian(u, prob, sigma), -res)
        t = 1.0
        while t > 1e-6:
            trial = u + t * step
            trial_res = stationary_operator(trial, prob, sigma)
            r = float(np.max(np.abs(trial_res)))
            if np.isfinite(r) and r < history[-1]:
                break
            t *= 0.5
        else:
            raise NonConvergenceError("Newton line search stalled", history)
        u, res = trial, trial_res
        history.append(r)
    if history[-1] <= tol:
        return u, history
    raise NonConvergenceError(f"Newton did not reach tol={tol:g}", history)


def march_solve(prob: ScalarProblem, u0: np.ndarray, sigma: float, params: SchemeParams) -> tuple[np.ndarray, list[float]]:
    """Pseudo-time marching ``u <- u - tau * S(u)`` (monotone value iteration)."""
    dx = prob.grid.spacing
    tau = params.pseudo_dt or params.cfl / (sigma / dx + max(prob.theta, 1e-12))
    u = np.array(u0, dtype=float)
    history = []
    for it in range(params.max_iters):
        res = stationary_operator(u, prob, sigma)
        r = float(np.max(np.abs(res)))
        if it % 100 == 0:
            history.append(r)
        if r <= params.tol:
            history.append(r)
            return u, history
        if not np.isfinite(r):
            break
        u = u - tau * res
    raise NonConvergenceError(f"pseudo-time marching did not reach tol={params.tol:g}", history)


def _solve_consistent(prob: ScalarProblem, params: SchemeParams, u0: np.ndarray,
                      solver: Callable[[np.ndarray, float], np.ndarray]) -> np.ndarray:
    """Find ``u`` solving the scheme at ``sigma = viscosity_for(u)``.

    A few rounds of ``sigma <- viscosity_for(u(sigma))`` usually settle; if
    they do not, the scalar equation ``viscosity_for(u(sigma)) = sigma`` is
    bracketed and solved with Brent's method.  Fixed ``viscosity_coeff``
    bypasses all of this.
    """
    if params.viscosity_coeff is not None:
        return solver(u0, params.viscosity_coeff)
    cache: dict[float, np.ndarray] = {}
    warm = [np.array(u0, dtype=float)]

    def solve_at(sigma: float) -> np.ndarray:
        if sigma not in cache:
            cache[sigma] = solver(warm[0], sigma)
            warm[0] = cache[sigma]
        return cache[sigma]

    def gap(sigma: float) -> float:
        return viscosity_for(prob.h, prob.grid, solve_at(sigma)) - sigma

    sigma = viscosity_for(prob.h, prob.grid, u0)
    for _ in range(12):
        nxt = viscosity_for(prob.h, prob.grid, solve_at(sigma))
        if abs(nxt - sigma) <= SIGMA_RELTOL * sigma:
            return solve_at(sigma)
        sigma = nxt
    lo = SIGMA_SAFETY * max_speed(prob.h, prob.grid, SIGMA_P_FLOOR)
    if gap(lo) <= 0:
        return solve_at(lo)
    hi = max(sigma, lo) * 1.5
    while gap(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise NonConvergenceError("no self-consistent viscosity found")
    root = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    # polish so the stored field sits exactly at its own viscosity
    sigma = viscosity_for(prob.h, prob.grid, solve_at(root))
    u = solver(solve_at(root), sigma)
    if abs(viscosity_for(prob.h, prob.grid, u) - sigma) > 1e-10 * sigma:
        logger.warning("self-consistent viscosity only approximately reached (sigma=%.6g)", sigma)
    return u


def solve_increasing(prob: ScalarProblem, params: SchemeParams | None = None,
                     init: GridField | None = None) -> GridField:
    """Unique discrete solution of a strictly increasing equation.

    Parameters
    ----------
    prob
        Must be of class ``"increasing"``.
    params
        ``method="newton"`` (default) uses damped Newton on the monotone
        scheme, whose Jacobian is an M-matrix; ``"march"`` uses pseudo-time
        marching.  Newton falls back to marching if its line search stalls.
    init
        Starting guess (zero by default).

    Returns
    -------
    GridField
        Field whose scheme residual, with the viscosity derived from the
        field itself, is at most ``params.tol``.
    """
    params = params or SchemeParams()
    if prob.monotonicity != INCREASING:
        raise ValueError(f"solve_increasing needs an increasing problem, got {prob.monotonicity!r}")
    u0 = np.zeros(prob.grid.n) if init is None else np.array(init.values, dtype=float)

    def solver(u, sigma):
        if params.method == "march":
            return march_solve(prob, u, sigma, params)[0]
        try:
            return newton_solve(prob, u, sigma, params.tol)[0]
        except NonConvergenceError as exc:
            logger.info("Newton failed (%s); falling back to pseudo-time marching", exc)
            return march_solve(prob, u, sigma, params)[0]

    return GridField(prob.grid, _solve_consistent(prob, params, u0, solver))


def f_transform(prob: ScalarProblem) -> ScalarProblem:
    """The problem ``F(x, p, u) = H(x, -p, -u)``.

    Flips the monotonicity class; frozen partners are unchanged.  Applying
    the transform twice gives back an equivalent problem.
    """
    g, d = prob.u_term, prob.du
    flipped = {INCREASING: DECREASING, DECREASING: INCREASING}.get(prob.monotonicity, UNCLASSIFIED)
    return ScalarProblem(
        h=prob.h.reflected(),
        u_term=lambda x, u: g(x, -np.asarray(u, dtype=float)),
        grid=prob.grid,
        monotonicity=flipped,
        modulus=prob.modulus,
        theta=prob.theta,
        frozen=prob.frozen,
        du=None if d is None else (lambda x, u: -np.asarray(d(x, -np.asarray(u, dtype=float)), dtype=float)),
    )


def explicit_dt(sigma: float, theta: float, spacing: float, cfl: float) -> float:
    """Largest step keeping the explicit update order-preserving.

    The update ``u - dt (h_LF + g)`` has nonnegative coefficients when
    ``dt (sigma/dx + theta) <= 1``; the step also respects ``dt <= 1/(2 theta)``.
    """
    dt = cfl / (sigma / spacing + theta)
    if theta > 0:
        dt = min(dt, 0.5 / theta)
    return dt


def _initial_speed(phi: np.ndarray, prob: ScalarProblem, sigma: float) -> float:
    return float(np.max(np.abs(stationary_operator(phi, prob, sigma))))


def evolve_scalar(phi: GridField, prob: ScalarProblem, T: float, params: SchemeParams | None = None,
                  store_every: int = 1) -> SpaceTimeField:
    """Explicit monotone time marching of ``u_t + h(x, Du) + u_term(x, u) = 0``.

    The step ``dt`` is fixed from a viscosity sized for slopes up to
    ``2 (lip(phi) + 1)``.  With ``viscosity_coeff=None`` each step then
    uses the field-adapted viscosity, substepping if that ever exceeds the
    one ``dt`` was sized for.

    Raises
    ------
    InstabilityError
        When the sup norm leaves ten times the a-priori envelope
        ``(|phi| + K t) e^{theta t}`` (the exponential factor is dropped for
        increasing problems).
    """
    params = params or SchemeParams()
    if not T > 0:
        raise ValueError("T must be positive")
    if phi.grid != prob.grid:
        raise ValueError("grid mismatch")
    grid = prob.grid
    dx = grid.spacing
    sigma0 = params.viscosity_coeff or viscosity_for(prob.h, grid, p_max=2.0 * (lipschitz_estimate(phi) + 1.0))
    dt = params.dt or explicit_dt(sigma0, prob.theta, dx, params.cfl)
    n_steps = max(1, math.ceil(T / dt - 1e-9))
    dt = T / n_steps
    u = np.array(phi.values, dtype=float)
    speed = _initial_speed(u, prob, sigma0)
    growth = 0.0 if prob.monotonicity == INCREASING else prob.theta
    base = float(np.max(np.abs(u)))
    frames, times = [u.copy()], [0.0]
    x = grid.nodes
    for step in range(1, n_steps + 1):
        u = _advance(u, prob, x, dt, params, sigma0)
        t = step * dt
        sup = float(np.max(np.abs(u)))
        bound = (base + speed * t) * math.exp(min(growth * t, 700.0))
        if not np.isfinite(sup) or sup > 10.0 * bound + 10.0:
            raise InstabilityError(f"instability at t={t:.4g}: sup={sup:.4g}, envelope={bound:.4g}", t, sup, bound)
        if step % store_every == 0 or step == n_steps:
            frames.append(u.copy())
            times.append(t)
    return SpaceTimeField(grid, dt * store_every, np.array(frames), np.array(times))


def _advance(u: np.ndarray, prob: ScalarProblem, x: np.ndarray, dt: float, params: SchemeParams,
             sigma0: float) -> np.ndarray:
    """One explicit step of size ``dt`` (split into substeps if needed)."""
    dx = prob.grid.spacing
    sigma = params.viscosity_coeff or viscosity_for(prob.h, prob.grid, u)
    limit = explicit_dt(sigma, prob.theta, dx, params.cfl)
    sub = max(1, math.ceil(dt / limit - 1e-12))
    h = dt / sub
    for _ in range(sub):
        u = u - h * stationary_operator(u, prob, sigma)
    return u


def with_params(params: SchemeParams | None, **changes) -> SchemeParams:
    """Copy of ``params`` (or the defaults) with fields replaced."""
    return replace(params or SchemeParams(), **changes)
