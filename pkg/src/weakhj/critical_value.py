"""Critical values of two-equation systems by vanishing discount.

For a pair of kinetic parts ``h_1, h_2`` and positive rates
``Lambda_1, Lambda_2`` the critical system

    h_1(x, Du_1) + Lambda_1 (u_1 - u_2) = c,
    h_2(x, Du_2) + Lambda_2 (u_2 - u_1) = d,

has solutions for exactly one ``d = alpha(c)``.  It is found by adding a
small discount ``eps * u_2`` to the second equation, solving the resulting
strictly monotone system, and reading off ``-eps * u_2(x0)`` as
``eps -> 0``.  The function ``alpha`` is nonincreasing and Lipschitz, and
``alpha(c) - c`` has exactly one root ``c0``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .coupled_solver import coupled_newton, coupled_residual, gauss_seidel
from .geometry import GridField, TorusGrid, lipschitz_estimate, sup_norm
from .hamiltonian import CouplingLaw, KineticHamiltonian, SystemSpec, _as_map
from .scalar_solver import SchemeParams, with_params

logger = logging.getLogger(__name__)

DEFAULT_EPS = tuple(0.1 * 2.0 ** (-k) for k in range(8))
THREADS_ENV = "WEAKHJ_THREADS"


class BoundViolation(RuntimeError):
    """A quantity left an a-priori bound; ``details`` holds the numbers."""

    def __init__(self, message: str, details: dict):
        super().__init__(message)
        self.details = details


def thread_count(tasks: int) -> int:
    """Worker count for parallel sweeps, capped by ``WEAKHJ_THREADS``."""
    cap = os.environ.get(THREADS_ENV)
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            logger.warning("ignoring non-integer %s=%r", THREADS_ENV, cap)
    return max(1, min(limit, tasks))


# ---------------------------------------------------------------------------
# the discounted family


def _kinetic_min(h: KineticHamiltonian, grid: TorusGrid) -> float:
    ps = np.linspace(-4.0 * h.p_bound_hint, 4.0 * h.p_bound_hint, 801)
    return float(np.min(h(grid.nodes[:, None], ps[None, :])))


def _gradient_radius(h: KineticHamiltonian, grid: TorusGrid, level: float) -> float:
    """Largest ``|p|`` with ``min_x h(x, p) <= level`` (the slope bound implied by ``h(x, Du) <= level``)."""
    x = grid.nodes[:, None]
    radius = 4.0 * h.p_bound_hint
    for _ in range(60):
        if float(np.min(h(x, np.array([[radius, -radius]])))) > level:
            break
        radius *= 2.0
    ps = np.linspace(-radius, radius, 4001)
    low = np.min(h(x, ps[None, :]), axis=0)
    inside = np.abs(ps[low <= level])
    return float(inside.max()) if inside.size else 0.0


@dataclass(frozen=True, eq=False)
class DiscountedSpec:
    """Data of the critical system and its discounted approximations.

    Parameters
    ----------
    kinetic
        ``(h_1, h_2)``.
    rates
        ``(Lambda_1, Lambda_2)``: positive constants or maps of ``x``.
    grid
        Torus grid.
    flags
        Declared structural properties (e.g. ``{"strictly_convex": True}``).
        They are recorded, not verified.
    """

    kinetic: tuple
    rates: tuple
    grid: TorusGrid
    flags: dict = field(default_factory=dict)
    name: str = "critical"

    def __post_init__(self) -> None:
        if len(self.kinetic) != 2 or len(self.rates) != 2:
            raise ValueError("the critical system has exactly two equations")
        rates = tuple(_as_map(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "kinetic", tuple(self.kinetic))
        for k, lam in enumerate(self.rate_values()):
            if not np.all(lam > 0):
                raise ValueError(f"rate {k + 1} must be strictly positive at every node")

    def rate_values(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.grid.nodes
        return tuple(np.broadcast_to(np.asarray(r(x), dtype=float), x.shape).copy() for r in self.rates)

    def with_grid(self, grid: TorusGrid) -> "DiscountedSpec":
        return DiscountedSpec(self.kinetic, self.rates, grid, dict(self.flags), self.name)

    @property
    def ratio_bound(self) -> float:
        """``max Lambda_2 / min Lambda_1``: Lipschitz constant of ``alpha``."""
        l1, l2 = self.rate_values()
        return float(l2.max() / l1.min())

    @property
    def reverse_ratio_bound(self) -> float:
        """``max Lambda_1 / min Lambda_2``."""
        l1, l2 = self.rate_values()
        return float(l1.max() / l2.min())

    def system(self, eps: float, c: float, d: float = 0.0) -> SystemSpec:
        """The system with discount ``eps`` on component 2 and right-hand sides ``(c, d)``."""
        if eps < 0:
            raise ValueError("discount must be nonnegative")
        r1, r2 = self.rates
        h1 = self.kinetic[0].shifted(c) if c else self.kinetic[0]
        h2 = self.kinetic[1].shifted(d) if d else self.kinetic[1]
        neg = lambda r: (lambda x: -np.asarray(r(x), dtype=float))
        diag2 = lambda x: eps + np.asarray(r2(x), dtype=float)
        law = CouplingLaw.linear([[r1, neg(r1)], [neg(r2), diag2]], monotone=True)
        return SystemSpec((h1, h2), law, self.grid, f"{self.name} eps={eps:g} c={c:g}")

    def critical_system(self, c: float, d: float) -> SystemSpec:
        """The undiscounted system (no monotone flag: it is only degenerate-monotone)."""
        r1, r2 = self.rates
        neg = lambda r: (lambda x: -np.asarray(r(x), dtype=float))
        law = CouplingLaw.linear([[r1, neg(r1)], [neg(r2), r2]])
        return SystemSpec((self.kinetic[0].shifted(c), self.kinetic[1].shifted(d)), law, self.grid,
                          f"{self.name} c={c:g} d={d:g}")

    def a_priori(self, c: float = 0.0) -> dict:
        """Bounds on ``eps u_2`` and on the slopes, uniform in ``eps``.

        ``c`` is absorbed into ``h_1``.  Returns the lower and upper bound
        on ``eps u_2``, the symmetric bound used for quick checks, and the
        slope radii implied by the bounds on ``h_i(x, Du_i)``.
        """
        x = self.grid.nodes
        h1 = lambda xx, p: self.kinetic[0](xx, p) - c
        h2 = self.kinetic[1]
        zero1 = float(np.max(np.abs(h1(x, np.zeros_like(x)))))
        zero2 = float(np.max(np.abs(h2(x, np.zeros_like(x)))))
        min1 = _kinetic_min(self.kinetic[0], self.grid) - c
        min2 = _kinetic_min(h2, self.grid)
        iota, iota_t = self.ratio_bound, self.reverse_ratio_bound
        lower = -(iota * zero1 + zero2)
        upper = iota * abs(min1) + abs(min2)
        level1 = iota_t * (iota * zero1 + zero2 + abs(min2))
        level2 = iota * zero1 + zero2 + iota * abs(min1)
        shifted1 = self.kinetic[0].shifted(c)
        return {
            "iota": iota,
            "iota_tilde": iota_t,
            "eps_u2_lower": lower,
            "eps_u2_upper": upper,
            "eps_u2_abs": iota * zero1 + zero2 + iota * abs(min1) + abs(min2),
            "kinetic_level": [level1, level2],
            "slope_bound": [_gradient_radius(shifted1, self.grid, level1),
                            _gradient_radius(h2, self.grid, level2)],
        }


# ---------------------------------------------------------------------------
# discounted solves


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    fields: list
    residuals: list
    sweep_change: float
    agreement: float
    effective_strength: float
    certified: bool


def solve_discounted(dspec: DiscountedSpec, eps: float, c: float, params: SchemeParams | None = None,
                     certify: bool = True, init: Sequence[GridField] | None = None) -> DiscountedSolution:
    """Unique discrete solution of the discounted system.

    The system is solved monolithically by Newton's method, polished past
    ``tol`` because its conditioning degrades like ``1 / eps``.  With ``certify`` the output is
    checked by one alternating sweep with cold-started component solves
    (it must not move the fields by more than ``10 tol``) and by a second Newton run from a different start (the two
    must agree to ``10 tol``).
    """
    params = params or SchemeParams()
    if not eps > 0:
        raise ValueError("discount must be positive")
    spec = dspec.system(eps, c)
    tight = params
    fields = coupled_newton(spec, init, tight)
    res = coupled_residual(spec, fields)
    l1, l2 = dspec.rate_values()
    strength = float(np.max(l2 / (eps + l2)))
    sweep_change = agreement = 0.0
    certified = True
    if certify:
        trace = gauss_seidel(spec, init=fields, params=tight, max_sweeps=1, warm_start=False)
        sweep_change = max(sup_norm(a, b) for a, b in zip(trace.final, fields))
        shift = 1.0 + abs(c) / eps
        other = coupled_newton(spec, [f + shift for f in fields], tight)
        agreement = max(sup_norm(a, b) for a, b in zip(other, fields))
        certified = sweep_change <= 10 * params.tol and agreement <= 10 * params.tol
        if not certified:
            logger.warning("discounted solve eps=%g c=%g not certified (sweep %.3g, agreement %.3g)",
                           eps, c, sweep_change, agreement)
    return DiscountedSolution(fields, res, sweep_change, agreement, strength, certified)


# ---------------------------------------------------------------------------
# vanishing discount


@dataclass(frozen=True, eq=False)
class CriticalResult:
    """Estimate of ``alpha(c)`` and everything behind it.

    Attributes
    ----------
    alpha
        ``-eps u_2(x0)`` at the smallest discount.
    pair
        Fields normalized so that the second vanishes at the anchor.
    anchor_index
        Node index of ``x0``.
    eps_sequence
        One record per discount: ``eps``, ``eps_u2_x0`` and diagnostics.
    ledger_bounds
        A-priori constants (see :meth:`DiscountedSpec.a_priori`).
    """

    c: float
    alpha: float
    pair: list
    anchor_index: int
    eps_sequence: list
    ledger_bounds: dict
    extrapolation: dict
    second_anchor: dict
    critical_residual: list
    checks: dict

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "alpha": self.alpha,
            "anchor_index": self.anchor_index,
            "eps_sequence": self.eps_sequence,
            "ledger_bounds": self.ledger_bounds,
            "extrapolation": self.extrapolation,
            "second_anchor": self.second_anchor,
            "critical_residual": self.critical_residual,
            "checks": self.checks,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    def eps_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eps", "eps_u2_x0"])
        for rec in self.eps_sequence:
            writer.writerow([repr(rec["eps"]), repr(rec["eps_u2_x0"])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _extrapolate(eps: Sequence[float], alphas: Sequence[float]) -> dict:
    out = {"differences": [abs(a - b) for a, b in zip(alphas[:-1], alphas[1:])]}
    diffs = out["differences"]
    out["stabilizing"] = bool(len(diffs) >= 2 and all(b <= a + 1e-12 for a, b in zip(diffs[:-1], diffs[1:])))
    if len(alphas) >= 2:
        r = eps[-2] / eps[-1]
        out["richardson"] = (r * alphas[-1] - alphas[-2]) / (r - 1.0)
    if len(alphas) >= 3:
        r0 = eps[-3] / eps[-2]
        earlier = (r0 * alphas[-2] - alphas[-3]) / (r0 - 1.0)
        out["richardson_previous"] = earlier
        out["richardson_spread"] = abs(out["richardson"] - earlier)
    return out


def vanishing_discount(dspec: DiscountedSpec, c: float, eps_list: Sequence[float] | None = None,
                       anchor_index: int = 0, params: SchemeParams | None = None,
                       second_anchor: int | None = None, slack: float = 1e-6,
                       lipschitz_slack: float | None = None, certify: bool = True) -> CriticalResult:
    """Estimate ``alpha(c)`` from a decreasing sequence of discounts.

    Parameters
    ----------
    eps_list
        Strictly decreasing discounts ending at or below ``1e-3``; the
        default is ``0.1 * 2**-k`` for ``k = 0..7``.
    anchor_index
        The normalization node ``x0``.
    second_anchor
        Node used to confirm that the estimate does not depend on the
        anchor (default: the node opposite ``x0``).
    slack
        Added to the bounds on ``eps u_2``.
    lipschitz_slack
        Added to the slope bounds; defaults to ``0.05 * bound + 1``.

    Raises
    ------
    BoundViolation
        When some ``eps u_2`` leaves its a-priori interval.
    """
    params = params or SchemeParams()
    eps_list = list(DEFAULT_EPS if eps_list is None else eps_list)
    if not eps_list or any(b >= a for a, b in zip(eps_list[:-1], eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if eps_list[-1] > 1e-3:
        raise ValueError("the smallest discount must be at most 1e-3")
    grid = dspec.grid
    if not 0 <= anchor_index < grid.n:
        raise ValueError(f"anchor index {anchor_index} outside the grid")
    second = (anchor_index + grid.n // 2) % grid.n if second_anchor is None else second_anchor
    bounds = dspec.a_priori(c)
    records = []
    solution = None
    lip_ok = True
    for eps in eps_list:
        solution = solve_discounted(dspec, eps, c, params, certify=certify,
                                    init=None if solution is None else solution.fields)
        u1, u2 = solution.fields
        value = eps * float(u2.values[anchor_index])
        lo, hi = eps * float(u2.values.min()), eps * float(u2.values.max())
        lips = [lipschitz_estimate(u1), lipschitz_estimate(u2)]
        lip_limits = []
        for k in range(2):
            extra = (0.05 * bounds["slope_bound"][k] + 1.0) if lipschitz_slack is None else lipschitz_slack
            lip_limits.append(bounds["slope_bound"][k] + extra)
        rec = {
            "eps": eps,
            "eps_u2_x0": value,
            "eps_u2_min": lo,
            "eps_u2_max": hi,
            "bound_ok": bool(lo >= bounds["eps_u2_lower"] - slack and hi <= bounds["eps_u2_upper"] + slack),
            "lipschitz": lips,
            "lipschitz_ok": bool(all(l <= m for l, m in zip(lips, lip_limits))),
            "residual": max(solution.residuals),
            "certified": solution.certified,
            "sweep_change": solution.sweep_change,
            "agreement": solution.agreement,
        }
        records.append(rec)
        lip_ok = lip_ok and rec["lipschitz_ok"]
        if not rec["bound_ok"]:
            raise BoundViolation(
                f"eps*u2 left its a-priori interval at eps={eps:g}: [{lo:.6g}, {hi:.6g}] not in "
                f"[{bounds['eps_u2_lower']:.6g}, {bounds['eps_u2_upper']:.6g}]",
                {"record": rec, "bounds": bounds},
            )
    assert solution is not None
    u1, u2 = solution.fields
    eps = eps_list[-1]
    shift = float(u2.values[anchor_index])
    pair = [u1 - shift, u2 - shift]
    alpha = -eps * shift
    alpha_second = -eps * float(u2.values[second])
    alphas = [-r["eps_u2_x0"] for r in records]
    ce_res = coupled_residual(dspec.critical_system(c, alpha), pair)
    checks = {
        "step1_bounds": all(r["bound_ok"] for r in records),
        "equi_lipschitz": lip_ok,
        "anchor_value": float(pair[1].values[anchor_index]),
        "certified": all(r["certified"] for r in records),
    }
    return CriticalResult(
        c=float(c),
        alpha=alpha,
        pair=pair,
        anchor_index=anchor_index,
        eps_sequence=records,
        ledger_bounds=bounds,
        extrapolation=_extrapolate(eps_list, alphas),
        second_anchor={"index": second, "alpha": alpha_second, "gap": abs(alpha - alpha_second)},
        critical_residual=ce_res,
        checks=checks,
    )


# ---------------------------------------------------------------------------
# alpha as a function of c


@dataclass(frozen=True, eq=False)
class AlphaCurve:
    points: list
    fitted_slope: float
    intercept: float
    monotone_ok: bool
    lipschitz_ok: bool
    lipschitz_constant: float
    violations: list
    results: list

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["c", "alpha"])
        for c, a in self.points:
            writer.writerow([repr(c), repr(a)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "fitted_slope": self.fitted_slope,
            "intercept": self.intercept,
            "monotone_ok": self.monotone_ok,
            "lipschitz_ok": self.lipschitz_ok,
            "lipschitz_constant": self.lipschitz_constant,
            "violations": self.violations,
        }


def _parallel_map(func: Callable, items: Sequence, threads: int | None = None) -> list:
    workers = thread_count(len(items)) if threads is None else max(1, min(threads, len(items)))
    if workers == 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def alpha_curve(dspec: DiscountedSpec, c_list: Sequence[float], eps_list: Sequence[float] | None = None,
                params: SchemeParams | None = None, slack: float = 1e-2, threads: int | None = None,
                anchor_index: int = 0) -> AlphaCurve:
    """``alpha`` on an increasing list of ``c`` values, with shape checks.

    Every pair ``c_1 > c_2`` is tested for ``alpha(c_1) <= alpha(c_2) + slack``
    and ``|alpha(c_1) - alpha(c_2)| <= iota (c_1 - c_2) + slack``, with
    ``iota = max Lambda_2 / min Lambda_1``.  The slope of the least-squares
    line through the points is reported as well.
    """
    c_list = [float(c) for c in c_list]
    if len(c_list) < 3:
        raise ValueError("need at least three values of c")
    if any(b <= a for a, b in zip(c_list[:-1], c_list[1:])):
        raise ValueError("c_list must be strictly increasing")
    results = _parallel_map(lambda c: vanishing_discount(dspec, c, eps_list, anchor_index, params), c_list, threads)
    alphas = [r.alpha for r in results]
    iota = dspec.ratio_bound
    violations = []
    mono_ok = lip_ok = True
    for a in range(len(c_list)):
        for b in range(a):
            c1, c2 = c_list[a], c_list[b]
            d = alphas[a] - alphas[b]
            if d > slack:
                mono_ok = False
                violations.append({"kind": "monotone", "c1": c1, "c2": c2, "difference": d})
            if abs(d) > iota * (c1 - c2) + slack:
                lip_ok = False
                violations.append({"kind": "lipschitz", "c1": c1, "c2": c2, "difference": d})
    slope, intercept = np.polyfit(c_list, alphas, 1)
    return AlphaCurve(list(zip(c_list, alphas)), float(slope), float(intercept), mono_ok, lip_ok, iota,
                      violations, results)


def discount_comparison(dspec: DiscountedSpec, eps: float, c1: float, c2: float,
                        params: SchemeParams | None = None, slack: float = 1e-8) -> dict:
    """Order and gap between discounted solutions for ``c1 > c2``.

    Checks ``u_2(c1) >= u_2(c2)`` pointwise and
    ``u_2(c1) - u_2(c2) <= max Lambda_2 / (eps min Lambda_1) (c1 - c2)``.
    """
    if not c1 > c2:
        raise ValueError("need c1 > c2")
    a = solve_discounted(dspec, eps, c1, params, certify=False).fields[1].values
    b = solve_discounted(dspec, eps, c2, params, certify=False).fields[1].values
    gap_bound = dspec.ratio_bound / eps * (c1 - c2)
    diff = a - b
    return {
        "ordered": bool(diff.min() >= -slack),
        "min_difference": float(diff.min()),
        "max_difference": float(diff.max()),
        "gap_bound": gap_bound,
        "gap_ok": bool(diff.max() <= gap_bound + slack * max(1.0, gap_bound)),
    }


# ---------------------------------------------------------------------------
# the fixed point alpha(c0) = c0


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    c0: float
    alpha: float
    gap: float
    iterations: int
    bracket: tuple
    history: list
    result: CriticalResult


def default_bracket(dspec: DiscountedSpec) -> tuple[float, float]:
    """A bracket that must contain ``c0`` (from the a-priori bounds on ``alpha(0)``)."""
    b = dspec.a_priori(0.0)
    width = max(abs(b["eps_u2_lower"]), abs(b["eps_u2_upper"])) + 1.0
    return (-width, width)


def find_c0(dspec: DiscountedSpec, bracket: tuple[float, float] | None = None, tol_c: float = 1e-4,
            params: SchemeParams | None = None, eps_list: Sequence[float] | None = None,
            max_iters: int = 100) -> FixedPointResult:
    """Bisection for the root of ``g(c) = alpha(c) - c``.

    ``g`` decreases with slope at most ``-1``, so a bracket with a sign
    change holds exactly one root.  Iteration stops once ``|g| <= tol_c``
    or the bracket is shorter than ``tol_c``.
    """
    lo, hi = default_bracket(dspec) if bracket is None else (float(bracket[0]), float(bracket[1]))
    if not lo < hi:
        raise ValueError("bracket must satisfy c_lo < c_hi")
    history = []

    def g(c):
        res = vanishing_discount(dspec, c, eps_list, params=params, certify=False)
        history.append({"c": c, "alpha": res.alpha, "g": res.alpha - c})
        return res.alpha - c, res

    g_lo, _ = g(lo)
    g_hi, res_hi = g(hi)
    if g_lo == 0:
        hi, g_hi = lo, g_lo
    if g_lo * g_hi > 0:
        raise ValueError(f"invalid bracket: alpha(c) - c has the same sign at {lo:g} ({g_lo:.4g}) and {hi:g} ({g_hi:.4g})")
    mid, g_mid, res_mid = hi, g_hi, res_hi
    it = 0
    for it in range(1, max_iters + 1):
        mid = 0.5 * (lo + hi)
        g_mid, res_mid = g(mid)
        if abs(g_mid) <= tol_c:
            break
        if (g_mid > 0) == (g_lo > 0):
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
    return FixedPointResult(mid, res_mid.alpha, g_mid, it, (lo, hi), history, res_mid)
