"""Weakly coupled systems, the Legendre transform and the structural constants.

A system of ``m`` equations on the circle is written as

    H_i(x, p, u_1, ..., u_m) = h_i(x, p) + g_i(x, u_1, ..., u_m),

with a kinetic part ``h_i`` (coercive in ``p``) and a zeroth-order coupling
``g_i``.  The coupling is either linear, ``g_i = sum_j lambda_ij(x) u_j``, or a
user-supplied nonlinear map with declared Lipschitz and monotonicity
constants.

From a :class:`SystemSpec` this module derives every constant needed to
predict sup-norm bounds of the alternating iteration: the cross/self ratios
``b_ij``, the coupling strength ``b_12 b_21`` (cycle products for ``m > 2``),
and the :class:`BoundsLedger` built on the Lagrangian bound near zero
velocity.

Component indices are zero-based throughout the package.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import TWO_PI, TorusGrid

logger = logging.getLogger(__name__)

INCREASING = "increasing"
DECREASING = "decreasing"
UNCLASSIFIED = "none"
_CLASSES = (INCREASING, DECREASING, UNCLASSIFIED)

DELTA_MENU = tuple(2.0 ** (-k) for k in range(9))
LAGRANGIAN_CAP_LIMIT = 1e6
LEGENDRE_POINTS = 801
_COERCIVITY_SAMPLES = 64

ArrayMap = Callable[..., np.ndarray]


def _fd_derivative(f: Callable[[np.ndarray], np.ndarray], p: np.ndarray) -> np.ndarray:
    step = 1e-6 * (1.0 + np.abs(p))
    return (f(p + step) - f(p - step)) / (2.0 * step)


@dataclass(frozen=True, eq=False)
class KineticHamiltonian:
    """Gradient part ``h(x, p)`` of one equation.

    Parameters
    ----------
    func
        Vectorized map ``(x, p) -> h``.
    p_bound_hint
        Momentum radius beyond which ``h`` exceeds ``max_x h(x, 0)`` by at
        least one.  Used as the search radius for extremization.
    dp
        Optional exact ``dh/dp``; central differences are used otherwise.
    label
        Human-readable description, echoed in summaries.
    length
        Circumference used for the construction-time coercivity sampling.
    """

    func: ArrayMap
    p_bound_hint: float
    dp: ArrayMap | None = None
    label: str = "custom"
    length: float = TWO_PI

    def __post_init__(self) -> None:
        if not self.p_bound_hint > 0:
            raise ValueError("p_bound_hint must be positive")
        xs = np.linspace(0.0, self.length, _COERCIVITY_SAMPLES, endpoint=False)
        self.check_coercive(xs)

    def __call__(self, x, p) -> np.ndarray:
        return np.asarray(self.func(x, p), dtype=float)

    def grad_p(self, x, p) -> np.ndarray:
        if self.dp is not None:
            return np.asarray(self.dp(x, p), dtype=float)
        x = np.asarray(x, dtype=float)
        return _fd_derivative(lambda q: self(x, q), np.asarray(p, dtype=float))

    def check_coercive(self, xs: np.ndarray) -> None:
        """Raise if ``h(x, p) < max h(., 0) + 1`` somewhere with ``|p| >= hint``."""
        top = float(np.max(self(xs, np.zeros_like(xs))))
        for scale in (1.0, 1.5, 2.0, 4.0):
            for sign in (-1.0, 1.0):
                p = np.full_like(xs, sign * scale * self.p_bound_hint)
                low = float(np.min(self(xs, p)))
                if not low >= top + 1.0 - 1e-12:
                    raise ValueError(
                        f"{self.label}: not coercive at |p| = {scale * self.p_bound_hint:.4g} "
                        f"(min h = {low:.4g} < max h(x,0) + 1 = {top + 1:.4g}); increase p_bound_hint"
                    )

    def reflected(self) -> "KineticHamiltonian":
        """The kinetic part ``(x, p) -> h(x, -p)``."""
        f, d = self.func, self.dp
        dp = None if d is None else (lambda x, p: -np.asarray(d(x, -np.asarray(p)), dtype=float))
        return KineticHamiltonian(lambda x, p: f(x, -np.asarray(p)), self.p_bound_hint, dp,
                                  f"reflected({self.label})", self.length)

    def shifted(self, c: float) -> "KineticHamiltonian":
        """The kinetic part ``h - c``."""
        f = self.func
        return KineticHamiltonian(lambda x, p: np.asarray(f(x, p), dtype=float) - c,
                                  self.p_bound_hint, self.dp, f"{self.label} - {c:g}", self.length)


def quadratic(potential: Callable[[np.ndarray], np.ndarray] | None = None, *, label: str | None = None,
              length: float = TWO_PI) -> KineticHamiltonian:
    """``h(x, p) = p**2 + V(x)``, with the coercivity radius computed from ``V``."""
    if potential is None:
        return KineticHamiltonian(lambda x, p: np.asarray(p, dtype=float) ** 2 + 0.0 * np.asarray(x, dtype=float),
                                  1.0, lambda x, p: 2.0 * np.asarray(p, dtype=float) + 0.0 * np.asarray(x, dtype=float),
                                  label or "p^2", length)
    xs = np.linspace(0.0, length, 1024, endpoint=False)
    vs = np.broadcast_to(np.asarray(potential(xs), dtype=float), xs.shape)
    hint = 1.05 * math.sqrt(float(vs.max() - vs.min()) + 1.0)

    def h(x, p):
        x = np.asarray(x, dtype=float)
        return np.asarray(p, dtype=float) ** 2 + potential(x)

    def dh(x, p):
        return 2.0 * np.asarray(p, dtype=float) + 0.0 * np.asarray(x, dtype=float)

    return KineticHamiltonian(h, hint, dh, label or "p^2 + V(x)", length)


def legendre(h: KineticHamiltonian, x, q, radius: float | None = None) -> np.ndarray:
    """Numerical Legendre transform ``sup_p [q p - h(x, p)]``.

    The supremum is located on a uniform ``p``-grid of step ``radius/400`` on
    ``[-radius, radius]`` and refined by three safeguarded Newton steps.
    ``x`` and ``q`` broadcast against each other.

    Raises
    ------
    ValueError
        If the discrete maximizer sits on the search boundary, meaning the
        radius is too small for this velocity (or ``h`` is not coercive).
    """
    if radius is None:
        radius = h.p_bound_hint
    if radius < h.p_bound_hint:
        raise ValueError("radius must be at least p_bound_hint")
    x_arr, q_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(q, dtype=float))
    shape = x_arr.shape
    xf, qf = x_arr.reshape(-1), q_arr.reshape(-1)
    ps = np.linspace(-radius, radius, LEGENDRE_POINTS)
    out = np.empty(xf.shape[0])
    chunk = max(1, 2_000_000 // LEGENDRE_POINTS)
    for start in range(0, xf.shape[0], chunk):
        xs, qs = xf[start:start + chunk], qf[start:start + chunk]
        vals = qs[:, None] * ps[None, :] - h(xs[:, None], ps[None, :])
        k = np.argmax(vals, axis=1)
        if np.any((k == 0) | (k == LEGENDRE_POINTS - 1)):
            bad = int(np.flatnonzero((k == 0) | (k == LEGENDRE_POINTS - 1))[0])
            raise ValueError(f"radius too small: maximizer on the boundary for q={qs[bad]:.6g} (radius {radius:.6g})")
        best = vals[np.arange(k.shape[0]), k]
        p = ps[k]
        step = ps[1] - ps[0]
        for _ in range(3):
            g = qs - h.grad_p(xs, p)
            hpp = (h.grad_p(xs, p + 1e-4) - h.grad_p(xs, p - 1e-4)) / 2e-4
            with np.errstate(divide="ignore", invalid="ignore"):
                trial = np.where(hpp > 1e-12, p + g / hpp, p)
            trial = np.clip(trial, p - step, p + step)
            cand = qs * trial - h(xs, trial)
            improve = cand > best
            best = np.where(improve, cand, best)
            p = np.where(improve, trial, p)
        out[start:start + chunk] = best
    return out.reshape(shape)


def legendre_auto(h: KineticHamiltonian, x, q, radius: float | None = None, doublings: int = 6) -> np.ndarray:
    """:func:`legendre` with the search radius doubled until the maximizer is interior.

    The starting radius is ``max(4 hint, 0.75 max|q| + hint)``, enough for
    quadratic growth.
    """
    if radius is None:
        qmax = float(np.max(np.abs(q))) if np.size(q) else 0.0
        radius = max(4.0 * h.p_bound_hint, 0.75 * qmax + h.p_bound_hint)
    for _ in range(doublings + 1):
        try:
            return legendre(h, x, q, radius)
        except ValueError:
            radius *= 2.0
    raise ValueError("radius too small: Lagrangian infinite or h not coercive for these velocities")


# ---------------------------------------------------------------------------
# coupling laws


def _as_map(entry) -> Callable[[np.ndarray], np.ndarray]:
    if callable(entry):
        return entry
    value = float(entry)
    return lambda x: np.full(np.shape(x), value)


@dataclass(frozen=True, eq=False)
class CouplingLaw:
    """Zeroth-order coupling ``g_i(x, u_1, ..., u_m)``.

    Build instances with :meth:`linear` or :meth:`nonlinear`.  For linear
    laws the monotonicity class of component ``i`` follows from the sign of
    ``lambda_ii``; nonlinear laws declare classes, the Lipschitz bound
    ``theta`` and the monotonicity moduli explicitly.
    """

    kind: str
    m: int
    matrix: tuple = ()
    terms: tuple = ()
    theta: float | None = None
    modulus: tuple | None = None
    classes: tuple | None = None
    declared_b: np.ndarray | None = None
    sample_box: tuple[float, float] = (-10.0, 10.0)
    monotone: bool = False

    @classmethod
    def linear(cls, matrix: Sequence[Sequence[float | Callable]], *, declared_b=None,
               monotone: bool = False) -> "CouplingLaw":
        m = len(matrix)
        if m < 2 or any(len(row) != m for row in matrix):
            raise ValueError("linear coupling needs a square matrix with m >= 2")
        maps = tuple(tuple(_as_map(e) for e in row) for row in matrix)
        b = None if declared_b is None else np.asarray(declared_b, dtype=float)
        return cls("linear", m, matrix=maps, declared_b=b, monotone=monotone)

    @classmethod
    def nonlinear(cls, terms: Sequence[Callable], *, theta: float, modulus: Sequence[float],
                  classes: Sequence[str], declared_b=None, sample_box=(-10.0, 10.0)) -> "CouplingLaw":
        m = len(terms)
        if m < 2 or len(modulus) != m or len(classes) != m:
            raise ValueError("nonlinear coupling needs m >= 2 terms with one modulus and class each")
        for c in classes:
            if c not in _CLASSES:
                raise ValueError(f"unknown monotonicity class {c!r}")
        if not theta > 0:
            raise ValueError("declared theta must be positive")
        b = None if declared_b is None else np.asarray(declared_b, dtype=float)
        return cls("nonlinear", m, terms=tuple(terms), theta=float(theta),
                   modulus=tuple(float(v) for v in modulus), classes=tuple(classes),
                   declared_b=b, sample_box=(float(sample_box[0]), float(sample_box[1])))

    def coefficient(self, i: int, j: int, x) -> np.ndarray:
        """``lambda_ij(x)`` for linear laws."""
        if self.kind != "linear":
            raise TypeError("coefficients exist only for linear coupling")
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.matrix[i][j](x), dtype=float), x.shape)

    def term(self, i: int, x, u: Sequence) -> np.ndarray:
        """Evaluate ``g_i(x, u_1, ..., u_m)``; arguments broadcast."""
        if self.kind == "linear":
            return sum(self.coefficient(i, j, x) * np.asarray(u[j], dtype=float) for j in range(self.m))
        return np.asarray(self.terms[i](x, *u), dtype=float)

    def partial(self, i: int, j: int, x, u: Sequence) -> np.ndarray:
        """``d g_i / d u_j`` (exact for linear laws, central differences otherwise)."""
        if self.kind == "linear":
            return self.coefficient(i, j, x) + 0.0 * np.asarray(u[j], dtype=float)
        uj = np.asarray(u[j], dtype=float)
        step = 1e-6 * (1.0 + np.abs(uj))
        up = list(u)
        dn = list(u)
        up[j] = uj + step
        dn[j] = uj - step
        return (self.term(i, x, up) - self.term(i, x, dn)) / (2.0 * step)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """An ``m``-component weakly coupled system on a torus grid."""

    kinetic: tuple
    coupling: CouplingLaw
    grid: TorusGrid
    name: str = "system"
    validation: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        kin = tuple(self.kinetic)
        object.__setattr__(self, "kinetic", kin)
        if len(kin) < 2 or len(kin) != self.coupling.m:
            raise ValueError(f"need m >= 2 kinetic parts matching the coupling size ({self.coupling.m})")
        for h in kin:
            h.check_coercive(self.grid.nodes)
        self.classes  # classify eagerly so inconsistent signs fail at construction
        if self.coupling.monotone:
            _check_monotone_pattern(self)
        if self.coupling.kind == "nonlinear":
            self.validation.update(_validate_nonlinear(self))

    @property
    def m(self) -> int:
        return len(self.kinetic)

    @property
    def classes(self) -> tuple[str, ...]:
        law = self.coupling
        if law.kind == "nonlinear":
            return law.classes  # type: ignore[return-value]
        out = []
        x = self.grid.nodes
        for i in range(self.m):
            diag = law.coefficient(i, i, x)
            if np.all(diag > 0):
                out.append(INCREASING)
            elif np.all(diag < 0):
                out.append(DECREASING)
            else:
                raise ValueError(f"lambda_{i}{i} changes sign or vanishes on the grid; component unclassifiable")
        return tuple(out)

    def hamiltonian(self, i: int, x, p, u: Sequence) -> np.ndarray:
        """Full ``H_i(x, p, u)``."""
        return self.kinetic[i](x, p) + self.coupling.term(i, x, u)

    def theta(self) -> float:
        """Lipschitz constant of the coupling in the max norm."""
        law = self.coupling
        if law.kind == "nonlinear":
            return float(law.theta)
        x = self.grid.nodes
        rows = [sum(np.abs(law.coefficient(i, j, x)) for j in range(self.m)) for i in range(self.m)]
        return float(max(np.max(r) for r in rows))

    def self_moduli(self) -> np.ndarray:
        """Strict monotonicity moduli ``lambda_ii`` (positive numbers)."""
        law = self.coupling
        if law.kind == "nonlinear":
            return np.asarray(law.modulus, dtype=float)
        x = self.grid.nodes
        return np.array([float(np.min(np.abs(law.coefficient(i, i, x)))) for i in range(self.m)])

    def with_grid(self, grid: TorusGrid) -> "SystemSpec":
        return SystemSpec(self.kinetic, self.coupling, grid, self.name)


def _check_monotone_pattern(spec: SystemSpec) -> None:
    law = spec.coupling
    if law.kind != "linear":
        raise ValueError("the monotone-coupling flag applies to linear coupling only")
    x = spec.grid.nodes
    for i in range(spec.m):
        if not np.all(law.coefficient(i, i, x) > 0):
            raise ValueError(f"monotone pattern violated: lambda_{i}{i} must be positive")
        for j in range(spec.m):
            if j != i and not np.all(law.coefficient(i, j, x) < 0):
                raise ValueError(f"monotone pattern violated: lambda_{i}{j} must be negative")


def _node_subsample(grid: TorusGrid, limit: int = 64) -> np.ndarray:
    stride = max(1, grid.n // limit)
    return grid.nodes[::stride]


def _validate_nonlinear(spec: SystemSpec) -> dict:
    """Sample difference quotients of the nonlinear coupling on the configured box.

    Declared constants are kept; disagreements are logged and reported.
    """
    law = spec.coupling
    lo, hi = law.sample_box
    rng = np.random.default_rng(0)
    xs = _node_subsample(spec.grid)
    m = spec.m
    n_draw = 256
    base = rng.uniform(lo, hi, size=(m, n_draw))
    other = rng.uniform(lo, hi, size=(m, n_draw))
    X = np.repeat(xs, n_draw)
    report = {"theta_sampled": 0.0, "modulus_sampled": [], "warnings": []}
    for i in range(m):
        worst_mod = math.inf
        for j in range(m):
            u = [np.tile(base[k], xs.size) for k in range(m)]
            v = list(u)
            v[j] = np.tile(other[j], xs.size)
            du = u[j] - v[j]
            ok = np.abs(du) > 1e-9
            quot = (law.term(i, X, u) - law.term(i, X, v))[ok] / du[ok]
            report["theta_sampled"] = max(report["theta_sampled"], float(np.max(np.abs(quot))))
            if j == i:
                if law.classes[i] == INCREASING:
                    worst_mod = float(np.min(quot))
                elif law.classes[i] == DECREASING:
                    worst_mod = float(np.min(-quot))
        report["modulus_sampled"].append(worst_mod if math.isfinite(worst_mod) else None)
        if law.classes[i] != UNCLASSIFIED and worst_mod < law.modulus[i] - 1e-9:
            msg = f"component {i}: sampled modulus {worst_mod:.4g} below declared {law.modulus[i]:.4g}"
            report["warnings"].append(msg)
            logger.warning(msg)
    if report["theta_sampled"] > law.theta + 1e-9:
        msg = f"sampled Lipschitz quotient {report['theta_sampled']:.4g} exceeds declared theta {law.theta:.4g}"
        report["warnings"].append(msg)
        logger.warning(msg)
    return report


# ---------------------------------------------------------------------------
# structural constants


def coupling_constants(spec: SystemSpec) -> np.ndarray:
    """Cross/self ratio matrix ``b`` (diagonal set to zero).

    Linear laws give ``b_ij = max_x |lambda_ij / lambda_ii|`` over the nodes.
    Nonlinear laws use the sampled ratio of cross to self difference
    quotients over the configured box; declared values take precedence.
    """
    law = spec.coupling
    m = spec.m
    x = spec.grid.nodes
    b = np.zeros((m, m))
    if law.kind == "linear":
        for i in range(m):
            diag = law.coefficient(i, i, x)
            if np.any(diag == 0):
                k = int(np.flatnonzero(diag == 0)[0])
                raise ValueError(f"lambda_{i}{i} vanishes at node {k}")
            for j in range(m):
                if j != i:
                    b[i, j] = float(np.max(np.abs(law.coefficient(i, j, x) / diag)))
    elif law.declared_b is None:
        b = _sampled_ratios(spec)
    else:
        try:
            b = _sampled_ratios(spec)
        except ValueError as exc:
            logger.info("sampling of coupling ratios failed (%s); using declared values", exc)
            b = np.zeros((m, m))
    if law.declared_b is not None:
        declared = np.array(law.declared_b, dtype=float)
        np.fill_diagonal(declared, 0.0)
        if np.any(b > declared + 1e-9):
            logger.warning("sampled coupling ratios exceed the declared ones; using declared values")
        b = declared
    return b


def _sampled_ratios(spec: SystemSpec) -> np.ndarray:
    law = spec.coupling
    lo, hi = law.sample_box
    m = spec.m
    xs = _node_subsample(spec.grid)
    levels = np.linspace(lo, hi, 9)
    a, c = np.meshgrid(levels, levels, indexing="ij")
    pairs = (a != c)
    ua, va = a[pairs], c[pairs]
    rng = np.random.default_rng(1)
    others = rng.uniform(lo, hi, size=(m, 8))
    b = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            worst = 0.0
            for r in range(others.shape[1]):
                X = np.repeat(xs, ua.size)
                # cross quotient: vary u_j with u_i = 0, the rest fixed
                u = [np.full(X.shape, others[k, r]) for k in range(m)]
                u[i] = np.zeros(X.shape)
                v = list(u)
                u[j] = np.tile(ua, xs.size)
                v[j] = np.tile(va, xs.size)
                cross = np.abs(law.term(i, X, u) - law.term(i, X, v)) / np.abs(u[j] - v[j])
                # self quotient: vary u_i, the rest fixed
                s = [np.full(X.shape, others[k, r]) for k in range(m)]
                t = list(s)
                s[i] = np.tile(ua, xs.size)
                t[i] = np.tile(va, xs.size)
                own = np.abs(law.term(i, X, s) - law.term(i, X, t)) / np.abs(s[i] - t[i])
                cross_max = cross.reshape(xs.size, -1).max(axis=1)
                own_min = own.reshape(xs.size, -1).min(axis=1)
                if np.any(own_min <= 0):
                    if law.classes[i] == UNCLASSIFIED:
                        # no self modulus: the ratio is unbounded by definition
                        worst = math.inf
                        break
                    raise ValueError(f"component {i}: coupling not strictly monotone in its own argument")
                worst = max(worst, float(np.max(cross_max / own_min)))
            b[i, j] = worst
    return b


@dataclass(frozen=True)
class ChainReport:
    """Outcome of the cycle-product test."""

    ok: bool
    worst_cycle: tuple[int, ...]
    worst_product: float


def _cycles(m: int):
    for q in range(m):
        rest = [k for k in range(m) if k != q]
        for length in range(1, m):
            for seq in itertools.permutations(rest, length):
                yield (q, *seq, q)


def max_cycle_product(b: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Largest product ``b[q,a1] b[a1,a2] ... b[al,q]`` over simple cycles."""
    b = np.asarray(b, dtype=float)
    best, arg = -1.0, ()
    for cyc in _cycles(b.shape[0]):
        prod = 1.0
        for s, t in zip(cyc[:-1], cyc[1:]):
            prod *= b[s, t]
        if prod > best:
            best, arg = prod, cyc
    return best, arg


def coupling_strength(spec_or_b: SystemSpec | np.ndarray) -> float:
    """``b_12 b_21`` for two equations, the largest cycle product otherwise."""
    b = coupling_constants(spec_or_b) if isinstance(spec_or_b, SystemSpec) else np.asarray(spec_or_b, dtype=float)
    if b.shape[0] == 2:
        return float(b[0, 1] * b[1, 0])
    return max_cycle_product(b)[0]


def check_chain_condition(spec_or_b: SystemSpec | np.ndarray) -> ChainReport:
    """True iff every simple-cycle product of ``b`` is below one."""
    b = coupling_constants(spec_or_b) if isinstance(spec_or_b, SystemSpec) else np.asarray(spec_or_b, dtype=float)
    worst, cyc = max_cycle_product(b)
    return ChainReport(bool(worst < 1.0), cyc, float(worst))


@dataclass(frozen=True)
class BoundsLedger:
    """Constants that drive the sup-norm predictions of the iteration.

    Attributes
    ----------
    zero_state_sup
        ``max_x |H_i(x, 0, 0, ..., 0)|`` for each component.
    theta
        Lipschitz constant of the coupling in the max norm.
    self_moduli
        Strict monotonicity moduli ``lambda_ii``.
    cross_ratio
        The matrix ``b``.
    ball_radius, lagrangian_cap
        Velocity radius ``delta`` and the bound ``C`` on the Lagrangian for
        speeds up to ``delta`` at the zero state.
    transit_time
        ``mu = diam / delta``: time to join any two points at speed ``delta``.
    growth_factor, offset
        ``A = theta mu e^{theta mu}`` and ``B = C mu e^{theta mu}``.
    inflated_ratio
        ``(1 + A) b + A`` off the diagonal.
    cycle_product, inflated_cycle_product, mixed_cycle_product
        ``b12 b21``, the same with the inflated ratios, and ``b12`` times
        the inflated ``b21``.
    coupling_strength
        Cycle product used for the weak-coupling test.
    """

    zero_state_sup: tuple[float, ...]
    theta: float
    self_moduli: tuple[float, ...]
    cross_ratio: np.ndarray
    ball_radius: float
    lagrangian_cap: float
    lagrangian_cap_raw: float
    transit_time: float
    growth_factor: float
    offset: float
    inflated_ratio: np.ndarray
    cycle_product: float
    inflated_cycle_product: float
    mixed_cycle_product: float
    coupling_strength: float
    classes: tuple[str, ...]
    case_feasibility: dict

    @property
    def m(self) -> int:
        return len(self.zero_state_sup)

    def to_dict(self) -> dict:
        return {
            "zero_state_sup": list(self.zero_state_sup),
            "theta": self.theta,
            "self_moduli": list(self.self_moduli),
            "cross_ratio": self.cross_ratio.tolist(),
            "ball_radius": self.ball_radius,
            "lagrangian_cap": self.lagrangian_cap,
            "lagrangian_cap_raw": self.lagrangian_cap_raw,
            "transit_time": self.transit_time,
            "growth_factor": self.growth_factor,
            "offset": self.offset,
            "inflated_ratio": self.inflated_ratio.tolist(),
            "cycle_product": self.cycle_product,
            "inflated_cycle_product": self.inflated_cycle_product,
            "mixed_cycle_product": self.mixed_cycle_product,
            "coupling_strength": self.coupling_strength,
            "classes": list(self.classes),
            "case_feasibility": self.case_feasibility,
        }


def lagrangian_at_zero_state(spec: SystemSpec, i: int, x, q) -> np.ndarray:
    """``L_i(x, q, 0, ..., 0) = sup_p [q p - h_i(x, p)] - g_i(x, 0)``."""
    zeros = [np.zeros(np.shape(x))] * spec.m
    return legendre_auto(spec.kinetic[i], x, q) - spec.coupling.term(i, x, zeros)


def _lagrangian_cap(spec: SystemSpec, delta: float) -> float:
    x = spec.grid.nodes
    qs = np.linspace(-delta, delta, 21)
    X, Q = np.meshgrid(x, qs, indexing="ij")
    best = -math.inf
    for i in range(spec.m):
        best = max(best, float(np.max(lagrangian_at_zero_state(spec, i, X, Q))))
    return best


def admissible_velocity_radii(cap_of: Callable[[float], float]) -> dict[float, float]:
    """Map each radius of the dyadic menu to its Lagrangian cap, keeping finite caps only.

    Raises ``ValueError("Lagrangian unbounded near 0")`` when no radius qualifies.
    """
    caps = {}
    for delta in DELTA_MENU:
        try:
            cap = cap_of(delta)
        except ValueError:
            continue
        if math.isfinite(cap) and cap <= LAGRANGIAN_CAP_LIMIT:
            caps[delta] = cap
    if not caps:
        raise ValueError("Lagrangian unbounded near 0: no admissible velocity radius in the menu")
    return caps


def growth_constants(theta: float, mu: float, cap: float) -> tuple[float, float]:
    """``(theta mu e^{theta mu}, cap mu e^{theta mu})``, infinite on overflow."""
    expo = math.exp(theta * mu) if theta * mu < 700.0 else math.inf
    return theta * mu * expo, (cap * mu * expo if cap > 0 else 0.0)


def _derived(theta, mu, cap, b):
    growth, offset = growth_constants(theta, mu, cap)
    with np.errstate(all="ignore"):
        bbar = (1.0 + growth) * b + growth
    np.fill_diagonal(bbar, 0.0)
    return growth, offset, bbar


def _mixed_matrix(b, bbar, classes):
    rows = [bbar[i] if classes[i] == DECREASING else b[i] for i in range(len(classes))]
    return np.array(rows)


def bounds_ledger(spec: SystemSpec) -> BoundsLedger:
    """Assemble every constant needed by :func:`predicted_sup_bound`."""
    m = spec.m
    x = spec.grid.nodes
    zeros = [np.zeros_like(x)] * m
    h0 = tuple(float(np.max(np.abs(spec.hamiltonian(i, x, np.zeros_like(x), zeros)))) for i in range(m))
    theta = spec.theta()
    moduli = tuple(float(v) for v in spec.self_moduli())
    b = coupling_constants(spec)
    classes = spec.classes

    caps = admissible_velocity_radii(lambda d: _lagrangian_cap(spec, d))
    delta = max(caps)
    cap_raw = caps[delta]
    cap = max(cap_raw, 0.0)
    mu = spec.grid.diameter / delta
    growth, offset, bbar = _derived(theta, mu, cap, b)

    if m == 2:
        kappa = float(b[0, 1] * b[1, 0])
        kappa_bar = float(bbar[0, 1] * bbar[1, 0])
        kappa_tilde = float(b[0, 1] * bbar[1, 0])
    else:
        kappa = max_cycle_product(b)[0]
        kappa_bar = max_cycle_product(bbar)[0]
        kappa_tilde = max_cycle_product(_mixed_matrix(b, bbar, classes))[0]

    feasibility = {}
    for case in ("a", "b", "c"):
        ok_at = []
        for d, c_d in sorted(caps.items(), reverse=True):
            g_d, _, bb_d = _derived(theta, spec.grid.diameter / d, max(c_d, 0.0), b)
            prod = _case_product(case, b, bb_d, classes)
            if prod < 1.0:
                ok_at.append(d)
        feasibility[case] = {"default_ok": delta in ok_at, "admissible_radii": ok_at}

    return BoundsLedger(
        zero_state_sup=h0,
        theta=theta,
        self_moduli=moduli,
        cross_ratio=b,
        ball_radius=delta,
        lagrangian_cap=cap,
        lagrangian_cap_raw=cap_raw,
        transit_time=mu,
        growth_factor=growth,
        offset=offset,
        inflated_ratio=bbar,
        cycle_product=kappa,
        inflated_cycle_product=kappa_bar,
        mixed_cycle_product=kappa_tilde,
        coupling_strength=coupling_strength(b),
        classes=classes,
        case_feasibility=feasibility,
    )


def _case_product(case, b, bbar, classes) -> float:
    with np.errstate(all="ignore"):
        return _case_product_raw(case, b, bbar, classes)


def _case_product_raw(case, b, bbar, classes) -> float:
    if b.shape[0] == 2:
        if case == "a":
            return float(b[0, 1] * b[1, 0])
        if case == "b":
            return float(bbar[0, 1] * bbar[1, 0])
        return float(b[0, 1] * bbar[1, 0])
    if case == "a":
        return max_cycle_product(b)[0]
    if case == "b":
        return max_cycle_product(bbar)[0]
    return max_cycle_product(_mixed_matrix(b, bbar, classes))[0]


def iteration_case(classes: Sequence[str]) -> str:
    """Which of the three two-equation bounds applies to these classes."""
    return {
        (INCREASING, INCREASING): "a",
        (DECREASING, DECREASING): "b",
        (INCREASING, DECREASING): "c",
    }.get(tuple(classes), "m-general")


def _geometric(ratio: float, n: int) -> float:
    """``sum_{l=0}^{n} ratio**l`` (zero for ``n < 0``)."""
    if n < 0:
        return 0.0
    if abs(1.0 - ratio) < 1e-12:
        return float(n + 1)
    return float((1.0 - ratio ** (n + 1)) / (1.0 - ratio))


def predicted_sup_bound(ledger: BoundsLedger, n: int, case: str, component: int) -> float:
    """Closed-form bound on the sup norm after ``n`` sweeps.

    Sweep ``n`` produces ``u_1^n`` (component 0) and ``u_2^{n+1}``
    (component 1), started from ``u_2^0 = 0``.

    Parameters
    ----------
    ledger
        Constants from :func:`bounds_ledger` (two equations only).
    n
        Sweep index, ``n >= 0``.
    case
        ``"a"`` both increasing, ``"b"`` both decreasing, ``"c"`` the first
        increasing and the second decreasing.
    component
        0 or 1.
    """
    if ledger.m != 2:
        raise ValueError("iteration bounds are stated for two equations only")
    if n < 0 or component not in (0, 1):
        raise ValueError("need n >= 0 and component in {0, 1}")
    r1 = ledger.zero_state_sup[0] / ledger.self_moduli[0]
    r2 = ledger.zero_state_sup[1] / ledger.self_moduli[1]
    b12, b21 = float(ledger.cross_ratio[0, 1]), float(ledger.cross_ratio[1, 0])
    bb12, bb21 = float(ledger.inflated_ratio[0, 1]), float(ledger.inflated_ratio[1, 0])
    A, B = ledger.growth_factor, ledger.offset
    if case == "a":
        k = ledger.cycle_product
        if component == 0:
            return r1 * _geometric(k, n) + b12 * r2 * _geometric(k, n - 1)
        return r2 * _geometric(k, n) + b21 * r1 * _geometric(k, n)
    if case == "b":
        k = ledger.inflated_cycle_product
        s_n, s_prev = _geometric(k, n), _geometric(k, n - 1)
        if component == 0:
            return (1 + A) * r1 * s_n + bb12 * (1 + A) * r2 * s_prev + (s_n + bb12 * s_prev) * B
        return (1 + A) * r2 * s_n + bb21 * (1 + A) * r1 * s_n + (s_n + bb21 * s_n) * B
    if case == "c":
        k = ledger.mixed_cycle_product
        s_n, s_prev = _geometric(k, n), _geometric(k, n - 1)
        if component == 0:
            return r1 * s_n + b12 * (1 + A) * r2 * s_prev + b12 * B * s_prev
        return (1 + A) * r2 * s_n + bb21 * r1 * s_n + B * s_n
    raise ValueError(f"unknown case {case!r}")


def limit_sup_bound(ledger: BoundsLedger, case: str, component: int) -> float:
    """The ``n -> infinity`` value of :func:`predicted_sup_bound` (``inf`` if the sums diverge)."""
    k = {"a": ledger.cycle_product, "b": ledger.inflated_cycle_product, "c": ledger.mixed_cycle_product}[case]
    if k >= 1.0:
        return math.inf
    # the bounds are affine in the geometric sums, which converge to 1/(1-k)
    n = 1
    while k ** n > 1e-16 and n < 1 << 20:
        n *= 2
    return predicted_sup_bound(ledger, n, case, component)
