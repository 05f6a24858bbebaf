"""JSON configuration files for systems, discounted families and numerics.

Schema (all keys optional unless marked)::

    {
      "name": "label",
      "grid": {"n": 256, "length": "2*pi"},
      "components": [                                   # required
        {"kinetic": "quadratic"},
        {"kinetic": "quadratic_plus_potential", "potential": "sin(x)"},
        {"kinetic": "custom", "expression": "abs(p)**3 + cos(x)",
         "p_bound_hint": 2.0, "derivative": "3*p*abs(p)"}
      ],
      "coupling": {                                     # required for systems
        "kind": "linear",
        "matrix": [[1, -0.4], ["-0.4 + 0.1*sin(x)", 1]],
        "monotone": true,
        "declared_b": [[0, 0.5], [0.5, 0]]
      },
      "initial": ["sin(x)", "cos(x)"],
      "evolve": {"T": 6.283, "period": 6.283, "store_every": 10,
                 "long_time": false, "t_max": 200, "window": 1.0},
      "critical": {"rates": [2, 1], "c": 0, "c_list": [-1, 0, 1],
                   "eps_list": [0.1, 0.05], "anchor_index": 0,
                   "bracket": [-2, 2], "tol_c": 1e-4, "flags": {}},
      "numerics": {"tol": 1e-8, "cfl": 0.9, "viscosity": null,
                   "method": "newton", "max_sweeps": 200},
      "seed": 0
    }

A nonlinear coupling block instead reads::

    {"kind": "nonlinear", "terms": ["u1**2 - u2 - 1", "u2**2 + u1 - 1"],
     "theta": 4, "modulus": [0, 0], "classes": ["none", "none"],
     "sample_box": [-1.5, 1.5]}

Expressions may use ``x`` (and ``p`` in kinetic parts, ``u1 .. um`` in
nonlinear terms), the constants ``pi`` and ``e`` and the usual elementary
functions.  Component indices in expressions are one-based; everywhere
else in the package they are zero-based.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .expressions import ExpressionError, compile_expression
from .geometry import TWO_PI, GridField, TorusGrid, make_grid, sample
from .hamiltonian import CouplingLaw, KineticHamiltonian, SystemSpec, quadratic
from .scalar_solver import SchemeParams


class ConfigError(ValueError):
    """The configuration is malformed or describes an invalid system."""


@dataclass(frozen=True)
class NumericsConfig:
    params: SchemeParams
    max_sweeps: int = 200


def load_config(path: str | Path) -> dict:
    """Read a JSON config file."""
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _number(value: Any, what: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{what}: expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(compile_expression(value, [])())
        except ExpressionError as exc:
            raise ConfigError(f"{what}: {exc}") from None
    raise ConfigError(f"{what}: expected a number or constant expression, got {value!r}")


def _map_of_x(value: Any, what: str):
    try:
        return compile_expression(value, ["x"])
    except ExpressionError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def build_grid(cfg: dict, n_override: int | None = None) -> TorusGrid:
    block = cfg.get("grid", {})
    n = n_override if n_override is not None else block.get("n", 256)
    length = _number(block.get("length", TWO_PI), "grid.length")
    try:
        return make_grid(int(n), length)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_kinetic(entry: dict, index: int, length: float) -> KineticHamiltonian:
    kind = entry.get("kinetic", "quadratic")
    try:
        if kind == "quadratic":
            return quadratic(label="p^2", length=length)
        if kind == "quadratic_plus_potential":
            if "potential" not in entry:
                raise ConfigError(f"component {index + 1}: quadratic_plus_potential needs 'potential'")
            pot = _map_of_x(entry["potential"], f"component {index + 1} potential")
            return quadratic(pot, label=f"p^2 + {entry['potential']}", length=length)
        if kind == "custom":
            if "expression" not in entry or "p_bound_hint" not in entry:
                raise ConfigError(f"component {index + 1}: custom kinetic needs 'expression' and 'p_bound_hint'")
            func = compile_expression(entry["expression"], ["x", "p"])
            dp = compile_expression(entry["derivative"], ["x", "p"]) if "derivative" in entry else None
            return KineticHamiltonian(func, _number(entry["p_bound_hint"], "p_bound_hint"), dp,
                                      str(entry["expression"]), length)
    except ExpressionError as exc:
        raise ConfigError(f"component {index + 1}: {exc}") from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"component {index + 1}: {exc}") from None
    raise ConfigError(f"component {index + 1}: unknown kinetic kind {kind!r}")


def build_coupling(block: dict, m: int) -> CouplingLaw:
    kind = block.get("kind", "linear")
    declared = block.get("declared_b")
    try:
        if kind == "linear":
            matrix = block.get("matrix")
            if matrix is None or len(matrix) != m or any(len(r) != m for r in matrix):
                raise ConfigError(f"coupling.matrix must be {m}x{m}")
            maps = [[_map_of_x(e, f"coupling.matrix[{i}][{j}]") for j, e in enumerate(row)]
                    for i, row in enumerate(matrix)]
            return CouplingLaw.linear(maps, declared_b=declared, monotone=bool(block.get("monotone", False)))
        if kind == "nonlinear":
            names = ["x"] + [f"u{k + 1}" for k in range(m)]
            terms = block.get("terms")
            if terms is None or len(terms) != m:
                raise ConfigError(f"coupling.terms must list {m} expressions")
            funcs = [compile_expression(t, names) for t in terms]
            return CouplingLaw.nonlinear(
                funcs,
                theta=_number(block.get("theta", 0), "coupling.theta"),
                modulus=[_number(v, "coupling.modulus") for v in block.get("modulus", [0] * m)],
                classes=block.get("classes", ["none"] * m),
                declared_b=declared,
                sample_box=tuple(block.get("sample_box", (-10.0, 10.0))),
            )
    except ExpressionError as exc:
        raise ConfigError(f"coupling: {exc}") from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"coupling: {exc}") from None
    raise ConfigError(f"unknown coupling kind {kind!r}")


def build_kinetics(cfg: dict, grid: TorusGrid) -> list[KineticHamiltonian]:
    comps = cfg.get("components")
    if not comps:
        raise ConfigError("config needs a non-empty 'components' list")
    return [build_kinetic(c, i, grid.length) for i, c in enumerate(comps)]


def build_system(cfg: dict, n_override: int | None = None) -> SystemSpec:
    """Construct and validate the :class:`SystemSpec` described by ``cfg``."""
    grid = build_grid(cfg, n_override)
    kinetic = build_kinetics(cfg, grid)
    if "coupling" not in cfg:
        raise ConfigError("config needs a 'coupling' block")
    law = build_coupling(cfg["coupling"], len(kinetic))
    try:
        return SystemSpec(tuple(kinetic), law, grid, cfg.get("name", "system"))
    except ValueError as exc:
        raise ConfigError(f"invalid system: {exc}") from None


def build_discounted(cfg: dict, n_override: int | None = None):
    """Construct the :class:`~weakhj.critical_value.DiscountedSpec` of a config."""
    from .critical_value import DiscountedSpec

    grid = build_grid(cfg, n_override)
    kinetic = build_kinetics(cfg, grid)
    block = cfg.get("critical", {})
    rates = block.get("rates")
    if rates is None or len(rates) != 2 or len(kinetic) != 2:
        raise ConfigError("critical configs need two components and 'critical.rates' with two entries")
    maps = [_map_of_x(r, f"critical.rates[{k}]") for k, r in enumerate(rates)]
    try:
        return DiscountedSpec(tuple(kinetic), tuple(maps), grid, dict(block.get("flags", {})), cfg.get("name", "critical"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_initial(cfg: dict, grid: TorusGrid, m: int) -> list[GridField]:
    init = cfg.get("initial")
    if init is None:
        return [GridField.constant(grid, 0.0) for _ in range(m)]
    if len(init) != m:
        raise ConfigError(f"'initial' must list {m} expressions")
    try:
        return [sample(grid, _map_of_x(e, f"initial[{k}]")) for k, e in enumerate(init)]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_numerics(cfg: dict, tol: float | None = None) -> NumericsConfig:
    block = cfg.get("numerics", {})
    try:
        params = SchemeParams(
            viscosity_coeff=block.get("viscosity"),
            cfl=float(block.get("cfl", 0.9)),
            tol=float(tol if tol is not None else block.get("tol", 1e-8)),
            max_iters=int(block.get("max_iters", 200_000)),
            method=block.get("method", "newton"),
            dt=block.get("dt"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"numerics: {exc}") from None
    return NumericsConfig(params, int(block.get("max_sweeps", 200)))


# ---------------------------------------------------------------------------
# sample configurations (also shipped as files under configs/)

SAMPLE_CONFIGS: dict[str, dict] = {
    "weak-linear": {
        "name": "two equations, coupling strength 0.16, sine potential",
        "grid": {"n": 256},
        "components": [
            {"kinetic": "quadratic_plus_potential", "potential": "sin(x)"},
            {"kinetic": "quadratic"},
        ],
        "coupling": {"kind": "linear", "matrix": [[1, -0.4], [-0.4, 1]], "monotone": True},
        "initial": ["0", "0"],
        "evolve": {"T": 5.0, "store_every": 20, "long_time": True, "t_max": 200, "window": 1.0},
        "numerics": {"tol": 1e-8},
    },
    "critical-coupling": {
        "name": "exchange coupling with strength exactly 1",
        "grid": {"n": 256},
        "components": [{"kinetic": "quadratic"}, {"kinetic": "quadratic"}],
        "coupling": {"kind": "linear", "matrix": [[1, 1], [-1, 1]]},
    },
    "sin-cos": {
        "name": "time-periodic pair with quadratic self-coupling",
        "grid": {"n": 256},
        "components": [{"kinetic": "quadratic"}, {"kinetic": "quadratic"}],
        "coupling": {
            "kind": "nonlinear",
            "terms": ["u1**2 - u2 - 1", "u2**2 + u1 - 1"],
            "theta": 4.0,
            "modulus": [0, 0],
            "classes": ["none", "none"],
            "sample_box": [-1.5, 1.5],
        },
        "initial": ["sin(x)", "cos(x)"],
        "evolve": {"T": "4*pi", "period": "2*pi", "store_every": 8},
    },
    "chain3": {
        "name": "three equations with all cross ratios 0.3",
        "grid": {"n": 256},
        "components": [
            {"kinetic": "quadratic_plus_potential", "potential": "sin(x)"},
            {"kinetic": "quadratic_plus_potential", "potential": "cos(x)"},
            {"kinetic": "quadratic"},
        ],
        "coupling": {
            "kind": "linear",
            "matrix": [[1, -0.3, -0.3], [-0.3, 1, -0.3], [-0.3, -0.3, 1]],
            "monotone": True,
        },
    },
    "alpha-line": {
        "name": "critical curve with constant rates 2 and 1",
        "grid": {"n": 256},
        "components": [
            {"kinetic": "quadratic_plus_potential", "potential": "sin(x)"},
            {"kinetic": "quadratic_plus_potential", "potential": "cos(2*x)"},
        ],
        "critical": {"rates": [2, 1], "c": 0, "c_list": [-1, 0, 1], "anchor_index": 0,
                     "flags": {"strictly_convex": True, "coercive": True}},
    },
    "symmetric-critical": {
        "name": "symmetric critical system with zero potentials",
        "grid": {"n": 256},
        "components": [{"kinetic": "quadratic"}, {"kinetic": "quadratic"}],
        "critical": {"rates": [1, 1], "c": 0, "c_list": [-1, 0, 1], "bracket": [-1, 1], "tol_c": 1e-4},
    },
}


def sample_config(name: str) -> dict:
    try:
        return copy.deepcopy(SAMPLE_CONFIGS[name])
    except KeyError:
        raise ConfigError(f"unknown sample config {name!r}") from None


def write_sample_configs(directory: str | Path) -> list[Path]:
    """Write every sample config as ``<name>.json`` into ``directory``."""
    out = []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, cfg in SAMPLE_CONFIGS.items():
        path = directory / f"{name}.json"
        path.write_text(json.dumps(cfg, indent=2) + "\n")
        out.append(path)
    return out


def evolve_settings(cfg: dict) -> dict:
    block = dict(cfg.get("evolve", {}))
    for key in ("T", "period", "t_max", "window"):
        if key in block and block[key] is not None:
            block[key] = _number(block[key], f"evolve.{key}")
    return block


def as_float_list(values, what: str) -> list[float]:
    if values is None:
        return None  # type: ignore[return-value]
    return [_number(v, what) for v in values]


def field_payload(fields: list[GridField]) -> dict:
    """JSON-ready representation of a list of fields on one grid."""
    grid = fields[0].grid
    return {"x": [float(v) for v in grid.nodes], "components": [[float(v) for v in f.values] for f in fields]}


def fields_from_payload(payload: dict, grid: TorusGrid) -> list[GridField]:
    return [GridField(grid, np.asarray(c, dtype=float)) for c in payload["components"]]
