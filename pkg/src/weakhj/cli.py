"""Command-line front end.

Usage::

    weakhj solve --config sys.json --out results/
    weakhj evolve --config sys.json --out results/ --format json
    weakhj critical --config crit.json --out results/
    weakhj sweep-alpha --config crit.json
    weakhj find-c0 --config crit.json
    weakhj diagnose --config sys.json
    weakhj demo exx

Every run writes ``summary.json`` (inputs, bounds ledger, residuals and
check margins; byte-identical for identical inputs) and ``timing.json``
(wall time) into the output directory.  Exit status is 0 on success,
2 when a solver fails to converge or a numerical check fails, and 1 for
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .config import (
    ConfigError,
    as_float_list,
    build_discounted,
    build_initial,
    build_numerics,
    build_system,
    evolve_settings,
    field_payload,
    load_config,
)
from .coupled_solver import (
    component_problem,
    coupled_residual,
    detect_period,
    evolve_coupled,
    gauss_seidel,
    long_time_limit,
    verify_iteration_bounds,
)
from .critical_value import BoundViolation, alpha_curve, find_c0, vanishing_discount
from .demos import DEMOS, run_demo
from .geometry import GridField
from .hamiltonian import (
    UNCLASSIFIED,
    bounds_ledger,
    check_chain_condition,
    coupling_strength,
    iteration_case,
)
from .scalar_solver import InstabilityError, NonConvergenceError
from .semigroup import DiscretizationFailure, MonotonicityError, VelocityBoundError, domination_report

logger = logging.getLogger("weakhj")

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICS = 2

_NUMERICAL_FAILURES = (NonConvergenceError, InstabilityError, BoundViolation, DiscretizationFailure,
                       MonotonicityError, VelocityBoundError)


class Outcome:
    """What a command produced: summary entries plus the exit status."""

    def __init__(self, summary: dict, status: int = EXIT_OK):
        self.summary = summary
        self.status = status


def jsonable(obj: Any) -> Any:
    """Recursively convert to plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


def dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


class Writer:
    """Writes artifacts in the requested format and remembers their names."""

    def __init__(self, out: Path, fmt: str):
        self.out = out
        self.fmt = fmt
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def _record(self, path: Path) -> None:
        self.files.append(path.name)

    def fields(self, stem: str, fields: list[GridField]) -> None:
        if self.fmt == "json":
            path = self.out / f"{stem}.json"
            dump_json(field_payload(fields), path)
            self._record(path)
            return
        for k, f in enumerate(fields, start=1):
            path = self.out / f"{stem}_{k}.csv"
            f.to_csv(path)
            self._record(path)

    def text(self, name: str, text: str) -> None:
        path = self.out / name
        path.write_text(text)
        self._record(path)

    def data(self, stem: str, obj: Any) -> None:
        path = self.out / f"{stem}.json"
        dump_json(obj, path)
        self._record(path)


# ---------------------------------------------------------------------------
# commands


def _system_diagnostics(spec) -> dict:
    ledger = bounds_ledger(spec)
    chain = check_chain_condition(spec)
    strength = coupling_strength(spec)
    warnings = []
    if strength >= 1.0:
        warnings.append(f"coupling strength {strength:.6g} >= 1: the weak-coupling existence result does not apply")
    if not chain.ok:
        warnings.append("chain condition fails: some simple cycle of cross ratios has product >= 1")
    if UNCLASSIFIED in spec.classes:
        warnings.append("some components are not strictly monotone in their own unknown")
    return {
        "classes": list(spec.classes),
        "iteration_case": iteration_case(spec.classes),
        "coupling_strength": strength,
        "chain_condition": {"ok": chain.ok, "worst_cycle": list(chain.worst_cycle),
                            "worst_product": chain.worst_product},
        "ledger": ledger.to_dict(),
        "warnings": warnings,
    }, ledger


def cmd_solve(cfg: dict, args, writer: Writer) -> Outcome:
    spec = build_system(cfg, args.grid)
    numerics = build_numerics(cfg, args.tol)
    diag, ledger = _system_diagnostics(spec)
    if UNCLASSIFIED in spec.classes:
        raise ConfigError("solve needs every component strictly increasing or strictly decreasing in its own unknown")
    trace = gauss_seidel(spec, params=numerics.params, max_sweeps=numerics.max_sweeps, ledger=ledger)
    writer.fields("solution", trace.final)
    writer.text("iteration.json", trace.to_json(ledger) + "\n")
    summary = {**diag, "converged": trace.converged, "sweeps": len(trace.sweeps), "message": trace.message,
               "residuals": trace.residuals[-1], "final_change": trace.changes[-1]}
    if spec.m == 2 and trace.case in ("a", "b", "c"):
        summary["iteration_bounds"] = verify_iteration_bounds(trace, ledger)
    dom = []
    for i in range(spec.m):
        prob = component_problem(spec, i, trace.final)
        rep = domination_report(trace.final[i], prob, n_curves=16, seed=args.seed)
        dom.append(rep)
    summary["domination"] = dom
    ok = trace.converged and summary.get("iteration_bounds", {"ok": True})["ok"]
    return Outcome(summary, EXIT_OK if ok else EXIT_NUMERICS)


def cmd_evolve(cfg: dict, args, writer: Writer) -> Outcome:
    spec = build_system(cfg, args.grid)
    numerics = build_numerics(cfg, args.tol)
    diag, _ = _system_diagnostics(spec)
    phis = build_initial(cfg, spec.grid, spec.m)
    ev = evolve_settings(cfg)
    summary: dict = {**diag}
    status = EXIT_OK
    if ev.get("long_time"):
        res = long_time_limit(spec, phis, numerics.params, t_max=ev.get("t_max", 200.0),
                              window=ev.get("window", 1.0), tol=ev.get("tol"))
        writer.fields("limit", res.fields)
        writer.data("windows", {"t": res.window_times, "change": res.window_changes})
        summary.update({"converged": res.converged, "t_final": res.t_final, "dt": res.dt,
                        "residuals": coupled_residual(spec, res.fields)})
        if not res.converged:
            status = EXIT_NUMERICS
        return Outcome(summary, status)
    T = ev.get("T")
    if T is None:
        raise ConfigError("evolve needs 'evolve.T' (or 'evolve.long_time': true)")
    traj = evolve_coupled(spec, phis, T, numerics.params, store_every=int(ev.get("store_every", 1)))
    if writer.fmt == "json":
        writer.data("trajectory", {"t": traj.times, "x": spec.grid.nodes,
                                   "components": [c.data for c in traj.components]})
    else:
        writer.text("trajectory.csv", traj.to_csv())
    writer.fields("final", traj.final)
    summary.update({"T": T, "dt": traj.dt, "frames": len(traj.times), "instability": traj.instability_flag,
                    "final_sup": [float(np.max(np.abs(f.values))) for f in traj.final]})
    if ev.get("period") is not None:
        tol = float(ev.get("period_tol", 0.05))
        try:
            rep = detect_period(traj, ev["period"], tol)
            summary["period"] = vars(rep)
            if not rep.periodic:
                status = EXIT_NUMERICS
        except ValueError as exc:
            summary["period"] = {"error": str(exc)}
    if traj.instability_flag:
        status = EXIT_NUMERICS
    return Outcome(summary, status)


def _critical_inputs(cfg: dict, args):
    dspec = build_discounted(cfg, args.grid)
    numerics = build_numerics(cfg, args.tol)
    block = cfg.get("critical", {})
    eps = as_float_list(block.get("eps_list"), "critical.eps_list")
    return dspec, numerics, block, eps


def cmd_critical(cfg: dict, args, writer: Writer) -> Outcome:
    dspec, numerics, block, eps = _critical_inputs(cfg, args)
    c = float(block.get("c", 0.0))
    res = vanishing_discount(dspec, c, eps, int(block.get("anchor_index", 0)), numerics.params,
                             second_anchor=block.get("second_anchor"))
    if writer.fmt == "json":
        writer.data("eps_sequence", res.eps_sequence)
    else:
        writer.text("eps_sequence.csv", res.eps_csv())
    writer.fields("pair", res.pair)
    summary = res.to_dict()
    ok = all(bool(v) for v in res.checks.values() if isinstance(v, (bool, np.bool_)))
    return Outcome(summary, EXIT_OK if ok else EXIT_NUMERICS)


def cmd_sweep_alpha(cfg: dict, args, writer: Writer) -> Outcome:
    dspec, numerics, block, eps = _critical_inputs(cfg, args)
    c_list = as_float_list(block.get("c_list"), "critical.c_list")
    if c_list is None:
        raise ConfigError("sweep-alpha needs 'critical.c_list'")
    curve = alpha_curve(dspec, c_list, eps, numerics.params, slack=float(block.get("slack", 1e-2)),
                        anchor_index=int(block.get("anchor_index", 0)))
    if writer.fmt == "json":
        writer.data("alpha", {"c": [p[0] for p in curve.points], "alpha": [p[1] for p in curve.points]})
    else:
        writer.text("alpha.csv", curve.to_csv())
    summary = {**curve.to_dict(), "per_c": [r.to_dict() for r in curve.results]}
    ok = curve.monotone_ok and curve.lipschitz_ok
    return Outcome(summary, EXIT_OK if ok else EXIT_NUMERICS)


def cmd_find_c0(cfg: dict, args, writer: Writer) -> Outcome:
    dspec, numerics, block, eps = _critical_inputs(cfg, args)
    bracket = as_float_list(block.get("bracket"), "critical.bracket")
    fp = find_c0(dspec, tuple(bracket) if bracket else None, float(block.get("tol_c", 1e-4)), numerics.params, eps)
    writer.fields("pair", fp.result.pair)
    summary = {"c0": fp.c0, "alpha": fp.alpha, "gap": fp.gap, "iterations": fp.iterations,
               "bracket": list(fp.bracket), "history": fp.history, "result": fp.result.to_dict()}
    ok = abs(fp.gap) <= float(block.get("tol_c", 1e-4))
    return Outcome(summary, EXIT_OK if ok else EXIT_NUMERICS)


def cmd_diagnose(cfg: dict, args, writer: Writer) -> Outcome:
    summary: dict = {}
    if "coupling" in cfg:
        spec = build_system(cfg, args.grid)
        diag, _ = _system_diagnostics(spec)
        summary.update(diag)
        print(f"coupling strength chi = {diag['coupling_strength']:.6g}")
        chain = diag["chain_condition"]
        print(f"chain condition: {str(chain['ok']).lower()} (worst cycle {chain['worst_cycle']}, "
              f"product {chain['worst_product']:.6g})")
        print(f"classes: {', '.join(diag['classes'])}; iteration case: {diag['iteration_case']}")
    if "critical" in cfg:
        dspec = build_discounted(cfg, args.grid)
        bounds = dspec.a_priori(float(cfg["critical"].get("c", 0.0)))
        summary["critical_bounds"] = bounds
        print(f"a-priori bounds: eps*u2 in [{bounds['eps_u2_lower']:.6g}, {bounds['eps_u2_upper']:.6g}], "
              f"|Du| <= {max(bounds['slope_bound']):.6g}")
    if not summary:
        raise ConfigError("nothing to diagnose: config has neither 'coupling' nor 'critical'")
    for w in summary.get("warnings", []):
        print(f"warning: {w}")
    return Outcome(summary, EXIT_OK)


def cmd_demo(name: str, args, writer: Writer) -> Outcome:
    report = run_demo(name, args.grid or 256, args.tol)
    for line in report.lines():
        print(line)
    for stem, fields in report.fields.items():
        writer.fields(stem, fields)
    if report.trajectory is not None:
        writer.text("trajectory.csv", report.trajectory.to_csv(every=4))
    if report.curve is not None:
        writer.text("alpha.csv", report.curve.to_csv())
    summary = {"demo": name, "passed": report.passed, "checks": [c.to_dict() for c in report.checks],
               "data": report.data}
    if name == "chain":
        d = report.data
        print(f"worst cycle {d['worst_cycle']} with product {d['worst_product']:.6g}; "
              f"chain condition {'holds' if d['chain_condition'] else 'fails'}")
    return Outcome(summary, EXIT_OK if report.passed else EXIT_NUMERICS)


COMMANDS: dict[str, Callable] = {
    "solve": cmd_solve,
    "evolve": cmd_evolve,
    "critical": cmd_critical,
    "sweep-alpha": cmd_sweep_alpha,
    "find-c0": cmd_find_c0,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakhj", description="Weakly coupled Hamilton-Jacobi systems on the circle.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON system configuration")
    common.add_argument("--out", type=Path, default=Path("weakhj_out"), help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="format of fields and curves")
    common.add_argument("--grid", type=int, default=None, help="number of grid nodes (overrides the config)")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance (overrides the config)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"{name} from a config file")
    demo = sub.add_parser("demo", parents=[common], help="reproduce a worked example")
    demo.add_argument("name", choices=DEMOS)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    start = time.perf_counter()
    writer = Writer(args.out, args.format)
    inputs = {"command": args.command, "config_path": str(args.config) if args.config else None,
              "format": args.format, "grid": args.grid, "tol": args.tol, "seed": args.seed, "version": __version__}
    try:
        if args.command == "demo":
            inputs["demo"] = args.name
            outcome = cmd_demo(args.name, args, writer)
        else:
            if args.config is None:
                raise ConfigError(f"{args.command} needs --config")
            cfg = load_config(args.config)
            inputs["config"] = cfg
            if args.grid is not None and args.grid < 8:
                raise ConfigError("--grid must be at least 8")
            outcome = COMMANDS[args.command](cfg, args, writer)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        outcome = Outcome({"error": str(exc), "error_kind": "config"}, EXIT_CONFIG)
    except _NUMERICAL_FAILURES as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        details = getattr(exc, "details", None)
        outcome = Outcome({"error": str(exc), "error_kind": type(exc).__name__, "details": details}, EXIT_NUMERICS)
    summary = {"inputs": inputs, "exit_status": outcome.status, "files": sorted(writer.files), **outcome.summary}
    dump_json(summary, args.out / "summary.json")
    dump_json({"wall_time_s": time.perf_counter() - start}, args.out / "timing.json")
    return outcome.status


if __name__ == "__main__":
    sys.exit(main())
