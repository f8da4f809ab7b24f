"""Command-line front end.

Every subcommand prints one report (JSON by default) that embeds the
configuration and the library version.  Exit codes: 0 success, 1 negative
check result, 2 input error, 3 convergence or postcondition failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .costs import CostFunction, parse_cost
from .duality import DualPotential, dual_value, maximize_dual
from .errors import (ConvergenceFailure, InputError, InstanceTooLarge, MissingLipschitzBound,
                     NumericalFailure, PostconditionFailure)
from .lifted import LiftedPlan, embed_J, in_Lambda, intensity_hat, lifted_cost
from .measures import Coupling, DiscreteMeasure
from .monotonicity import apply_violation, check
from .order import check_convex_order, project_brenier_strassen
from .weak_solver import DEFAULT_MAX_ITER, WeakSolution, evaluate, solve

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_CONVERGENCE = 0, 1, 2, 3
SUBCOMMANDS = ("solve", "dual", "monotone", "cvxorder", "project", "lift-check")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    mu: str | None = None
    nu: str | None = None
    pi: str | None = None
    psi: str | None = None
    cost: str = "barycentric:quadratic"
    t: float | None = None
    tol: float | None = None
    max_iter: int = DEFAULT_MAX_ITER
    N: int = 2
    L: float | None = None
    seed: int = 0
    format: str = "json"

    def validate(self) -> None:
        if self.tol is not None and not self.tol > 0:
            raise InputError("--tol must be positive")
        if self.max_iter < 0:
            raise InputError("--max-iter must be nonnegative")
        for name in ("mu", "nu", "pi", "psi"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise InputError(f"--{name}: no such file {path}")
        parse_cost(self.cost, self.t, self.L)

    def require(self, *names: str) -> None:
        missing = [f"--{n}" for n in names if getattr(self, n) is None]
        if missing:
            raise InputError(f"{self.subcommand} needs {' '.join(missing)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weakot", description="Weak optimal transport toolkit.")
    parser.add_argument("--version", action="version", version=f"weakot {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--mu", metavar="PATH")
        p.add_argument("--nu", metavar="PATH")
        p.add_argument("--pi", metavar="PATH")
        p.add_argument("--psi", metavar="PATH")
        p.add_argument("--cost", metavar="SPEC", default="barycentric:quadratic")
        p.add_argument("--t", type=float, metavar="REAL")
        p.add_argument("--tol", type=float, metavar="REAL")
        p.add_argument("--max-iter", dest="max_iter", type=int, metavar="INT", default=DEFAULT_MAX_ITER)
        p.add_argument("--N", type=int, metavar="INT", default=2)
        p.add_argument("--L", type=float, metavar="REAL")
        p.add_argument("--seed", type=int, metavar="INT", default=0)
        p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


# -- file ingestion -------------------------------------------------------------

def _load(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a JSON object")
    return data


def _measure(path: str) -> DiscreteMeasure:
    return DiscreteMeasure.from_dict(_load(path))


def _coupling(path: str) -> Coupling:
    return Coupling.from_dict(_load(path))


# -- subcommands ----------------------------------------------------------------

def _solution_record(sol: WeakSolution) -> dict:
    return {"value": sol.value, "fw_gap": sol.fw_gap, "lower_bound": sol.lower_bound,
            "iterations": sol.iterations, "converged": sol.converged,
            "coupling": sol.coupling.matrix.tolist(),
            "barycenters": [None if np.isnan(r).any() else r.tolist() for r in sol.barycenters]}


def _cmd_solve(cfg: RunConfig, C: CostFunction):
    cfg.require("mu", "nu")
    mu, nu = _measure(cfg.mu), _measure(cfg.nu)
    init = _coupling(cfg.pi) if cfg.pi else None
    try:
        sol = solve(mu, nu, C, tol=cfg.tol, max_iter=cfg.max_iter, init=init)
    except ConvergenceFailure as exc:
        return _solution_record(exc.result), EXIT_CONVERGENCE
    return _solution_record(sol), EXIT_OK


def _cmd_dual(cfg: RunConfig, C: CostFunction):
    cfg.require("mu", "nu")
    mu, nu = _measure(cfg.mu), _measure(cfg.nu)
    try:
        sol = solve(mu, nu, C, max_iter=cfg.max_iter)
    except ConvergenceFailure as exc:
        return {"primal": _solution_record(exc.result)}, EXIT_CONVERGENCE
    if cfg.psi:
        psi = DualPotential.from_dict(_load(cfg.psi))
        if psi.support.shape != nu.points.shape or not np.allclose(psi.support, nu.points, rtol=0, atol=1e-12):
            raise InputError("--psi support must list the atoms of --nu in order")
        dual = dual_value(mu, nu, C, psi)
        rec = {"primal": sol.value, "dual": dual, "gap": sol.value - dual, "psi": psi.to_dict(),
               "weak_duality": bool(dual <= sol.value + 1e-9)}
        return rec, EXIT_OK if rec["weak_duality"] else EXIT_NEGATIVE
    tol = 1e-6 if cfg.tol is None else cfg.tol
    try:
        res = maximize_dual(mu, nu, C, tol=tol, max_iter=min(cfg.max_iter, 5000), L=cfg.L, primal=sol)
        code = EXIT_OK
    except ConvergenceFailure as exc:
        res, code = exc.result, EXIT_CONVERGENCE
    return {"primal": res.primal, "dual": res.value, "gap": res.gap, "iterations": res.iterations,
            "psi": res.psi.to_dict()}, code


def _cmd_monotone(cfg: RunConfig, C: CostFunction):
    cfg.require("pi")
    pi = _coupling(cfg.pi)
    tol = 1e-6 if cfg.tol is None else cfg.tol
    report = check(pi, C, cfg.N, tol)
    rec = report.to_dict()
    if report.worst_violation is not None:
        better = apply_violation(pi, report.worst_violation)
        rec["witness_coupling"] = better.matrix.tolist()
        rec["cost_before"] = evaluate(pi, C)
        rec["cost_after"] = evaluate(better, C)
    return rec, EXIT_OK if report.passed else EXIT_NEGATIVE


def _cmd_cvxorder(cfg: RunConfig, C: CostFunction):
    cfg.require("mu", "nu")
    cert = check_convex_order(_measure(cfg.mu), _measure(cfg.nu))
    return cert.to_dict(), EXIT_OK if cert.dominated else EXIT_NEGATIVE


def _cmd_project(cfg: RunConfig, C: CostFunction):
    cfg.require("mu", "nu")
    if C.kind != "quadratic":
        raise InputError("project is defined for barycentric:quadratic only")
    mu, nu = _measure(cfg.mu), _measure(cfg.nu)
    tol = 1e-8 if cfg.tol is None else cfg.tol
    try:
        proj = project_brenier_strassen(mu, nu, tol=tol, max_iter=cfg.max_iter)
    except PostconditionFailure as exc:
        rec = exc.result.to_dict()
        rec["failed"] = list(exc.failed)
        return rec, EXIT_CONVERGENCE
    except ConvergenceFailure as exc:
        return {"primal": _solution_record(exc.result)}, EXIT_CONVERGENCE
    return proj.to_dict(), EXIT_OK


def _cmd_lift_check(cfg: RunConfig, C: CostFunction):
    cfg.require("pi")
    data = _load(cfg.pi)
    if "matrix" in data:
        pi = Coupling.from_dict(data)
        plan = embed_J(pi)
        back = intensity_hat(plan, pi.mu, pi.nu)
        err = float(np.max(np.abs(back.matrix - pi.matrix)))
        rec = {"input": "coupling", "atoms": len(plan.atoms), "left_inverse_error": err,
               "lifted_cost": lifted_cost(plan, C), "cost": evaluate(pi, C), "plan": plan.to_dict()}
        return rec, EXIT_OK if err <= 1e-12 else EXIT_NEGATIVE
    plan = LiftedPlan.from_dict(data)
    mu = _measure(cfg.mu) if cfg.mu else None
    nu = _measure(cfg.nu) if cfg.nu else None
    rec = {"input": "plan", "atoms": len(plan.atoms)}
    ok = True
    if mu is not None and nu is not None:
        rec["in_lambda"] = in_Lambda(plan, mu, nu)
        ok = rec["in_lambda"]
    inten = intensity_hat(plan, mu if rec.get("in_lambda") else None, nu if rec.get("in_lambda") else None)
    rec["lifted_cost"] = lifted_cost(plan, C)
    rec["intensity_cost"] = evaluate(inten, C)
    rec["jensen_gap"] = rec["lifted_cost"] - rec["intensity_cost"]
    rec["intensity"] = inten.to_dict()
    ok = ok and rec["jensen_gap"] >= -1e-9
    return rec, EXIT_OK if ok else EXIT_NEGATIVE


_COMMANDS = {"solve": _cmd_solve, "dual": _cmd_dual, "monotone": _cmd_monotone,
             "cvxorder": _cmd_cvxorder, "project": _cmd_project, "lift-check": _cmd_lift_check}


# -- output ---------------------------------------------------------------------

def _render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "value"])
    writer.writerow(["subcommand", report["subcommand"]])
    writer.writerow(["version", report["version"]])
    writer.writerow(["exit_code", report["exit_code"]])
    for key in sorted(report.get("result", {})):
        val = report["result"][key]
        if isinstance(val, (bool, int, float, str)) or val is None:
            writer.writerow([key, "" if val is None else val])
    if "error" in report:
        writer.writerow(["error", report["error"]])
    return buf.getvalue()


def _clean(obj):
    """Make a report JSON-safe: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(argv=None, stdout=None) -> int:
    """Parse ``argv``, run one subcommand, print its report and return the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    args = build_parser().parse_args(argv)
    cfg = RunConfig(**vars(args))
    report = {"subcommand": cfg.subcommand, "version": __version__, "config": asdict(cfg)}
    try:
        cfg.validate()
        C = parse_cost(cfg.cost, cfg.t, cfg.L)
        result, code = _COMMANDS[cfg.subcommand](cfg, C)
        report["result"] = result
    except (InputError, InstanceTooLarge, MissingLipschitzBound, OSError) as exc:
        code = EXIT_INPUT
        report["error"] = f"{type(exc).__name__}: {exc}"
    except (ConvergenceFailure, NumericalFailure, PostconditionFailure) as exc:
        code = EXIT_CONVERGENCE
        report["error"] = f"{type(exc).__name__}: {exc}"
    report["exit_code"] = code
    stdout.write(_render(_clean(report), cfg.format))
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
