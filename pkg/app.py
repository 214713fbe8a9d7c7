#!/usr/bin/env python3
"""Command-line front end: solve problem files, cracked beams and regularization checks.

    python app.py solve problem.json --out results/
    python app.py beam beam.json --npoints 1001
    python app.py beam --figure 2
    python app.py check-reg pairs.json --schedule 3:10
"""

import argparse
import hashlib
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from utils import config
from utils.beam import BeamSpec, beam_regularity, emit_curves, figure_cases, solve_beam
from utils.data_processing import (
    check_validation, delta_rows_to_json, export_to_csv, export_to_json, get_convergence_summary,
    get_residual_summary, load_json_document, parse_schedule, solution_frame_summary, validate_pair_document,
    validate_problem_document,
)
from utils.dist_algebra import dirac, from_json
from utils.ode_solver import (
    IVPCondition, expand_divergence, problem_from_json, sample_solution, solve_bvp_global, solve_ivp_global, validate,
)
from utils.regularization import check_schedule, convergence_report
from utils.smooth_fn import exp, parse_expr, power, scale, sub, X

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RESIDUAL = 1
EXIT_VALIDATION = 2
EXIT_NONE = 3
EXIT_FAMILY = 4


@dataclass
class RunReport:
    command: str
    input_digest: str = ""
    validation: dict = field(default_factory=dict)
    interfaces: List[dict] = field(default_factory=list)
    existence: Optional[str] = None
    residuals: dict = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "input_digest": self.input_digest,
            "validation": self.validation,
            "interfaces": self.interfaces,
            "existence": self.existence,
            "residuals": self.residuals,
            "outputs": self.outputs,
            "details": self.details,
            "exit_code": self.exit_code,
            "message": self.message,
            "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _finish(report, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    report.outputs.append(str(path))
    export_to_json(report.as_dict(), path)
    return report


def _fail(report, out_dir, code, exc):
    report.exit_code = code
    report.message = str(exc)
    logger.error("%s: %s", report.command, exc)
    return _finish(report, out_dir)


# ============================================================================
# SOLVE
# ============================================================================

def cmd_solve(problem_file, out_dir, mesh_size=config.DEFAULT_MESH, rtol=config.RTOL, atol=config.ATOL,
              tolerance=config.RESIDUAL_TOL) -> RunReport:
    """validate -> solve -> residual -> sample; writes solution.csv, delta.json, report.json"""
    out_dir = Path(out_dir)
    report = RunReport("solve")
    logger.info("solving %s", problem_file)
    try:
        report.input_digest = _digest(problem_file)
        doc = load_json_document(problem_file)
        check_validation(validate_problem_document(doc))
        spec, condition = problem_from_json(doc)
        report.validation = validate(spec).as_dict()
    except (OSError, ValueError) as exc:
        return _fail(report, out_dir, EXIT_VALIDATION, exc)

    try:
        if isinstance(condition, IVPCondition):
            sol = solve_ivp_global(spec, condition.x0, condition.C, rtol=rtol, atol=atol)
        else:
            sol = solve_bvp_global(spec, condition, rtol=rtol, atol=atol)
    except (ArithmeticError, ValueError) as exc:
        return _fail(report, out_dir, EXIT_RESIDUAL, exc)

    report.interfaces = [sys.as_dict() for sys in sol.interfaces]
    report.existence = str(sol.existence)
    if sol.existence.kind == "none":
        report.exit_code = EXIT_NONE
        report.message = "no generalized solution satisfies the conditions"
        return _finish(report, out_dir)

    summary = get_residual_summary(sol.diagnostics, tolerance)
    report.residuals = summary
    if sol.existence.kind == "affine_family":
        report.details["kernel_dimension"] = sol.existence.dim
        # one entry per kernel vector
        report.details["kernel_basis"] = sol.kernel_basis.T.tolist()

    out_dir.mkdir(parents=True, exist_ok=True)
    table, delta_rows = sample_solution(sol, np.linspace(*spec.domain, mesh_size))
    logger.debug("sampled %s", solution_frame_summary(table))
    report.outputs.append(str(export_to_csv(table, out_dir / "solution.csv")))
    report.outputs.append(str(export_to_json({"delta": delta_rows_to_json(delta_rows)}, out_dir / "delta.json")))

    if sol.existence.kind == "affine_family":
        report.exit_code = EXIT_FAMILY
    elif not summary["within_tolerance"]:
        report.exit_code = EXIT_RESIDUAL
    logger.info("existence %s, exit code %d", report.existence, report.exit_code)
    return _finish(report, out_dir)


# ============================================================================
# BEAM
# ============================================================================

def _beam_block(spec, npoints, rtol, atol, tolerance):
    solution = solve_beam(spec, rtol=rtol, atol=atol)
    curves = emit_curves(solution, npoints)
    block = {
        "spec": spec.as_dict(),
        "constants": solution.constants,
        "closed_form": solution.closed_form,
        "relative_errors": solution.errors,
        "slope_jump": solution.slope_jump,
        "psi_delta": [{"point": x, "order": k, "coefficient": c} for x, k, c in solution.psi_delta],
        "regularity": beam_regularity(spec),
        "interfaces": [sys.as_dict() for sys in solution.solution.interfaces],
        "residuals": get_residual_summary(solution.solution.diagnostics, tolerance),
    }
    within = all(e <= config.BEAM_CONSTANT_TOL for e in solution.errors.values())
    ok = block["residuals"]["within_tolerance"] and within
    return curves, block, ok


def cmd_beam(beam_file, out_dir, npoints=config.DEFAULT_NPOINTS, figure=None, rtol=config.RTOL,
             atol=config.ATOL, tolerance=config.RESIDUAL_TOL) -> RunReport:
    """Cracked beam pipeline with the closed-form comparison; writes curves.csv and constants.json"""
    out_dir = Path(out_dir)
    report = RunReport("beam")
    cases = {}
    try:
        if beam_file is not None:
            report.input_digest = _digest(beam_file)
            cases["beam"] = BeamSpec.from_dict(load_json_document(beam_file))
        if figure is not None:
            figures = figure_cases()
            if figure not in figures:
                raise ValueError(f"Unknown figure {figure}, expected one of {sorted(figures)}")
            cases["case"] = figures[figure]["case"]
            cases["reference"] = figures[figure]["reference"]
        if not cases:
            raise ValueError("Give a beam file or --figure")
    except (OSError, ValueError) as exc:
        return _fail(report, out_dir, EXIT_VALIDATION, exc)

    out_dir.mkdir(parents=True, exist_ok=True)
    all_ok = True
    try:
        for label, spec in cases.items():
            logger.info("solving %s beam A=%g B=%g K0=%g K1=%g", label, spec.A, spec.B, spec.K0, spec.K1)
            curves, block, ok = _beam_block(spec, npoints, rtol, atol, tolerance)
            report.details[label] = block
            all_ok = all_ok and ok
            name = "curves.csv" if label == "beam" else f"figure{figure}_{label}_curves.csv"
            report.outputs.append(str(export_to_csv(curves, out_dir / name)))
    except (ArithmeticError, ValueError) as exc:
        return _fail(report, out_dir, EXIT_RESIDUAL, exc)

    constants = {label: {k: block[k] for k in ("constants", "closed_form", "relative_errors", "slope_jump")}
                 for label, block in report.details.items()}
    report.outputs.append(str(export_to_json(constants, out_dir / "constants.json")))
    report.existence = "unique"
    report.exit_code = EXIT_OK if all_ok else EXIT_RESIDUAL
    return _finish(report, out_dir)


# ============================================================================
# REGULARIZATION CHECK
# ============================================================================

def _gaussian_at(p):
    return exp(scale(-1.0, power(sub(X, p), 2)))


def _triples_from_problem(doc):
    check_validation(validate_problem_document(doc))
    spec, _ = problem_from_json(doc)
    points = validate(spec).singular_points
    spec = expand_divergence(spec)
    triples = []
    for p in points:
        psi = dirac(p)
        t = _gaussian_at(p)
        support = (p - 6.0, p + 6.0)
        for i, coefficient in enumerate(spec.a):
            if p in coefficient.breakpoints or coefficient.deltas.at(p):
                triples.append((f"a{i}@{p:g}", coefficient, psi, t, "plus", support))
        for i, coefficient in enumerate(spec.b):
            if p in coefficient.breakpoints or coefficient.deltas.at(p):
                triples.append((f"b{i}@{p:g}", coefficient, psi, t, "minus", support))
    return triples


def _triples_from_pairs(doc):
    check_validation(validate_pair_document(doc))
    triples = []
    for i, item in enumerate(doc["triples"]):
        support = tuple(item.get("support", config.WORKING_DOMAIN))
        triples.append((item.get("label", f"triple{i}"), from_json(item["coefficient"]), from_json(item["psi"]),
                        parse_expr(str(item["t"])), item.get("side", "plus"), support))
    return triples


def cmd_check_regularization(problem_or_pair_file, out_dir, schedule=None) -> RunReport:
    """Weak residuals of the regularized products along an eps schedule; writes convergence.csv"""
    out_dir = Path(out_dir)
    report = RunReport("check-reg")
    try:
        schedule = check_schedule(config.DEFAULT_SCHEDULE if schedule is None else schedule)
        report.input_digest = _digest(problem_or_pair_file)
        doc = load_json_document(problem_or_pair_file)
        if isinstance(doc, dict) and "triples" in doc:
            triples = _triples_from_pairs(doc)
        else:
            triples = _triples_from_problem(doc)
    except (OSError, ValueError) as exc:
        return _fail(report, out_dir, EXIT_VALIDATION, exc)

    frames = []
    try:
        for label, coefficient, psi, t, side, support in triples:
            table = convergence_report(coefficient, psi, t, schedule, side=side, support=support)
            report.details[label] = get_convergence_summary(table)
            table.insert(0, "label", label)
            frames.append(table)
    except (ArithmeticError, ValueError) as exc:
        return _fail(report, out_dir, EXIT_RESIDUAL, exc)

    out_dir.mkdir(parents=True, exist_ok=True)
    combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["label", "eps", "residual", "slope"])
    report.outputs.append(str(export_to_csv(combined, out_dir / "convergence.csv")))
    return _finish(report, out_dir)


# ============================================================================
# ENTRY POINT
# ============================================================================

def _add_output_args(p):
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings only")


def _add_solver_args(p):
    _add_output_args(p)
    p.add_argument("--rtol", type=float, default=config.RTOL, help=f"integrator rtol (default: {config.RTOL})")
    p.add_argument("--atol", type=float, default=config.ATOL, help=f"integrator atol (default: {config.ATOL})")
    p.add_argument("--tol", type=float, default=config.RESIDUAL_TOL,
                   help=f"residual tolerance (default: {config.RESIDUAL_TOL})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description="Linear ODEs with distributional coefficients.")
    sub_p = p.add_subparsers(dest="command", required=True)

    solve_p = sub_p.add_parser("solve", help="solve an IVP/BVP problem file")
    solve_p.add_argument("problem_file")
    solve_p.add_argument("--mesh", type=int, default=config.DEFAULT_MESH,
                         help=f"sample points for solution.csv (default: {config.DEFAULT_MESH})")
    _add_solver_args(solve_p)

    beam_p = sub_p.add_parser("beam", help="solve a cracked clamped-clamped beam")
    beam_p.add_argument("beam_file", nargs="?")
    beam_p.add_argument("--figure", type=int, choices=(1, 2, 3), help="published parameter set")
    beam_p.add_argument("--npoints", type=int, default=config.DEFAULT_NPOINTS,
                        help=f"curve points (default: {config.DEFAULT_NPOINTS})")
    _add_solver_args(beam_p)

    reg_p = sub_p.add_parser("check-reg", help="regularization convergence check")
    reg_p.add_argument("problem_or_pair_file")
    reg_p.add_argument("--schedule", default=None,
                       help="eps schedule: '3:10' for 2^-3..2^-10 or a comma list (default: 3:10)")
    _add_output_args(reg_p)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "solve":
        report = cmd_solve(args.problem_file, args.out, args.mesh, args.rtol, args.atol, args.tol)
    elif args.command == "beam":
        report = cmd_beam(args.beam_file, args.out, args.npoints, args.figure, args.rtol, args.atol, args.tol)
    else:
        try:
            schedule = parse_schedule(args.schedule) if args.schedule is not None else None
        except ValueError as exc:
            print(f"ERROR: bad schedule {args.schedule!r}: {exc}")
            return EXIT_VALIDATION
        report = cmd_check_regularization(args.problem_or_pair_file, args.out, schedule)

    for path in report.outputs:
        print(f"Wrote: {path}")
    if report.message:
        print(f"{'ERROR' if report.exit_code in (EXIT_VALIDATION, EXIT_RESIDUAL) else 'NOTE'}: {report.message}")
    return report.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
