"""Command-line front end: ``kramers-exit <subcommand> PROBLEM [options]``.

Exit codes: 0 success, 1 usage or parse error, 2 assumption or validation failure.
Reports are JSON with sorted keys, so identical inputs give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .expr import ExpressionError
from .flow import FlowError, divergence_integral, normalization_constant, r0_transport_residual
from .kramers import (
    PrefactorError,
    compute_prefactor,
    log_mean_exit_time,
    log_principal_eigenvalue,
    predict_mean_exit_time,
    predict_principal_eigenvalue,
)
from .montecarlo import InsufficientSamplesError, MCConfig, MCError, exponentiality_test, simulate_exit
from .pde2d import PDEError, estimate_principal_eigenvalue, solve_mean_exit_time
from .problem import ProblemFileError, bundled_examples, document_hash, example_path, spec_from_document, load_document
from .validation import ValidationRow, run_validation
from .wellspec import WellSpecError, verify_assumptions

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse coordinates {text!r}") from exc


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])


def _resolve_problem(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    if arg in bundled_examples():
        return example_path(arg)
    raise UsageError(f"problem file {arg!r} not found (bundled examples: {', '.join(bundled_examples())})")


def _check_or_fail(spec):
    report = verify_assumptions(spec)
    if not report.passed:
        print(report.table(), file=sys.stderr)
    return report


# -- subcommands -------------------------------------------------------------


def cmd_check(spec, args, ctx):
    report = verify_assumptions(spec)
    print(report.table(), file=sys.stderr)
    return report.to_json(), EXIT_OK if report.passed else EXIT_FAIL


def cmd_prefactor(spec, args, ctx):
    check = _check_or_fail(spec)
    if not check.passed:
        return {"assumptions": check.to_json()}, EXIT_FAIL
    report = compute_prefactor(spec, check)
    return {"assumptions": check.to_json(), "prefactor": report.to_json()}, EXIT_OK


def cmd_predict(spec, args, ctx):
    check = _check_or_fail(spec)
    if not check.passed:
        return {"assumptions": check.to_json()}, EXIT_FAIL
    report = compute_prefactor(spec, check)
    rows = []
    for h in args.h:
        rows.append(
            {
                "h": h,
                "mean_exit_time": predict_mean_exit_time(report, h),
                "log_mean_exit_time": log_mean_exit_time(report, h),
                "principal_eigenvalue": predict_principal_eigenvalue(report, h),
                "log_principal_eigenvalue": log_principal_eigenvalue(report, h),
            }
        )
    return {"prefactor": report.to_json(), "predictions": rows}, EXIT_OK


def cmd_mc(spec, args, ctx):
    check = _check_or_fail(spec)
    if not check.passed:
        return {"assumptions": check.to_json()}, EXIT_FAIL
    cfg = MCConfig(
        h=args.h,
        dt=args.dt,
        n=args.n,
        x=_floats(args.start) if args.start else None,
        seed=ctx["seed"],
        refinement="brownian-bridge" if args.bridge else "interpolate",
        max_steps=args.max_steps,
    )
    result = simulate_exit(spec, cfg, workers=args.workers)
    out = result.summary()
    rate = args.rate if args.rate is not None else 1.0 / result.mean
    try:
        out["exponentiality"] = exponentiality_test(result, rate).to_json()
    except InsufficientSamplesError as exc:
        out["exponentiality"] = {"status": f"skipped: {exc}"}
    if args.csv:
        _write_csv(args.csv, ("index", "exit_time"), enumerate(result.exit_times))
    return out, EXIT_OK


def cmd_pde(spec, args, ctx):
    check = _check_or_fail(spec)
    if not check.passed:
        return {"assumptions": check.to_json()}, EXIT_FAIL
    sol = solve_mean_exit_time(spec, args.h, args.grid, shortley_weller=args.shortley_weller)
    x0 = spec.minimum.x0
    out = {"solution": sol.summary(), "x0": x0, "u_x0": sol.value_at(x0)}
    if args.eig:
        eig = estimate_principal_eigenvalue(spec, args.h, args.grid, shortley_weller=args.shortley_weller)
        out["eigen"] = eig.to_json()
        out["eigenvalue_times_u_x0"] = eig.eigenvalue * out["u_x0"]
    if args.csv:
        pts = sol.grid.points()
        vals = sol.values[sol.grid.inside]
        header = tuple(f"x{i + 1}" for i in range(spec.dimension)) + ("u",)
        _write_csv(args.csv, header, (tuple(p) + (v,) for p, v in zip(pts.T, vals)))
    return out, EXIT_OK


def _read_points(path, d) -> list[list[float]]:
    pts = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise UsageError(f"{path}:{lineno}: non-numeric coordinate") from None
            if len(vals) != d:
                raise UsageError(f"{path}:{lineno}: expected {d} coordinates, got {len(vals)}")
            pts.append(vals)
    return pts


def cmd_r0(spec, args, ctx):
    check = _check_or_fail(spec)
    if not check.passed:
        return {"assumptions": check.to_json()}, EXIT_FAIL
    d = spec.dimension
    points = [_floats(p) for p in args.point or []]
    if args.points:
        points += _read_points(args.points, d)
    if not points:
        raise UsageError("give --points FILE or at least one --point")
    c0 = normalization_constant(spec)
    rows = []
    for p in points:
        if len(p) != d:
            raise UsageError(f"point {p} has {len(p)} coordinates, expected {d}")
        if not spec.domain.contains(np.array(p)):
            rows.append({"x": p, "status": "outside domain"})
            continue
        try:
            di = divergence_integral(spec, p)
            row = {
                "x": p,
                "r0": c0 * math.exp(di.value),
                "divergence_integral": di.value,
                "divergence_integral_error": di.error,
                "status": "ok",
            }
            if args.residual:
                row["transport_residual"] = r0_transport_residual(spec, p)
        except FlowError as exc:
            row = {"x": p, "status": f"error: {exc}"}
        rows.append(row)
    if args.csv:
        header = tuple(f"x{i + 1}" for i in range(d)) + ("r0", "status")
        _write_csv(args.csv, header, (tuple(r["x"]) + (r.get("r0"), r["status"]) for r in rows))
    return {"c0": c0, "points": rows}, EXIT_OK


def cmd_validate(spec, args, ctx):
    if not args.h:
        raise UsageError("validate needs a non-empty --h list")
    check = _check_or_fail(spec)
    if not check.passed:
        return {"assumptions": check.to_json()}, EXIT_FAIL
    result = run_validation(
        spec,
        args.h,
        grid=args.grid,
        shortley_weller=not args.stair_step,
        mc_n=args.mc_n,
        mc_dt=args.mc_dt,
        seed=ctx["seed"],
        bridge=not args.no_bridge,
        max_steps=args.max_steps,
        workers=args.workers,
    )
    table = ["      h    predicted          pde    ratio"]
    for r in result.rows:
        pde = f"{r.pde.value:12.6g}" if r.pde.status == "ok" else f"{r.pde.status[:12]:>12}"
        ratio = f"{r.pde_ratio:8.4f}" if r.pde_ratio is not None else "       -"
        table.append(f"{r.h:7.4g} {r.predicted:12.6g} {pde} {ratio}")
    print("\n".join(table), file=sys.stderr)
    if args.csv:
        _write_csv(args.csv, ValidationRow.CSV_HEADER, (r.csv_row() for r in result.rows))
    return result.to_json(), EXIT_OK if result.passed else EXIT_FAIL


COMMANDS = {
    "check": cmd_check,
    "prefactor": cmd_prefactor,
    "predict": cmd_predict,
    "mc": cmd_mc,
    "pde": cmd_pde,
    "r0": cmd_r0,
    "validate": cmd_validate,
}


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kramers-exit", description="Exit-time predictions and their numerical validation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("problem", help="JSON problem file, or the name of a bundled example")
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--seed", type=int, help="RNG seed (overrides options.seed in the file)")
        p.add_argument("--timing", action="store_true", help="add wall-clock seconds to the report")
        return p

    common(sub.add_parser("check", help="verify the standing assumptions"))
    common(sub.add_parser("prefactor", help="compute kappa0 and zeta0"))
    p = common(sub.add_parser("predict", help="leading-order mean exit time and eigenvalue"))
    p.add_argument("--h", type=_positive_float, nargs="+", required=True)

    p = common(sub.add_parser("mc", help="Monte Carlo exit times"))
    p.add_argument("--h", type=_positive_float, required=True)
    p.add_argument("--dt", type=_positive_float, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--bridge", action="store_true", help="Brownian-bridge crossing correction")
    p.add_argument("--max-steps", type=_positive_int, help="per trajectory (default 1e9/n)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--start", help="comma-separated start point (default x0)")
    p.add_argument("--rate", type=_positive_float, help="rate for the exponentiality test (default 1/mean)")
    p.add_argument("--csv", help="write per-trajectory exit times here")

    p = common(sub.add_parser("pde", help="grid solution of the mean exit time problem"))
    p.add_argument("--h", type=_positive_float, required=True)
    p.add_argument("--grid", type=int, required=True, help="cells per axis (>= 32)")
    p.add_argument("--eig", action="store_true", help="also estimate the principal eigenvalue")
    p.add_argument("--shortley-weller", action="store_true", help="cut-cell boundary treatment")
    p.add_argument("--csv", help="write u at the interior nodes here")

    p = common(sub.add_parser("r0", help="leading-order stationary density shape"))
    p.add_argument("--points", help="CSV file of points, one per row")
    p.add_argument("--point", action="append", help="comma-separated point (repeatable)")
    p.add_argument("--residual", action="store_true", help="also report the transport-equation residual")
    p.add_argument("--csv", help="write the values here")

    p = common(sub.add_parser("validate", help="prediction vs grid and Monte Carlo over several h"))
    p.add_argument("--h", type=_positive_float, nargs="*", default=[])
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--stair-step", action="store_true", help="disable the cut-cell boundary treatment")
    p.add_argument("--mc-n", type=int, default=0, help="trajectories per h (0 skips Monte Carlo)")
    p.add_argument("--mc-dt", type=_positive_float, default=1e-3)
    p.add_argument("--no-bridge", action="store_true")
    p.add_argument("--max-steps", type=_positive_int)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--csv", help="write the table here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        path = _resolve_problem(args.problem)
        doc = load_document(path)
        spec = spec_from_document(doc)
        seed = args.seed if args.seed is not None else spec.options.seed
        if args.seed is not None:
            spec = spec.with_options(seed=args.seed)
        ctx = {"seed": seed}
        result, code = COMMANDS[args.command](spec, args, ctx)
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for line in exc.diagnostics:
            print(f"  {line}", file=sys.stderr)
        return EXIT_USAGE
    except (WellSpecError, PrefactorError, FlowError, PDEError, MCError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ValueError, ExpressionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = {
        "tool": "kramers-exit",
        "version": __version__,
        "subcommand": args.command,
        "input_sha256": document_hash(doc),
        "seed": seed,
        "problem": doc,
        "result": result,
    }
    if args.timing:
        report["wall_clock_seconds"] = time.perf_counter() - started
    text = dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
