"""
shapeline command-line interface.

Usage:
    python -m shapeline build-spline --f neg-sin --y 0,-pi --n 64
    python -m shapeline build-poly --f neg-sin --n 16 [--calibrate --max-m2 16]
    python -m shapeline study --config plan.yaml
    python -m shapeline calibrate --f neg-sin --n 16
    python -m shapeline dump --table tau --index 3 --n 32

Exit codes: 0 pass, 1 input error, 2 shape check failure, 3 calibration exhausted.
"""

import argparse
import sys
from pathlib import Path
from typing import Any

import structlog
from pydantic import ValidationError

from shapeline.config import ShapelineSettings, get_settings, load_config_file
from shapeline.errors import NeighborhoodOverlap, ShapelineError, ShapelineInputError
from shapeline.functions import builtin_names, get_function
from shapeline.kernels import FineGrid, KernelBank
from shapeline.logging_setup import configure_logging
from shapeline.models import (
    Artifact,
    CheckStatus,
    RunConfig,
    SignReport,
    SplineManifest,
    TableKind,
)
from shapeline.periodic_core import PI, InflectionSet, modulus, search_grid, sup_norm
from shapeline.poly import (
    LevelConfig,
    build_poly,
    calibrate_poly,
    fallback_whitney,
    verify_poly_shape,
)
from shapeline.reporting import ReportWriter, write_columns, write_json
from shapeline.spline import build_spline, verify_spline_shape
from shapeline.verifier import precheck_coconvex, run_study

log = structlog.get_logger()

# Flag dest -> RunConfig field
FLAG_FIELDS = {
    "f": "functions",
    "y": "inflection_points",
    "n": "n_values",
    "csv": "csv_path",
    "grid_points": "grid_points",
    "quadrature_points": "quadrature_points",
    "m1": "m1",
    "m2": "m2",
    "max_m1": "max_m1",
    "max_m2": "max_m2",
    "b1": "b1",
    "b2": "b2",
    "tolerance": "sign_tolerance",
    "artifacts": "artifacts",
    "calibrate": "calibrate",
    "allow_fallback": "allow_fallback",
    "stress": "stress",
    "seed": "seed",
    "record_timings": "record_timings",
    "output_dir": "output_dir",
    "table": "table",
    "index": "table_index",
    "table_b": "table_b",
}

NAMED_ANGLES = {"pi": PI, "-pi": -PI, "+pi": PI}


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to the input-error exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# =============================================================================
# Configuration
# =============================================================================


def _split(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_flag(dest: str, value: Any) -> Any:
    if dest == "f":
        return _split(value)
    if dest == "n":
        try:
            return [int(part) for part in _split(value)]
        except ValueError as e:
            raise ShapelineInputError(f"--n expects comma-separated integers, got {value!r}") from e
    if dest == "y":
        if not value.strip():
            return []
        try:
            return [NAMED_ANGLES.get(part.lower(), None) or float(part) for part in _split(value)]
        except ValueError as e:
            raise ShapelineInputError(f"--y expects comma-separated reals, got {value!r}") from e
    return value


def build_config(args: argparse.Namespace, settings: ShapelineSettings) -> RunConfig:
    """Merge settings defaults, the config file and command-line flags (flags win)."""
    data: dict[str, Any] = {
        "m1": settings.multiplier_m1,
        "m2": settings.multiplier_m2,
        "max_m1": max(settings.max_m1, settings.multiplier_m1),
        "max_m2": max(settings.max_m2, settings.multiplier_m2),
        "sign_tolerance": settings.sign_tolerance,
        "seed": settings.seed,
        "output_dir": settings.output_dir,
    }
    if args.config:
        try:
            data.update(load_config_file(args.config))
        except (OSError, ValueError) as e:
            raise ShapelineInputError(f"cannot read config {args.config}: {e}") from e
    for dest, name in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[name] = _parse_flag(dest, value)
    return RunConfig.model_validate(data)


def _settings_for(config: RunConfig, settings: ShapelineSettings) -> ShapelineSettings:
    update = {}
    if config.quadrature_points:
        update["quadrature_points"] = config.quadrature_points
    if config.grid_points:
        update["grid_points"] = config.grid_points
    problems = settings.model_copy(update=update).validate_grids()
    if problems:
        raise ShapelineInputError("; ".join(problems))
    return settings.model_copy(update=update)


def _status(reports: list[SignReport]) -> CheckStatus:
    return CheckStatus.PASS if all(r.passed for r in reports) else CheckStatus.FAIL


def _conforming(reports: list[SignReport], conforming: bool) -> list[SignReport]:
    if conforming:
        return reports
    return [r.model_copy(update={"asserted": False}) for r in reports]


# =============================================================================
# Commands
# =============================================================================


def cmd_build_spline(config: RunConfig, settings: ShapelineSettings) -> int:
    """Build S for every (function, n), write the CSV dump and JSON manifest."""
    inflections = InflectionSet.from_values(config.inflection_points)
    output_dir = Path(config.output_dir)
    failed = False
    for name in config.functions:
        f = get_function(name, inflections, config.csv_path)
        conforming = precheck_coconvex(f, inflections, settings.grid_points).passed
        for n in config.n_values:
            model = build_spline(f, inflections, n)
            reports = _conforming(verify_spline_shape(model, config.sign_tolerance), conforming)
            x = search_grid(settings.grid_points, n)
            error = sup_norm(f(x) - model(x))
            omega4 = modulus(
                f, 4, PI / n, grid_points=settings.grid_points, delta_points=settings.delta_points
            )
            status = _status(reports)
            failed = failed or status == CheckStatus.FAIL
            stem = output_dir / f"spline-{name}-n{n}"
            write_columns(stem.with_suffix(".csv"), model.dump_columns(x))
            manifest = SplineManifest(
                function=name,
                n=n,
                inflection_points=list(inflections.points),
                rotation=model.rotation.shift,
                selections=model.selections,
                sign_reports=reports,
                diagnostics=model.diagnostics,
                error=error,
                omega4=omega4,
                status=status,
            )
            write_json(stem.with_suffix(".json"), manifest)
            print(f"spline {name} n={n}: {status.value} |f-S|={error:.3e} -> {stem}.csv")
    return 2 if failed else 0


def cmd_build_poly(config: RunConfig, settings: ShapelineSettings) -> int:
    """Build P_n (optionally calibrating the multipliers), write dumps and manifests."""
    inflections = InflectionSet.from_values(config.inflection_points)
    output_dir = Path(config.output_dir)
    failed = False
    for name in config.functions:
        f = get_function(name, inflections, config.csv_path)
        conforming = precheck_coconvex(f, inflections, settings.grid_points).passed
        for n in config.n_values:
            try:
                if config.calibrate:
                    model, reports = calibrate_poly(
                        f,
                        inflections,
                        n,
                        m1=config.m1,
                        m2=config.m2,
                        max_m1=config.max_m1,
                        max_m2=config.max_m2,
                        b1=config.b1,
                        b2=config.b2,
                        settings=settings,
                        tolerance=config.sign_tolerance,
                    )
                else:
                    levels = LevelConfig.create(
                        n, inflections.s, config.m1, config.m2, config.b1, config.b2
                    )
                    model = build_poly(
                        f,
                        inflections,
                        n,
                        levels,
                        settings=settings,
                        tolerance=config.sign_tolerance,
                    )
                    reports = verify_poly_shape(model, config.sign_tolerance)
            except NeighborhoodOverlap:
                if not config.allow_fallback:
                    raise
                model = fallback_whitney(f, inflections, n)
                reports = verify_poly_shape(model, config.sign_tolerance)
            reports = _conforming(reports, conforming)
            x = search_grid(settings.grid_points, n)
            error = sup_norm(f(x) - model(x))
            omega4 = modulus(
                f, 4, PI / n, grid_points=settings.grid_points, delta_points=settings.delta_points
            )
            manifest = model.manifest(error, omega4, reports, CheckStatus.PASS)
            manifest.sign_reports = _conforming(manifest.sign_reports, conforming)
            manifest.status = _status(manifest.sign_reports)
            failed = failed or manifest.status == CheckStatus.FAIL
            stem = output_dir / f"poly-{name}-n{n}"
            write_columns(stem.with_suffix(".csv"), model.dump_columns(x))
            write_json(stem.with_suffix(".json"), manifest)
            print(f"poly {name} n={n}: {manifest.status.value} |f-P|={error:.3e} -> {stem}.csv")
    return 2 if failed else 0


def cmd_calibrate(config: RunConfig, settings: ShapelineSettings) -> int:
    return cmd_build_poly(config.model_copy(update={"calibrate": True}), settings)


def cmd_study(config: RunConfig, settings: ShapelineSettings) -> int:
    """Run the study plan and write report.json, tables.csv and summary.txt."""
    report = run_study(config.to_plan(), settings)
    paths = ReportWriter(config.output_dir).write(report)
    print(f"study: {report.status.value} ({len(report.cells)} cells) -> {paths[0].parent}")
    return 0 if report.status == CheckStatus.PASS else 2


def cmd_dump(config: RunConfig, settings: ShapelineSettings) -> int:
    """Dump one kernel table (value and derivative) on [-pi, pi] at level n."""
    inflections = InflectionSet.from_values(config.inflection_points)
    output_dir = Path(config.output_dir)
    k = config.table_index
    for n in config.n_values:
        b = config.table_b or LevelConfig.create(n, inflections.s).b1
        grid = FineGrid.for_level(
            n,
            settings.quadrature_points,
            settings.min_points_per_step,
            settings.gauss_nodes,
            exponent=b,
        )
        bank = KernelBank(
            grid,
            n,
            inflections,
            b,
            clamp_epsilon=settings.clamp_epsilon,
            divisor_floor=settings.divisor_floor,
        )
        tables = {
            TableKind.T: bank.step,
            TableKind.T_BAR: bank.plain,
            TableKind.TAU: bank.tau,
            TableKind.T_TILDE: bank.t_tilde,
            TableKind.TAU_TILDE: bank.tau_tilde,
        }
        table = tables[config.table](k)
        half = grid.steps_per_half_period
        inside = slice(2 * half, 4 * half + 1)
        path = output_dir / f"{config.table.value}-n{n}-k{k}.csv"
        write_columns(
            path,
            {"x": grid.nodes[inside], "value": table.values[inside], "slope": table.slopes[inside]},
        )
        print(f"{config.table.value} k={k} n={n} b={b} -> {path}")
    return 0


COMMANDS = {
    "build-spline": cmd_build_spline,
    "build-poly": cmd_build_poly,
    "calibrate": cmd_calibrate,
    "study": cmd_study,
    "dump": cmd_dump,
}


# =============================================================================
# Parser
# =============================================================================


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (JSON or YAML)")
    common.add_argument(
        "--f", help=f"Comma-separated function ids: {', '.join(builtin_names())} (default neg-sin)"
    )
    common.add_argument(
        "--y", help="Comma-separated inflection points, 'pi' allowed (default 0,-pi)"
    )
    common.add_argument("--n", help="Comma-separated levels n (default 16)")
    common.add_argument("--csv", help="Sample file for the 'csv' function id")
    common.add_argument("--grid-points", type=int, help="Sup-norm grid points M (default 2^14)")
    common.add_argument("--quadrature-points", type=int, help="Fine-grid points Q (default 2^16)")
    common.add_argument("--m1", type=int, help="Level multiplier, n1 = 2*m1*n (default 2)")
    common.add_argument("--m2", type=int, help="Level multiplier, n2 = 2*m2*n1 (default 4)")
    common.add_argument("--max-m1", type=int, help="Calibration budget for m1 (default 8)")
    common.add_argument("--max-m2", type=int, help="Calibration budget for m2 (default 16)")
    common.add_argument("--b1", type=int, help="Kernel exponent at n1 (default s+2)")
    common.add_argument("--b2", type=int, help="Kernel exponent at n2 (default 3(s+1))")
    common.add_argument("--tolerance", type=float, help="Relative sign tolerance (default 1e-9)")
    common.add_argument(
        "--artifacts",
        choices=[a.value for a in Artifact],
        help="Approximants to build (default both)",
    )
    common.add_argument(
        "--calibrate", action="store_true", default=None, help="Calibrate m1/m2 for the polynomial"
    )
    common.add_argument(
        "--allow-fallback",
        action="store_true",
        default=None,
        help="Use the constant Whitney approximant when n is below the neighborhood gates",
    )
    common.add_argument(
        "--stress", action="store_true", default=None, help="Also report omega_5 ratios"
    )
    common.add_argument("--seed", type=int, help="Seed for randomized checks")
    common.add_argument(
        "--no-timings",
        dest="record_timings",
        action="store_false",
        default=None,
        help="Leave runtimes out of the report",
    )
    common.add_argument("--table", choices=[t.value for t in TableKind], help="Table to dump")
    common.add_argument("--index", type=int, help="Table index k (default 0)")
    common.add_argument("--table-b", type=int, help="Kernel exponent for the dump (default s+2)")
    common.add_argument("--output-dir", help="Directory for dumps and reports")
    common.add_argument(
        "--print-config",
        action="store_true",
        help="Print the merged configuration as JSON and exit",
    )
    common.add_argument("--log-level", help="Log level (default from SHAPELINE_LOG_LEVEL)")
    common.add_argument("--log-format", choices=["json", "console"], help="Log renderer")

    parser = ArgumentParser(
        prog="shapeline",
        description="Nearly coconvex spline and trigonometric polynomial approximation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")
    subparsers.add_parser("build-spline", parents=[common], help="Build the coconvex spline S")
    subparsers.add_parser("build-poly", parents=[common], help="Build the polynomial P_n")
    subparsers.add_parser("calibrate", parents=[common], help="Build P_n with calibrated m1/m2")
    subparsers.add_parser("study", parents=[common], help="Run a convergence and shape study")
    subparsers.add_parser("dump", parents=[common], help="Dump a kernel table")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 0

    configure_logging(args.log_level, args.log_format)
    settings = get_settings()
    try:
        config = build_config(args, settings)
        if args.print_config:
            print(config.model_dump_json(indent=2))
            return 0
        return COMMANDS[args.command](config, _settings_for(config, settings))
    except ValidationError as e:
        print(f"invalid configuration:\n{e}", file=sys.stderr)
        return 1
    except ShapelineError as e:
        log.error("command_failed", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
