"""
Experiment engine: input prechecks, per-(function, n) cells, convergence studies.
"""

import time
from dataclasses import dataclass, field

import joblib
import numpy as np
import structlog

from shapeline.bounds import fitted
from shapeline.config import ShapelineSettings, get_settings
from shapeline.errors import NeighborhoodOverlap, ShapelineError
from shapeline.functions import PeriodicFunction, get_function
from shapeline.models import (
    Artifact,
    BoundKind,
    CellResult,
    CheckStatus,
    ConstantSpread,
    ConvergenceSummary,
    ExperimentPlan,
    Report,
    SignReport,
)
from shapeline.periodic_core import (
    PI,
    DyadicGrid,
    InflectionSet,
    modulus,
    search_grid,
    sup_norm,
    whitney_check,
)
from shapeline.poly import (
    LevelConfig,
    PolyModel,
    build_poly,
    calibrate_poly,
    fallback_whitney,
    verify_poly_shape,
)
from shapeline.spline import SplineModel, build_spline, verify_spline_shape

__all__ = [
    "PrecheckResult",
    "precheck_coconvex",
    "run_cell",
    "run_study",
    "convergence_summary",
    "constant_spreads",
    "study_status",
    "whitney_report",
]

log = structlog.get_logger()

STABILITY_FACTOR = 2.0
SLOPE_TOLERANCE = 0.5  # error slope within omega_4 slope +- 0.5
MIN_SLOPE_POINTS = 3
FORM_POINTS = 1000


@dataclass
class PrecheckResult:
    """Outcome of sampling f''(x) Pi(x) >= 0."""

    status: CheckStatus
    locations: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == CheckStatus.PASS


def precheck_coconvex(
    f: PeriodicFunction,
    inflections: InflectionSet,
    grid_points: int = 1 << 14,
    tolerance: float = 1e-9,
    max_locations: int = 16,
) -> PrecheckResult:
    """
    Check that f lies in the coconvex class of Y by sampling f''(x) Pi(x).

    Finite-difference second derivatives use a looser tolerance.
    """
    x = search_grid(grid_points)
    second = f.f2(x)
    scale = max(sup_norm(second), 1e-300)
    if f.second_derivative is None:
        tolerance = max(tolerance, 1e-6)
    bad = second * inflections.pi(x) / scale < -tolerance
    if not np.any(bad):
        return PrecheckResult(status=CheckStatus.PASS)
    return PrecheckResult(
        status=CheckStatus.FAIL, locations=[float(v) for v in x[bad][:max_locations]]
    )


def whitney_report(f: PeriodicFunction, n: int, tolerance_factor: float) -> SignReport:
    """|f - L_3| against omega_4 on the four knot steps around the origin; reported only."""
    grid = DyadicGrid(n)
    a, b = float(grid.knot(2)), float(grid.knot(-2))
    error, omega, passed = whitney_check(f, a, b, tolerance_factor=tolerance_factor)
    return SignReport(
        check="whitney",
        inequality=f"|f - L_3| <= {tolerance_factor} omega_4(f, h, [a, b])",
        tolerance=tolerance_factor,
        samples=1,
        violations=int(not passed),
        worst_location=a,
        worst_margin=tolerance_factor * omega - error,
        asserted=False,
    )


# =============================================================================
# Cells
# =============================================================================


def _spline_checks(
    f: PeriodicFunction,
    model: SplineModel,
    x: np.ndarray,
    cell: CellResult,
    tolerance: float,
    rng: np.random.Generator,
) -> np.ndarray:
    values = model(x)
    cell.spline_error = sup_norm(f(x) - values)
    cell.technical_error = sup_norm(f(x) - model.technical(x))
    cell.sign_reports.extend(verify_spline_shape(model, tolerance))
    cell.diagnostics.extend(model.diagnostics)
    u = rng.uniform(-PI, PI, FORM_POINTS)
    gap = sup_norm(model.working(u) - model.f_form(u))
    cell.diagnostics.append(f"spline form equivalence residual {gap:.3e}")
    return values


def _poly_checks(
    f: PeriodicFunction, model: PolyModel, x: np.ndarray, cell: CellResult, tolerance: float
) -> np.ndarray:
    values = model(x)
    cell.poly_error = sup_norm(f(x) - values)
    cell.fallback = model.fallback
    cell.sign_reports.extend(model.piece_reports)
    cell.sign_reports.extend(verify_poly_shape(model, tolerance))
    cell.constants.extend(model.constants)
    cell.clamp_events.extend(model.clamp_events)
    cell.diagnostics.extend(model.diagnostics)
    if model.fallback:
        cell.diagnostics.append(f"Whitney certificate 3*omega4(f, 4pi) = {model.certificate:.6g}")
    else:
        cell.periodicity_residual = model.periodicity_residual
        cell.polynomial_drift = model.polynomial_drift
        cell.sign_reports.append(
            SignReport(
                check="poly-periodicity",
                inequality="raw drift equals closed-form polynomial drift",
                tolerance=1e-7,
                samples=int(model.nodes.size),
                violations=int(model.periodicity_residual >= 1e-7),
                worst_margin=-float(model.periodicity_residual),
            )
        )
    return values


def run_cell(
    plan: ExperimentPlan,
    function: str,
    n: int,
    settings: ShapelineSettings | None = None,
) -> CellResult:
    """Build the requested artifacts for one (function, n) and run every check."""
    settings = settings or get_settings()
    started = time.perf_counter()
    inflections = InflectionSet.from_values(plan.inflection_points)
    f = get_function(function, inflections, plan.csv_path)
    grid_points = plan.grid_points or settings.grid_points
    tolerance = plan.sign_tolerance
    rng = np.random.default_rng([plan.seed, n])

    precheck = precheck_coconvex(f, inflections, grid_points, tolerance)
    omega4 = modulus(f, 4, PI / n, grid_points=grid_points, delta_points=settings.delta_points)
    cell = CellResult(function=function, n=n, conforming=precheck.passed, omega4=omega4)
    if not precheck.passed:
        cell.diagnostics.append(
            f"f''Pi < 0 at {len(precheck.locations)}+ samples, first at {precheck.locations[0]:.6f}"
        )
    if plan.stress:
        cell.omega5 = modulus(
            f, 5, PI / n, grid_points=grid_points, delta_points=settings.delta_points
        )
    cell.sign_reports.append(whitney_report(f, n, settings.whitney_tolerance_factor))

    x = search_grid(grid_points, n)
    spline_values = None
    try:
        if plan.artifacts in (Artifact.SPLINE, Artifact.BOTH):
            model = build_spline(f, inflections, n)
            spline_values = _spline_checks(f, model, x, cell, tolerance, rng)
        if plan.artifacts in (Artifact.POLY, Artifact.BOTH):
            try:
                q_settings = settings
                if plan.quadrature_points:
                    q_settings = settings.model_copy(
                        update={"quadrature_points": plan.quadrature_points}
                    )
                if plan.calibrate:
                    poly, _ = calibrate_poly(
                        f,
                        inflections,
                        n,
                        m1=plan.m1,
                        m2=plan.m2,
                        max_m1=plan.max_m1,
                        max_m2=plan.max_m2,
                        b1=plan.b1,
                        b2=plan.b2,
                        settings=q_settings,
                        tolerance=tolerance,
                    )
                else:
                    levels = LevelConfig.create(
                        n, inflections.s, plan.m1, plan.m2, plan.b1, plan.b2
                    )
                    poly = build_poly(
                        f, inflections, n, levels, settings=q_settings, tolerance=tolerance
                    )
            except NeighborhoodOverlap:
                if not plan.allow_fallback:
                    raise
                poly = fallback_whitney(f, inflections, n)
            poly_values = _poly_checks(f, poly, x, cell, tolerance)
            if spline_values is not None:
                cell.spline_poly_distance = sup_norm(spline_values - poly_values)
                cell.constants.append(
                    fitted(
                        "c_sp",
                        "|S - P_n| <= c omega_4(f, h)",
                        BoundKind.UPPER,
                        np.array([cell.spline_poly_distance]),
                        np.array([omega4]),
                        gamma_power=None,
                        sample_grid=f"{x.size} points on [-pi, pi]",
                    )
                )
    except ShapelineError as e:
        if e.exit_code == 1:
            raise
        log.warning("cell_failed", function=function, n=n, error=str(e))
        cell.diagnostics.append(f"{type(e).__name__}: {e}")
        cell.status = CheckStatus.FAIL

    if omega4 > 0:
        if cell.spline_error is not None:
            cell.spline_ratio = cell.spline_error / omega4
        if cell.poly_error is not None:
            cell.poly_ratio = cell.poly_error / omega4
    if not cell.conforming:
        cell.sign_reports = [r.model_copy(update={"asserted": False}) for r in cell.sign_reports]
    if any(not r.passed for r in cell.sign_reports):
        cell.status = CheckStatus.FAIL
    if plan.record_timings:
        cell.runtime_seconds = round(time.perf_counter() - started, 3)
    log.info(
        "cell_done",
        function=function,
        n=n,
        status=cell.status.value,
        spline_error=cell.spline_error,
        poly_error=cell.poly_error,
    )
    return cell


# =============================================================================
# Studies
# =============================================================================


def _log_slope(n_values: list[int], values: list[float]) -> tuple[float | None, int]:
    points = [(n, v) for n, v in zip(n_values, values, strict=True) if v > 0]
    if len(points) < 2:
        return None, len(points)
    logs = np.log(np.array(points, dtype=float))
    return float(np.polyfit(logs[:, 0], logs[:, 1], 1)[0]), len(points)


def convergence_summary(
    function: str, artifact: Artifact, n_values: list[int], errors: list[float], omegas: list[float]
) -> ConvergenceSummary:
    """
    Least-squares log-log slopes of the error and of omega_4 against n, and the spread of
    error/omega4.

    With at least three levels the error slope must lie within SLOPE_TOLERANCE of the
    omega_4 slope, which is [-4.5, -3.5] for smooth f.
    """
    summary = ConvergenceSummary(function=function, artifact=artifact, n_values=n_values)
    summary.slope, count = _log_slope(n_values, errors)
    summary.reference_slope, _ = _log_slope(n_values, omegas)
    if (
        summary.slope is not None
        and summary.reference_slope is not None
        and count >= MIN_SLOPE_POINTS
    ):
        summary.slope_in_range = abs(summary.slope - summary.reference_slope) <= SLOPE_TOLERANCE
    ratios = [e / w for e, w in zip(errors, omegas, strict=True) if w > 0 and e > 0]
    if ratios:
        summary.ratio_min, summary.ratio_max = min(ratios), max(ratios)
        summary.stable = summary.ratio_max <= STABILITY_FACTOR * summary.ratio_min
    return summary


def constant_spreads(function: str, cells: list[CellResult]) -> list[ConstantSpread]:
    """
    max/min of every fitted constant across the cells of one function.

    Zero and infinite fits carry no scale and are left out; a constant seen at fewer than
    two levels is stable by default.
    """
    by_name: dict[str, list[tuple[int, float]]] = {}
    for cell in cells:
        for constant in cell.constants:
            if constant.value > 0 and np.isfinite(constant.value):
                by_name.setdefault(constant.name, []).append((cell.n, constant.value))
    spreads = []
    for name, entries in by_name.items():
        values = [v for _, v in entries]
        row = ConstantSpread(
            function=function, name=name, n_values=[n for n, _ in entries], values=values
        )
        if len(values) >= 2:
            row.spread = max(values) / min(values)
            row.stable = row.spread <= STABILITY_FACTOR
        spreads.append(row)
    return spreads


def study_status(
    cells: list[CellResult],
    convergence: list[ConvergenceSummary],
    spreads: list[ConstantSpread],
) -> CheckStatus:
    """FAIL on a failed cell, an unstable ratio or constant, or an error slope out of range."""
    failed = (
        any(c.status == CheckStatus.FAIL for c in cells)
        or any(not row.stable or row.slope_in_range is False for row in convergence)
        or any(not row.stable for row in spreads)
    )
    return CheckStatus.FAIL if failed else CheckStatus.PASS

def run_study(plan: ExperimentPlan, settings: ShapelineSettings | None = None) -> Report:
    """
    Run every (function, n) cell of a plan, in parallel threads, and merge in plan order.
    """
    settings = settings or get_settings()
    inflections = InflectionSet.from_values(plan.inflection_points)
    for name in plan.functions:
        get_function(name, inflections, plan.csv_path)

    tasks = [(name, n) for name in plan.functions for n in plan.n_values]
    workers = max(1, min(settings.threads, len(tasks)))
    log.info("study_started", cells=len(tasks), workers=workers)
    cells = joblib.Parallel(n_jobs=workers, prefer="threads")(
        joblib.delayed(run_cell)(plan, name, n, settings) for name, n in tasks
    )

    convergence, spreads = [], []
    for name in plan.functions:
        rows = [c for c in cells if c.function == name]
        if len(rows) < 2 or not all(c.conforming for c in rows):
            continue
        if not any(c.fallback for c in rows):
            spreads.extend(constant_spreads(name, rows))
        for artifact, attr in ((Artifact.SPLINE, "spline_error"), (Artifact.POLY, "poly_error")):
            errors = [getattr(c, attr) for c in rows]
            if any(e is None for e in errors) or any(c.fallback for c in rows):
                continue
            convergence.append(
                convergence_summary(
                    name, artifact, [c.n for c in rows], errors, [c.omega4 for c in rows]
                )
            )

    status = study_status(cells, convergence, spreads)
    log.info("study_finished", status=status.value, cells=len(cells))
    return Report(
        plan=plan,
        cells=list(cells),
        convergence=convergence,
        constant_spreads=spreads,
        status=status,
    )
