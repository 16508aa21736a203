"""
Pydantic models for shapeline.
Defines run configuration, experiment plans, reports and manifests.
"""

import math
from enum import StrEnum

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

# =============================================================================
# Enums
# =============================================================================


class Artifact(StrEnum):
    """Which approximants a run builds."""

    SPLINE = "spline"
    POLY = "poly"
    BOTH = "both"


class SelectionKind(StrEnum):
    """Piece selected for an index j by the selection rules."""

    D0 = "d0"  # Phi_j * Pi(x_j) <= 0
    D1 = "d1"
    D2 = "d2"
    D3 = "d3"  # convex mix of nu=1 and nu=3
    D4A = "d4a"  # near an inflection point, nu=2
    D4B = "d4b"  # near an inflection point, nu=1
    D5 = "d5"  # boundary index
    TIE = "tie"  # no rule matched, nu=2 used


class CheckStatus(StrEnum):
    """Outcome of a check or a run."""

    PASS = "pass"
    FAIL = "fail"


class BoundKind(StrEnum):
    """Direction of a fitted inequality."""

    UPPER = "upper"
    LOWER = "lower"


class TableKind(StrEnum):
    """Kernel tables that can be dumped."""

    T = "t"
    T_BAR = "t-bar"
    TAU = "tau"
    T_TILDE = "t-tilde"
    TAU_TILDE = "tau-tilde"


# =============================================================================
# Configuration Models
# =============================================================================


def _check_inflection_points(values: list[float]) -> list[float]:
    if len(values) % 2:
        raise ValueError(f"inflection points must come in an even count, got {len(values)}")
    for y in values:
        if not (-math.pi <= y < math.pi):
            raise ValueError(f"inflection point {y} is outside [-pi, pi)")
    if len(set(values)) != len(values):
        raise ValueError("inflection points must be distinct")
    return sorted(values, reverse=True)


class RunConfig(BaseModel):
    """
    Merged configuration for one CLI invocation (file values overridden by flags).
    """

    functions: list[str] = Field(default_factory=lambda: ["neg-sin"], min_length=1)
    csv_path: str | None = Field(default=None, description="Samples for the 'csv' function id")
    inflection_points: list[float] = Field(default_factory=lambda: [0.0, -math.pi])
    n_values: list[int] = Field(default_factory=lambda: [16], min_length=1)
    grid_points: int | None = Field(default=None, ge=256, description="Sup-norm grid (M)")
    quadrature_points: int | None = Field(default=None, ge=1024, description="Fine grid (Q)")
    m1: int = Field(default=2, ge=1, description="Level multiplier, n1 = 2*m1*n")
    m2: int = Field(default=4, ge=1, description="Level multiplier, n2 = 2*m2*n1")
    max_m1: int = Field(default=8, ge=1, description="Calibration budget for m1")
    max_m2: int = Field(default=16, ge=1, description="Calibration budget for m2")
    b1: int | None = Field(default=None, ge=1, description="Kernel exponent at level n1")
    b2: int | None = Field(default=None, ge=1, description="Kernel exponent at level n2")
    sign_tolerance: float = Field(default=1e-9, gt=0)
    artifacts: Artifact = Artifact.BOTH
    calibrate: bool = False
    allow_fallback: bool = False
    stress: bool = Field(default=False, description="Also report ratios against omega_5")
    seed: int = 20240601
    record_timings: bool = True
    output_dir: str = "shapeline-out"
    table: TableKind = TableKind.T
    table_index: int = 0
    table_b: int | None = Field(default=None, ge=1)

    @field_validator("inflection_points")
    @classmethod
    def validate_inflection_points(cls, v: list[float]) -> list[float]:
        return _check_inflection_points(v)

    @field_validator("n_values")
    @classmethod
    def validate_n_values(cls, v: list[int]) -> list[int]:
        if any(n < 1 for n in v):
            raise ValueError("n values must be positive")
        return v

    @model_validator(mode="after")
    def validate_multipliers(self) -> "RunConfig":
        if self.max_m1 < self.m1:
            raise ValueError("max_m1 must not be below m1")
        if self.max_m2 < self.m2:
            raise ValueError("max_m2 must not be below m2")
        return self

    def to_plan(self) -> "ExperimentPlan":
        """Project the run configuration onto a study plan."""
        return ExperimentPlan(
            functions=self.functions,
            csv_path=self.csv_path,
            inflection_points=self.inflection_points,
            n_values=self.n_values,
            grid_points=self.grid_points,
            quadrature_points=self.quadrature_points,
            m1=self.m1,
            m2=self.m2,
            max_m1=self.max_m1,
            max_m2=self.max_m2,
            calibrate=self.calibrate,
            b1=self.b1,
            b2=self.b2,
            artifacts=self.artifacts,
            sign_tolerance=self.sign_tolerance,
            allow_fallback=self.allow_fallback,
            stress=self.stress,
            seed=self.seed,
            record_timings=self.record_timings,
        )


class ExperimentPlan(BaseModel):
    """
    Everything a study needs: functions, inflection set, levels and tolerances.
    """

    functions: list[str] = Field(..., min_length=1)
    csv_path: str | None = None
    inflection_points: list[float]
    n_values: list[int] = Field(..., min_length=1)
    grid_points: int | None = None
    quadrature_points: int | None = None
    m1: int = 2
    m2: int = 4
    max_m1: int = 8
    max_m2: int = 16
    calibrate: bool = False
    b1: int | None = None
    b2: int | None = None
    artifacts: Artifact = Artifact.BOTH
    sign_tolerance: float = 1e-9
    allow_fallback: bool = False
    stress: bool = False
    seed: int = 20240601
    record_timings: bool = True

    @field_validator("inflection_points")
    @classmethod
    def validate_inflection_points(cls, v: list[float]) -> list[float]:
        return _check_inflection_points(v)


# =============================================================================
# Check Results
# =============================================================================


class SignReport(BaseModel):
    """
    Result of a sampled sign check.
    """

    check: str = Field(..., description="Short name of the check")
    inequality: str = Field(..., description="The inequality the check witnesses")
    tolerance: float
    samples: int = 0
    violations: int = 0
    excluded_samples: int = Field(default=0, description="Samples inside excluded neighborhoods")
    excluded_violations: int = 0
    worst_location: float | None = None
    worst_margin: float = 0.0
    asserted: bool = True

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return self.violations == 0 or not self.asserted


class FittedConstant(BaseModel):
    """Smallest (or largest) constant making a sampled inequality hold."""

    name: str
    inequality: str
    kind: BoundKind = BoundKind.UPPER
    value: float
    gamma_power: float | None = None
    sample_grid: str
    samples: int


class BoundReport(BaseModel):
    """Sign property plus fitted constants for one kernel table."""

    index: int
    level: int
    b: int
    sign: SignReport
    constants: list[FittedConstant] = Field(default_factory=list)


class ClampEvent(BaseModel):
    """A solved weight that left [0, 1] and was clamped."""

    symbol: str
    raw: float
    clamped: float
    j: int | None = None
    nu: int | None = None
    context: str = ""


class SelectionEntry(BaseModel):
    """Selected piece for one index of the spline or polynomial sum."""

    j: int
    kind: SelectionKind
    nu: int
    alpha: float | None = None


class PieceParameters(BaseModel):
    """Solved weights of one smoothed piece."""

    j: int
    nu: int
    alpha: float
    beta: float
    kappa: float = 0.0
    phi_residual: float
    psi_residual: float


# =============================================================================
# Manifests and Reports
# =============================================================================


class SplineManifest(BaseModel):
    """JSON manifest written next to a spline dump."""

    function: str
    n: int
    inflection_points: list[float]
    rotation: float
    selections: list[SelectionEntry]
    sign_reports: list[SignReport]
    diagnostics: list[str] = Field(default_factory=list)
    error: float
    omega4: float
    status: CheckStatus


class PolyManifest(BaseModel):
    """JSON manifest written next to a polynomial dump."""

    function: str
    n: int
    inflection_points: list[float]
    m1: int
    m2: int
    b1: int
    b2: int
    fallback: bool = False
    pieces: list[PieceParameters] = Field(default_factory=list)
    clamp_events: list[ClampEvent] = Field(default_factory=list)
    constants: list[FittedConstant] = Field(default_factory=list)
    sign_reports: list[SignReport] = Field(default_factory=list)
    calibration_steps: list[str] = Field(default_factory=list)
    error: float
    omega4: float
    periodicity_residual: float | None = None
    polynomial_drift: float | None = None
    status: CheckStatus


class CellResult(BaseModel):
    """
    Everything measured for one (function, n) cell of a study.
    """

    function: str
    n: int
    conforming: bool
    fallback: bool = False
    omega4: float
    omega5: float | None = None
    spline_error: float | None = None
    technical_error: float | None = None
    poly_error: float | None = None
    spline_poly_distance: float | None = None
    spline_ratio: float | None = None
    poly_ratio: float | None = None
    periodicity_residual: float | None = None
    polynomial_drift: float | None = None
    sign_reports: list[SignReport] = Field(default_factory=list)
    constants: list[FittedConstant] = Field(default_factory=list)
    clamp_events: list[ClampEvent] = Field(default_factory=list)
    diagnostics: list[str] = Field(default_factory=list)
    status: CheckStatus = CheckStatus.PASS
    runtime_seconds: float | None = None


class ConvergenceSummary(BaseModel):
    """Log-log slope and ratio spread of one error column."""

    function: str
    artifact: Artifact
    n_values: list[int]
    slope: float | None = None
    reference_slope: float | None = Field(default=None, description="Log-log slope of omega_4")
    slope_in_range: bool | None = None
    ratio_min: float | None = None
    ratio_max: float | None = None
    stable: bool = True


class ConstantSpread(BaseModel):
    """One fitted constant of one function across the levels of a study."""

    function: str
    name: str
    n_values: list[int]
    values: list[float]
    spread: float | None = None
    stable: bool = True


class Report(BaseModel):
    """
    Study report: all cells, convergence summaries and the overall status.
    """

    plan: ExperimentPlan
    cells: list[CellResult]
    convergence: list[ConvergenceSummary] = Field(default_factory=list)
    constant_spreads: list[ConstantSpread] = Field(default_factory=list)
    status: CheckStatus
