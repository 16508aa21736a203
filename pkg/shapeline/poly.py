"""
Nearly coconvex approximant P_n.

Each truncated cubic Psi_{j,nu} of the spline is replaced by a smoothed counterpart
psi_{j,nu} built from steps and ramps at two refined levels n1 = 2*m1*n and
n2 = 2*m2*n1:

    phi_{j,nu}  = 6 * int [tau_tilde + h_tilde (alpha t_tilde_+ + (1-alpha) t_tilde_-)]
    psi_{j,nu}  = int [phi + h_hat (beta t_+ + t_{j_nu} + (1-beta) t_-)]

with alpha, beta (and kappa for nu=2) solved in closed form from endpoint
normalizations. P_n = L_3 + 4h sum Phi_j psi_j is stored as node values with first and
second derivatives on [-pi, pi] and evaluated by quintic Hermite interpolation.
"""

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import structlog
from scipy.interpolate import BPoly

from shapeline.bounds import fitted
from shapeline.config import ShapelineSettings, get_settings
from shapeline.errors import (
    AlphaOutOfRange,
    BetaOutOfRange,
    CalibrationExhausted,
    ShapelineError,
)
from shapeline.functions import PeriodicFunction
from shapeline.kernels import (
    FineGrid,
    KernelBank,
    check_step_kernel,
    ramp_constant,
    resolve_fine_grid,
    solve_weight,
)
from shapeline.models import (
    BoundKind,
    CheckStatus,
    ClampEvent,
    FittedConstant,
    PieceParameters,
    PolyManifest,
    SelectionEntry,
    SelectionKind,
    SignReport,
)
from shapeline.periodic_core import (
    PI,
    TWO_PI,
    InflectionSet,
    Rotation,
    build_neighborhoods,
    gamma,
    modulus,
    reduce_angle,
    require_disjoint,
)
from shapeline.spline import (
    SplineModel,
    build_spline,
    moved_set,
    seam_report,
    selection_terms,
)

log = structlog.get_logger()

BUMP_OFFSET = 5  # phi_{j,2} uses t_{(j_2+-5)*}
LEVEL1_NEIGHBORHOOD = 10
LEVEL2_NEIGHBORHOOD = 30
SPLINE_NEIGHBORHOOD = 3
PIECE_COMPARISON_RTOL = 1e-6
SEAM_TOLERANCE = 1e-7  # same as the periodicity witness


# =============================================================================
# Levels
# =============================================================================


@dataclass(frozen=True)
class LevelConfig:
    """
    Level n and its refinements n1 = 2*m1*n, n2 = 2*m2*n1 with kernel exponents.

    Knots of level n are knots of n1, and those of n1 are knots of n2, so the
    index maps j -> j_nu -> j_nu* are multiplications.
    """

    n: int
    m1: int
    m2: int
    b1: int
    b2: int

    @classmethod
    def create(
        cls, n: int, s: int, m1: int = 2, m2: int = 4, b1: int | None = None, b2: int | None = None
    ) -> "LevelConfig":
        return cls(
            n=n,
            m1=m1,
            m2=m2,
            b1=b1 if b1 is not None else s + 2,
            b2=b2 if b2 is not None else 3 * (s + 1),
        )

    @property
    def n1(self) -> int:
        return 2 * self.m1 * self.n

    @property
    def n2(self) -> int:
        return 2 * self.m2 * self.n1

    @property
    def h(self) -> float:
        return PI / self.n

    @property
    def h1(self) -> float:
        return PI / self.n1

    @property
    def h2(self) -> float:
        return PI / self.n2

    def to_level1(self, j: int) -> int:
        """Level-n1 index of the level-n knot x_j."""
        return j * (self.n1 // self.n)

    def to_level2(self, k: int) -> int:
        """Level-n2 index of the level-n1 knot x_k."""
        return k * (self.n2 // self.n1)


def phi_target(nu: int, h: float) -> float:
    """phi_{j,nu}(d_j + pi)."""
    if nu == 2:
        return 3 * PI**2 - 0.5 * h * h
    return 3 * (PI**2 - h * h)


def psi_target(h: float) -> float:
    """psi_{j,nu}(d_j + pi) = (pi + h) pi (pi - h)."""
    return PI**3 - PI * h * h


def step_weight(nu: int, h: float) -> float:
    """h_hat of the smoothed pieces: h^2, -h^2/4, h^2."""
    return -0.25 * h * h if nu == 2 else h * h


def polynomial_part(x: np.ndarray, d: float, h: float) -> np.ndarray:
    """Quartic q with psi_{j,nu} - q 2pi-periodic."""
    x = np.asarray(x, dtype=float)
    return (
        x**4 / (8 * PI)
        + (PI - d) * x**3 / (2 * PI)
        + (3 * d * d - 6 * PI * d + 2 * PI**2 - h * h) * x**2 / (4 * PI)
        + (PI - d) * (d * d - 2 * PI * d - h * h) * x / (2 * PI)
    )


def polynomial_drift(x: np.ndarray, d: float, h: float) -> np.ndarray:
    """q(x + 2pi) - q(x)."""
    return polynomial_part(np.asarray(x) + TWO_PI, d, h) - polynomial_part(x, d, h)


def comparison_scale(exact_second: np.ndarray) -> float:
    """Magnitude max |Psi_j''| against which psi_j'' - Psi_j'' is compared."""
    return max(float(np.max(np.abs(exact_second))), 1e-300)


# =============================================================================
# Pieces
# =============================================================================


@dataclass
class SmoothPiece:
    """Node arrays of psi_{j,nu} and its first two derivatives over the whole fine grid."""

    j: int
    nu: int
    center: float
    values: np.ndarray
    first: np.ndarray
    second: np.ndarray
    parameters: PieceParameters


@dataclass
class BankPair:
    """Kernel banks of both refined levels for one inflection set."""

    level1: KernelBank
    level2: KernelBank

    def clear(self) -> None:
        self.level1.clear()
        self.level2.clear()


def build_phi(
    levels: LevelConfig,
    banks: BankPair,
    j: int,
    nu: int,
    *,
    clamp_epsilon: float,
    events: list[ClampEvent],
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """
    phi_{j,nu} and phi'_{j,nu} at the nodes, plus the solved alpha and kappa.

    For nu in {1, 3} alpha mixes the corrected steps at (j_nu +- 1)*. For nu = 2 both
    derivative terms rise by one over a period, so alpha = 1/2 and a periodic bump
    kappa (t_{(j_2+5)*} - t_{(j_2-5)*}) carries the normalization.
    """
    bank = banks.level2
    grid = bank.grid
    h = levels.h
    lo, hi = grid.window(levels.n, j - 1)
    j_nu = levels.to_level1(j - nu + 1)
    ramp = bank.tau_tilde(levels.to_level2(j_nu))
    ramp_integral = grid.prefix(ramp.values, lo)
    target = phi_target(nu, h)

    if nu != 2:
        shift = (nu - 2) * h
        up = bank.t_tilde(levels.to_level2(j_nu + 1))
        down = bank.t_tilde(levels.to_level2(j_nu - 1))
        up_integral = grid.prefix(up.values, lo)
        down_integral = grid.prefix(down.values, lo)
        alpha = solve_weight(
            6 * (ramp_integral[hi] + shift * up_integral[hi]),
            6 * (ramp_integral[hi] + shift * down_integral[hi]),
            target,
            epsilon=clamp_epsilon,
            error=AlphaOutOfRange,
            strict=False,
            context=f"phi j={j} nu={nu}",
            events=events,
            j=j,
            nu=nu,
        )
        phi = 6 * (ramp_integral + shift * (alpha * up_integral + (1 - alpha) * down_integral))
        slope = 6 * (ramp.values + shift * (alpha * up.values + (1 - alpha) * down.values))
        return phi, slope, alpha, 0.0

    weight = -h * h / 12
    plus = bank.step(levels.to_level2(j_nu + BUMP_OFFSET))
    minus = bank.step(levels.to_level2(j_nu - BUMP_OFFSET))
    mixed = 0.5 * (plus.values + minus.values)
    bump = plus.values - minus.values
    bump_integral = grid.prefix(bump, lo)
    base = 6 * (ramp_integral + weight * (mixed - mixed[lo]))
    kappa = (target - base[hi]) / (6 * bump_integral[hi])
    phi = base + 6 * kappa * bump_integral
    slope = 6 * (ramp.values + weight * 0.5 * (plus.slopes + minus.slopes) + kappa * bump)
    return phi, slope, 0.5, float(kappa)


def build_psi_smooth(
    levels: LevelConfig,
    banks: BankPair,
    j: int,
    nu: int,
    *,
    clamp_epsilon: float,
    events: list[ClampEvent],
) -> SmoothPiece:
    """psi_{j,nu} with beta solved from the endpoint normalization."""
    grid = banks.level2.grid
    h = levels.h
    lo, hi = grid.window(levels.n, j - 1)
    phi, phi_slope, alpha, kappa = build_phi(
        levels, banks, j, nu, clamp_epsilon=clamp_epsilon, events=events
    )
    j_nu = levels.to_level1(j - nu + 1)
    if not banks.level1.neighborhoods(LEVEL1_NEIGHBORHOOD).in_h(j_nu):
        log.warning("kernel_outside_h10", j=j, nu=nu, index=j_nu, level=levels.n1)
    middle = banks.level1.step(j_nu)
    up = banks.level2.step(levels.to_level2(j_nu + 1))
    down = banks.level2.step(levels.to_level2(j_nu - 1))
    weight = step_weight(nu, h)

    phi_integral = grid.prefix(phi, lo)
    up_integral = grid.prefix(up.values, lo)
    middle_integral = grid.prefix(middle.values, lo)
    down_integral = grid.prefix(down.values, lo)
    target = psi_target(h)
    beta = solve_weight(
        phi_integral[hi] + weight * (up_integral[hi] + middle_integral[hi]),
        phi_integral[hi] + weight * (middle_integral[hi] + down_integral[hi]),
        target,
        epsilon=clamp_epsilon,
        error=BetaOutOfRange,
        strict=False,
        context=f"psi j={j} nu={nu}",
        events=events,
        j=j,
        nu=nu,
    )
    values = phi_integral + weight * (
        beta * up_integral + middle_integral + (1 - beta) * down_integral
    )
    first = phi + weight * (beta * up.values + middle.values + (1 - beta) * down.values)
    second = phi_slope + weight * (beta * up.slopes + middle.slopes + (1 - beta) * down.slopes)
    parameters = PieceParameters(
        j=j,
        nu=nu,
        alpha=alpha,
        beta=beta,
        kappa=kappa,
        phi_residual=abs(float(phi[hi]) - phi_target(nu, h)),
        psi_residual=abs(float(values[hi]) - target),
    )
    return SmoothPiece(
        j=j,
        nu=nu,
        center=float(grid.nodes[lo + grid.steps_per_half_period]),
        values=values,
        first=first,
        second=second,
        parameters=parameters,
    )


# =============================================================================
# Model
# =============================================================================


@dataclass
class PolyModel:
    """
    P_n for one function, inflection set and level configuration.

    `nodes`, `values`, `first` and `second` cover [-pi, pi] in working coordinates;
    evaluation outside continues periodically. The fallback model is the constant f(0).
    """

    function: PeriodicFunction
    inflections: InflectionSet
    n: int
    rotation: Rotation | None
    levels: LevelConfig | None = None
    spline: SplineModel | None = None
    nodes: np.ndarray | None = None
    values: np.ndarray | None = None
    first: np.ndarray | None = None
    second: np.ndarray | None = None
    a_term: np.ndarray | None = None
    b_term: np.ndarray | None = None
    pieces: list[PieceParameters] = field(default_factory=list)
    clamp_events: list[ClampEvent] = field(default_factory=list)
    constants: list[FittedConstant] = field(default_factory=list)
    piece_reports: list[SignReport] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    calibration_steps: list[str] = field(default_factory=list)
    periodicity_residual: float | None = None
    polynomial_drift: float | None = None
    fallback: bool = False
    constant: float | None = None
    certificate: float | None = None

    @cached_property
    def _hermite(self) -> BPoly:
        derivatives = np.column_stack([self.values, self.first, self.second])
        return BPoly.from_derivatives(self.nodes, derivatives)

    def to_working(self, x: np.ndarray | float) -> np.ndarray:
        shift = self.rotation.shift if self.rotation is not None else 0.0
        return reduce_angle(np.asarray(x, dtype=float) - shift)

    def from_working(self, u: np.ndarray | float) -> np.ndarray:
        shift = self.rotation.shift if self.rotation is not None else 0.0
        return reduce_angle(np.asarray(u, dtype=float) + shift)

    def working(self, u: np.ndarray | float, order: int = 0) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.fallback:
            return np.full(u.shape, self.constant if order == 0 else 0.0)
        spline = self._hermite if order == 0 else self._hermite.derivative(order)
        return np.asarray(spline(u), dtype=float)

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        return self.working(self.to_working(x))

    def derivative(self, x: np.ndarray | float, order: int = 1) -> np.ndarray:
        return self.working(self.to_working(x), order)

    def dump_columns(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Columns x, P, P'', Pi, P''*Pi."""
        u = self.to_working(x)
        second = self.working(u, 2)
        pi = self.inflections.pi(x)
        return {"x": x, "P": self.working(u), "P2": second, "Pi": pi, "P2_Pi": second * pi}

    def manifest(
        self, error: float, omega4: float, sign_reports: list[SignReport], status: CheckStatus
    ) -> PolyManifest:
        levels = self.levels
        return PolyManifest(
            function=self.function.name,
            n=self.n,
            inflection_points=list(self.inflections.points),
            m1=levels.m1 if levels else 0,
            m2=levels.m2 if levels else 0,
            b1=levels.b1 if levels else 0,
            b2=levels.b2 if levels else 0,
            fallback=self.fallback,
            pieces=self.pieces,
            clamp_events=self.clamp_events,
            constants=self.constants,
            sign_reports=[*self.piece_reports, *sign_reports],
            calibration_steps=self.calibration_steps,
            error=error,
            omega4=omega4,
            periodicity_residual=self.periodicity_residual,
            polynomial_drift=self.polynomial_drift,
            status=status,
        )


def _group_key(entry: SelectionEntry, owner: int | None) -> int:
    if entry.kind in (SelectionKind.D4A, SelectionKind.D4B) and owner is not None:
        return owner
    return 0


def _banks(
    grid: FineGrid, levels: LevelConfig, inflections: InflectionSet, settings: ShapelineSettings
) -> BankPair:
    options = {"clamp_epsilon": settings.clamp_epsilon, "divisor_floor": settings.divisor_floor}
    return BankPair(
        level1=KernelBank(grid, levels.n1, inflections, levels.b1, **options),
        level2=KernelBank(grid, levels.n2, inflections, levels.b2, **options),
    )


def build_poly(
    f: PeriodicFunction,
    inflections: InflectionSet,
    n: int,
    levels: LevelConfig | None = None,
    *,
    settings: ShapelineSettings | None = None,
    tolerance: float | None = None,
) -> PolyModel:
    """Build P_n with the same selections as the spline of level n."""
    settings = settings or get_settings()
    tolerance = tolerance if tolerance is not None else settings.sign_tolerance
    levels = levels or LevelConfig.create(
        n, inflections.s, settings.multiplier_m1, settings.multiplier_m2
    )
    require_disjoint(inflections, n, SPLINE_NEIGHBORHOOD)
    require_disjoint(inflections, levels.n1, LEVEL1_NEIGHBORHOOD)
    require_disjoint(inflections, levels.n2, LEVEL2_NEIGHBORHOOD)

    started = time.perf_counter()
    spline = build_spline(f, inflections, n)
    working = spline.working_inflections
    grid, quadrature = resolve_fine_grid(levels.n2, working, levels.b2, settings)
    dd = spline.differences
    h = levels.h
    near = build_neighborhoods(working, spline.grid, 2)

    nodes = grid.nodes
    half = grid.steps_per_half_period
    inside = slice(2 * half, 4 * half + 1)  # [-pi, pi]
    x_in = nodes[inside]
    pi_in = working.pi(x_in)
    raw = np.zeros(grid.size)
    raw_first = np.zeros(grid.size)
    raw_second = np.zeros(grid.size)
    a_sum = np.zeros(x_in.size)
    b_sum = np.zeros(x_in.size)
    drift = np.zeros(grid.size - 2 * half)
    shifted = nodes[: grid.size - 2 * half]

    groups: dict[int, list[SelectionEntry]] = {}
    for entry in spline.selections:
        groups.setdefault(_group_key(entry, near.owner(entry.j)), []).append(entry)

    events: list[ClampEvent] = []
    pieces: list[PieceParameters] = []
    constants: list[FittedConstant] = []
    closeness_lhs, closeness_shape = [], []
    comparison = {"violations": 0, "samples": 0}
    worst_comparison = 0.0
    worst_form = 0.0

    for key in sorted(groups):
        shape_set = working if key == 0 else moved_set(working, near, key)
        banks = _banks(grid, levels, shape_set, settings)
        for entry in groups[key]:
            weight_j = 4 * h * dd.Phi(entry.j)
            if weight_j == 0:
                continue
            for share, psi_piece in selection_terms(spline.grid, entry):
                piece = build_psi_smooth(
                    levels,
                    banks,
                    entry.j,
                    psi_piece.nu,
                    clamp_epsilon=settings.clamp_epsilon,
                    events=events,
                )
                pieces.append(piece.parameters)
                weight = weight_j * share
                raw += weight * piece.values
                raw_first += weight * piece.first
                raw_second += weight * piece.second
                drift += weight * polynomial_drift(shifted, piece.center, h)

                form = np.abs(
                    piece.values[2 * half :]
                    - piece.values[: grid.size - 2 * half]
                    - polynomial_drift(shifted, piece.center, h)
                )
                worst_form = max(worst_form, float(np.max(form)) / PI**3)

                exact_second = psi_piece(x_in, order=2)
                difference = piece.second[inside] - exact_second
                if near.in_h(entry.j):
                    a_sum += weight * difference
                else:
                    b_sum += weight * difference

                closeness_lhs.append(piece.values[inside] - psi_piece(x_in))
                closeness_shape.append(h**3 * gamma(entry.j, n, x_in) ** 6)

                sign = float(shape_set.pi(spline.grid.knot(entry.j)))
                direction = -1.0 if psi_piece.nu == 2 else 1.0
                margins = direction * difference * pi_in * sign / comparison_scale(exact_second)
                comparison["samples"] += margins.size
                comparison["violations"] += int(np.count_nonzero(margins < -PIECE_COMPARISON_RTOL))
                worst_comparison = min(worst_comparison, float(np.min(margins)))
        if key == 0:
            constants.extend(_kernel_constants(banks.level2))
        banks.clear()

    lagrange = spline.lagrange.derivatives(nodes)
    raw += lagrange[0]
    raw_first += lagrange[1]
    raw_second += lagrange[2]
    drift += spline.lagrange(shifted + TWO_PI) - spline.lagrange(shifted)

    scale = max(float(np.max(np.abs(raw[inside]))), 1e-300)
    numeric_drift = raw[2 * half :] - raw[: grid.size - 2 * half]
    periodicity = float(np.max(np.abs(numeric_drift - drift))) / scale
    in_period = (shifted >= -PI) & (shifted <= PI)
    closed_drift = float(np.max(np.abs(drift[in_period])))

    values, first, second = raw[inside], raw_first[inside], raw_second[inside]
    diagnostics = list(spline.diagnostics)
    diagnostics.append(f"value jump at the seam {values[0] - values[-1]:.3e}")
    omega4 = modulus(
        f, 4, h, grid_points=settings.grid_points, delta_points=settings.delta_points
    )
    weights = np.array([dd.Phi(entry.j) for entry in spline.selections])
    constants.extend(
        [
            fitted(
                "c_psi",
                "|Psi_j - psi_j| <= c h^3 Gamma_j^6",
                BoundKind.UPPER,
                np.concatenate(closeness_lhs) if closeness_lhs else np.zeros(0),
                np.concatenate(closeness_shape) if closeness_shape else np.zeros(0),
                gamma_power=6,
                sample_grid=f"{x_in.size} fine-grid nodes on [-pi, pi], n2={levels.n2}",
            ),
            fitted(
                "c_phi",
                "|Phi_j| <= c omega_4(f, h) / h^4",
                BoundKind.UPPER,
                weights,
                np.full(weights.shape, omega4 / h**4),
                gamma_power=None,
                sample_grid=f"{weights.size} indices of level n={n}",
            ),
        ]
    )
    piece_reports = [
        SignReport(
            check="quadrature",
            inequality="kernel values move by < tol when the fine grid doubles",
            tolerance=settings.quadrature_tolerance,
            samples=1,
            violations=int(quadrature >= settings.quadrature_tolerance),
            worst_margin=-quadrature,
        ),
        SignReport(
            check="piece-comparison",
            inequality="(psi_j'' - Psi_j'') Pi(x) Pi(x_j) >= 0 for nu=1,3 and <= 0 for nu=2",
            tolerance=PIECE_COMPARISON_RTOL,
            samples=comparison["samples"],
            violations=comparison["violations"],
            worst_margin=worst_comparison,
            asserted=False,
        ),
        SignReport(
            check="piece-form",
            inequality="psi_j - q_j is 2pi-periodic",
            tolerance=1e-7,
            samples=len(pieces),
            violations=int(worst_form >= 1e-7),
            worst_margin=-worst_form,
            asserted=False,
        ),
    ]
    log.info(
        "poly_built",
        function=f.name,
        n=n,
        n1=levels.n1,
        n2=levels.n2,
        pieces=len(pieces),
        clamps=len(events),
        points_per_step=grid.points_per_step,
        quadrature_drift=quadrature,
        periodicity=periodicity,
        seconds=round(time.perf_counter() - started, 3),
    )
    return PolyModel(
        function=f,
        inflections=inflections,
        n=n,
        rotation=spline.rotation,
        levels=levels,
        spline=spline,
        nodes=x_in.copy(),
        values=values.copy(),
        first=first.copy(),
        second=second.copy(),
        a_term=a_sum * pi_in,
        b_term=b_sum * pi_in,
        pieces=pieces,
        clamp_events=events,
        constants=constants,
        piece_reports=piece_reports,
        diagnostics=diagnostics,
        periodicity_residual=periodicity,
        polynomial_drift=closed_drift,
    )


def _kernel_constants(bank: KernelBank) -> list[FittedConstant]:
    """Step and ramp constants for one index of H_10 near the origin."""
    near = bank.neighborhoods(LEVEL1_NEIGHBORHOOD)
    for k in sorted(range(-bank.level, bank.level), key=abs):
        if near.in_h(k):
            break
    else:
        return []
    report = check_step_kernel(bank, k)
    ramp = FittedConstant(
        name="c8",
        inequality="|(x - x_j)_+ - tau_tilde_j| <= c8 h Gamma_j^(2b-2s-2)",
        kind=BoundKind.UPPER,
        value=ramp_constant(bank, k),
        gamma_power=2 * (bank.b - bank.s - 1),
        sample_grid=f"4096 uniform points on [x_{k}-pi, x_{k}+pi], n={bank.level}",
        samples=4096,
    )
    return [*report.constants, ramp]


# =============================================================================
# Shape checks
# =============================================================================


def excluded_mask(inflections: InflectionSet, x: np.ndarray, radius: float) -> np.ndarray:
    """Points within `radius` of some y_i (periodically)."""
    mask = np.zeros(x.shape, dtype=bool)
    for y in inflections.points:
        gap = np.abs(np.mod(x - y + PI, TWO_PI) - PI)
        mask |= gap < radius
    return mask


def verify_poly_shape(model: PolyModel, tolerance: float = 1e-9) -> list[SignReport]:
    """
    First entry asserts P''(x) Pi(x) >= 0 outside the union of (y_i - pi/n, y_i + pi/n);
    samples inside are counted separately. Also asserts A >= 0 everywhere and B >= 0
    outside the union of (x_{j_i+5}, y_i) for the decomposition P'' Pi = A + B + S'' Pi,
    and the shape of the periodic continuation across +-pi.
    """
    if model.fallback:
        return [
            SignReport(
                check="poly-sign",
                inequality="P''(x) Pi(x) >= 0 (P constant)",
                tolerance=tolerance,
            )
        ]
    spline = model.spline
    working = spline.working_inflections
    x = model.nodes
    pi = working.pi(x)
    product = model.second * pi
    scale = max(float(np.max(np.abs(model.second))), 1e-300)
    margins = product / scale
    excluded = excluded_mask(working, x, PI / model.n)
    outside = ~excluded
    worst_index = int(np.argmin(np.where(outside, margins, np.inf)))
    main = SignReport(
        check="poly-sign",
        inequality="P_n''(x) Pi(x) >= 0 outside (y_i - pi/n, y_i + pi/n)",
        tolerance=tolerance,
        samples=int(np.count_nonzero(outside)),
        violations=int(np.count_nonzero(outside & (margins < -tolerance))),
        excluded_samples=int(np.count_nonzero(excluded)),
        excluded_violations=int(np.count_nonzero(excluded & (margins < -tolerance))),
        worst_location=float(model.from_working(x[worst_index])),
        worst_margin=float(margins[worst_index]),
    )

    a_margins = model.a_term / scale
    a_worst = int(np.argmin(a_margins))
    a_report = SignReport(
        check="poly-a-term",
        inequality="A(x) >= 0",
        tolerance=tolerance,
        samples=int(x.size),
        violations=int(np.count_nonzero(a_margins < -tolerance)),
        worst_location=float(model.from_working(x[a_worst])),
        worst_margin=float(a_margins[a_worst]),
    )

    near = build_neighborhoods(working, spline.grid, 2)
    skip = np.zeros(x.shape, dtype=bool)
    for i, y in enumerate(working.points, start=1):
        left = spline.grid.knot(near.anchors[i - 1] + 5)
        offset = np.mod(x - left, TWO_PI)
        skip |= (offset > 0) & (offset < y - left)
    b_margins = np.where(skip, np.inf, model.b_term / scale)
    b_worst = int(np.argmin(b_margins))
    b_report = SignReport(
        check="poly-b-term",
        inequality="B(x) >= 0 outside (x_{j_i+5}, y_i)",
        tolerance=tolerance,
        samples=int(np.count_nonzero(~skip)),
        violations=int(np.count_nonzero(b_margins < -tolerance)),
        excluded_samples=int(np.count_nonzero(skip)),
        worst_location=float(model.from_working(x[b_worst])),
        worst_margin=float(b_margins[b_worst]) if np.isfinite(b_margins[b_worst]) else 0.0,
    )
    seam = seam_report(
        "poly-seam",
        float(model.second[-1]),
        float(model.second[0]),
        float(model.first[0] - model.first[-1]),
        float(pi[-1]),
        scale,
        PI / model.n,
        float(model.from_working(x[-1])),
        max(tolerance, SEAM_TOLERANCE),
    )
    return [main, a_report, b_report, seam]


def decomposition_residual(model: PolyModel) -> float:
    """max |P''Pi - (A + B + S''Pi)| relative to max |P''|."""
    spline = model.spline
    pi = spline.working_inflections.pi(model.nodes)
    c_term = spline.working(model.nodes, 2) * pi
    total = model.a_term + model.b_term + c_term
    scale = max(float(np.max(np.abs(model.second))), 1e-300)
    return float(np.max(np.abs(model.second * pi - total))) / scale


# =============================================================================
# Fallback and calibration
# =============================================================================


def fallback_whitney(
    f: PeriodicFunction,
    inflections: InflectionSet,
    n: int,
    *,
    grid_points: int = 1 << 12,
) -> PolyModel:
    """Constant approximant f(0) with certificate 3 omega_4(f, 4pi)."""
    certificate = 3 * modulus(f, 4, 4 * PI, grid_points=grid_points)
    constant = float(f(0.0))
    log.info("whitney_fallback", function=f.name, n=n, certificate=certificate)
    return PolyModel(
        function=f,
        inflections=inflections,
        n=n,
        rotation=None,
        fallback=True,
        constant=constant,
        certificate=certificate,
        diagnostics=[f"constant approximant f(0) = {constant:.6g}"],
    )


def calibrate_poly(
    f: PeriodicFunction,
    inflections: InflectionSet,
    n: int,
    *,
    m1: int = 2,
    m2: int = 4,
    max_m1: int = 8,
    max_m2: int = 16,
    b1: int | None = None,
    b2: int | None = None,
    settings: ShapelineSettings | None = None,
    tolerance: float | None = None,
) -> tuple[PolyModel, list[SignReport]]:
    """
    Search the multipliers until every asserted check passes and no weight was clamped.

    m1 doubles first, up to max_m1; then m2 doubles and m1 starts over. Raises
    CalibrationExhausted once both budgets are spent.
    """
    settings = settings or get_settings()
    tolerance = tolerance if tolerance is not None else settings.sign_tolerance
    steps: list[str] = []
    start_m1 = m1
    while True:
        levels = LevelConfig.create(n, inflections.s, m1, m2, b1, b2)
        try:
            model = build_poly(f, inflections, n, levels, settings=settings, tolerance=tolerance)
            reports = verify_poly_shape(model, tolerance)
            outcome = calibration_outcome(model, reports)
        except ShapelineError as e:
            if e.exit_code == 1:
                raise
            outcome = type(e).__name__
        steps.append(f"m1={m1} m2={m2}: {outcome}")
        log.info("calibration_step", m1=m1, m2=m2, outcome=outcome)
        if outcome == "pass":
            model.calibration_steps = steps
            return model, reports
        if 2 * m1 <= max_m1:
            m1 *= 2
        elif 2 * m2 <= max_m2:
            m1, m2 = start_m1, 2 * m2
        else:
            raise CalibrationExhausted(m1=m1, m2=m2, max_m2=max_m2, max_m1=max_m1)


def calibration_outcome(model: PolyModel, reports: list[SignReport]) -> str:
    """'pass', or the first reason the model cannot be accepted."""
    if model.clamp_events:
        return f"{len(model.clamp_events)} clamped weights"
    for report in [*model.piece_reports, *reports]:
        if not report.passed:
            return f"{report.check}: {report.violations} violations"
    return "pass"