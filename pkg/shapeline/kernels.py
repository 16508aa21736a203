"""
Jackson-type kernels and the smoothed steps and ramps built from them.

Every function lives as node values (and node slopes) on one fine grid over
[-3pi, 3pi] whose nodes include all knots of all levels in use. Prefix integrals use
the cumulative Simpson rule, so a normalization evaluated at two knots is exact for
the stored table; values between nodes add a Gauss-Legendre integral of the exact
derivative from the left node.
"""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import structlog
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_simpson

from shapeline.bounds import fit_constant, fitted
from shapeline.config import ShapelineSettings
from shapeline.errors import (
    AlphaOutOfRange,
    DegenerateDenominator,
    DivisorTooSmall,
    ParameterOutOfRange,
    ShapelineInputError,
    SignViolation,
)
from shapeline.models import BoundKind, BoundReport, ClampEvent, SignReport
from shapeline.periodic_core import (
    PI,
    DyadicGrid,
    InflectionSet,
    NeighborhoodIndex,
    build_neighborhoods,
    chi,
    gamma,
    representative,
    truncated_power,
    require_disjoint,
)

log = structlog.get_logger()

POINTS_PER_EXPONENT = 16  # nodes per knot step for each unit of b
RAMP_OFFSET = 10  # tau_k mixes t_{k+10} and t_{k-10}
HAT_OFFSET = 10  # t_hat_{j_i} uses t_bar_{j_i+10} and t_breve_{j_i-10}
HAT_NEIGHBORHOOD = 30
MODIFIED_NEIGHBORHOOD = 20  # y_i* is an endpoint of O_{i,20}
EXPONENT_BOOST = 3  # t_bar uses b + 3

EMPTY_SET = InflectionSet(points=())

DerivativeFn = Callable[[np.ndarray], np.ndarray]


# =============================================================================
# Kernels
# =============================================================================


def jackson_term(u: np.ndarray | float, n: int, b: int) -> np.ndarray:
    """(sin(n u/2) / (n sin(u/2)))^(2b), equal to 1 where u is a multiple of 2pi."""
    half = 0.5 * np.asarray(u, dtype=float)
    sine = np.sin(half)
    small = np.abs(sine) < 1e-12
    ratio = np.divide(np.sin(n * half), n * sine, out=np.ones_like(half), where=~small)
    return (ratio * ratio) ** b


def scaled_kernel(j: int, n: int, b: int, x: np.ndarray | float) -> np.ndarray:
    """J_j(x) / n^(2b)."""
    h = PI / n
    return jackson_term(np.asarray(x) + j * h, n, b) + jackson_term(
        np.asarray(x) + (j - 1) * h, n, b
    )


def jackson_kernel(j: int, n: int, b: int, x: np.ndarray | float) -> np.ndarray:
    """J_j(x): sum of the Jackson kernels centred at x_j and x_{j-1}."""
    return float(n) ** (2 * b) * scaled_kernel(j, n, b, x)


# =============================================================================
# Fine Grid and Tables
# =============================================================================


@dataclass(frozen=True)
class FineGrid:
    """Uniform nodes on [-3pi, 3pi] with spacing pi / (top_level * points_per_step)."""

    top_level: int
    points_per_step: int
    gauss_nodes: int = 8

    @classmethod
    def for_level(
        cls,
        top_level: int,
        quadrature_points: int = 1 << 16,
        min_points_per_step: int = 16,
        gauss_nodes: int = 8,
        exponent: int = 1,
    ) -> "FineGrid":
        """
        Grid for kernels up to `top_level` with exponent b: Q per period, but never fewer
        than 16 b nodes per knot step (32 n b per period).
        """
        r = max(
            math.ceil(quadrature_points / (2 * top_level)),
            min_points_per_step,
            POINTS_PER_EXPONENT * exponent,
        )
        return cls(top_level=top_level, points_per_step=r, gauss_nodes=gauss_nodes)

    def refined(self) -> "FineGrid":
        """The same grid with twice as many nodes per knot step."""
        return FineGrid(self.top_level, 2 * self.points_per_step, self.gauss_nodes)

    @property
    def steps_per_half_period(self) -> int:
        return self.top_level * self.points_per_step

    @property
    def spacing(self) -> float:
        return PI / self.steps_per_half_period

    @property
    def size(self) -> int:
        return 6 * self.steps_per_half_period + 1

    @property
    def start(self) -> float:
        return -3 * PI

    @cached_property
    def nodes(self) -> np.ndarray:
        half = self.steps_per_half_period
        return PI * ((np.arange(self.size) - 3 * half) / half)

    @cached_property
    def gauss(self) -> tuple[np.ndarray, np.ndarray]:
        return leggauss(self.gauss_nodes)

    def node_of_knot(self, level: int, j: int) -> int:
        """Node index of the knot x_j of the given level."""
        if self.top_level % level:
            raise ShapelineInputError(f"level {level} does not divide level {self.top_level}")
        node = 3 * self.steps_per_half_period - j * (self.top_level // level) * self.points_per_step
        if not 0 <= node < self.size:
            raise ShapelineInputError(f"knot {j} of level {level} lies outside [-3pi, 3pi]")
        return node

    def node_of(self, x: float) -> int:
        """Node index of a point that must be a node."""
        node = int(round((x - self.start) / self.spacing))
        if abs(self.nodes[node] - x) > 1e-9 * self.spacing + 1e-12:
            raise ShapelineInputError(f"{x} is not a node of the fine grid")
        return node

    def window(self, level: int, j: int) -> tuple[int, int]:
        """Node indices of x_j - pi and x_j + pi."""
        center = self.node_of_knot(level, j)
        return center - self.steps_per_half_period, center + self.steps_per_half_period

    def locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Left node index and offset from it."""
        k0 = np.floor((x - self.start) / self.spacing).astype(int)
        k0 = np.clip(k0, 0, self.size - 2)
        return k0, x - self.nodes[k0]

    def prefix(self, values: np.ndarray, lower: int) -> np.ndarray:
        """Cumulative integral of node values, zero at node `lower`."""
        running = cumulative_simpson(values, dx=self.spacing, initial=0)
        return running - running[lower]


@dataclass(frozen=True, eq=False)
class CumulativeTable:
    """
    A function sampled on the fine grid: node values, node slopes and an exact
    derivative for off-grid evaluation.
    """

    grid: FineGrid
    values: np.ndarray
    slopes: np.ndarray
    derivative: DerivativeFn
    label: str
    normalization: float = 1.0
    evaluator: DerivativeFn | None = None

    def at(self, x: np.ndarray | float) -> np.ndarray:
        """Value anywhere on the grid."""
        x = np.asarray(x, dtype=float)
        if self.evaluator is not None:
            return self.evaluator(x)
        k0, offset = self.grid.locate(x)
        xi, weights = self.grid.gauss
        base = self.grid.nodes[k0]
        u = base[..., None] + 0.5 * offset[..., None] * (xi + 1.0)
        integral = 0.5 * offset * np.sum(weights * self.derivative(u), axis=-1)
        return self.values[k0] + integral

    def value_at_knot(self, level: int, j: int) -> float:
        return float(self.values[self.grid.node_of_knot(level, j)])


def combine(terms: Sequence[tuple[float, CumulativeTable]], label: str) -> CumulativeTable:
    """Linear combination of tables sharing one grid."""
    grid = terms[0][1].grid
    values = sum(c * t.values for c, t in terms)
    slopes = sum(c * t.slopes for c, t in terms)
    frozen = tuple(terms)

    def derivative(u: np.ndarray) -> np.ndarray:
        return sum(c * t.derivative(u) for c, t in frozen)

    def evaluator(x: np.ndarray) -> np.ndarray:
        return sum(c * t.at(x) for c, t in frozen)

    return CumulativeTable(
        grid=grid,
        values=np.asarray(values),
        slopes=np.asarray(slopes),
        derivative=derivative,
        label=label,
        evaluator=evaluator,
    )


def integrate_from(table: CumulativeTable, lower: int, label: str) -> CumulativeTable:
    """Antiderivative of a table vanishing at node `lower`."""
    return CumulativeTable(
        grid=table.grid,
        values=table.grid.prefix(table.values, lower),
        slopes=table.values,
        derivative=table.at,
        label=label,
    )


def solve_weight(
    at_one: float,
    at_zero: float,
    target: float,
    *,
    epsilon: float,
    error: type[ParameterOutOfRange] = AlphaOutOfRange,
    strict: bool = True,
    context: str = "",
    events: list[ClampEvent] | None = None,
    j: int | None = None,
    nu: int | None = None,
) -> float:
    """
    Weight w with w*at_one + (1-w)*at_zero = target, kept in [0, 1].

    Excursions up to epsilon are clamped silently. Larger ones raise in strict mode and
    are clamped, logged and recorded otherwise.
    """
    span = at_one - at_zero
    if span == 0 or not math.isfinite(span):
        raise error(float("nan"), context)
    raw = (target - at_zero) / span
    if 0.0 <= raw <= 1.0:
        return raw
    clamped = min(max(raw, 0.0), 1.0)
    if -epsilon <= raw <= 1.0 + epsilon:
        return clamped
    if strict:
        raise error(raw, context)
    log.warning("weight_clamped", symbol=error.symbol, raw=raw, context=context)
    if events is not None:
        events.append(
            ClampEvent(symbol=error.symbol, raw=raw, clamped=clamped, j=j, nu=nu, context=context)
        )
    return clamped


# =============================================================================
# Kernel Bank
# =============================================================================


class KernelBank:
    """
    Step and ramp tables of one level for one inflection set.

    Responsibilities:
    - t_k shaped by Pi(., Y) with exponent b, t_bar_k (Pi = 1) and t_breve_k (Y_breve_i)
      with exponent b + 3
    - tau_k mixing the integrals of t_{k+10} and t_{k-10}
    - correcting polynomials t_hat_{j_i} and the corrected t_tilde_k, tau_tilde_k
    """

    def __init__(
        self,
        grid: FineGrid,
        level: int,
        inflections: InflectionSet,
        b: int,
        *,
        clamp_epsilon: float = 1e-6,
        divisor_floor: float = 1e-12,
        cache_size: int = 24,
    ):
        if b < 1:
            raise ShapelineInputError(f"kernel exponent must be positive, got {b}")
        grid.node_of_knot(level, 0)
        self.grid = grid
        self.level = level
        self.lattice = DyadicGrid(level)
        self.inflections = inflections
        self.b = b
        self.b_bar = b + EXPONENT_BOOST
        self.clamp_epsilon = clamp_epsilon
        self.divisor_floor = divisor_floor
        self._step = lru_cache(maxsize=cache_size)(self._build_step)
        self._tau = lru_cache(maxsize=max(cache_size // 3, 4))(self._build_tau)
        self._hat = lru_cache(maxsize=None)(self._build_hat)
        self._tilde = lru_cache(maxsize=max(cache_size // 3, 4))(self._build_t_tilde)
        self._tau_tilde = lru_cache(maxsize=max(cache_size // 3, 4))(self._build_tau_tilde)

    def clear(self) -> None:
        """Drop every cached table."""
        for cache in (self._step, self._tau, self._hat, self._tilde, self._tau_tilde):
            cache.cache_clear()

    # =========================================================================
    # Sets and neighborhoods
    # =========================================================================

    @property
    def s(self) -> int:
        return self.inflections.s

    def knot(self, k: int) -> float:
        return self.lattice.knot(k)

    def neighborhoods(self, m: int) -> NeighborhoodIndex:
        return build_neighborhoods(self.inflections, self.lattice, m)

    def anchor(self, i: int) -> int:
        """j_i at this level."""
        return self.lattice.index_of(self.inflections.point(i))

    def breve_set(self, i: int) -> InflectionSet:
        """Y_breve_i = {y_i + pi*nu}: two points per period."""
        y = self.inflections.point(i)
        return InflectionSet.from_values([y, y - PI])

    def modified_set(self, i: int) -> InflectionSet:
        """Y_i: y_i moved to an endpoint of O_{i,20}."""
        require_disjoint(self.inflections, self.level, MODIFIED_NEIGHBORHOOD)
        j_i = self.anchor(i)
        orientation = self.inflections.sign * (-1) ** (i + 1)
        if orientation > 0:
            moved = self.knot(j_i + MODIFIED_NEIGHBORHOOD + 1)
        else:
            moved = self.knot(j_i - MODIFIED_NEIGHBORHOOD)
        return self.inflections.replaced(i, moved)

    # =========================================================================
    # Steps
    # =========================================================================

    def step(self, k: int) -> CumulativeTable:
        """t_k with Pi(., Y) and exponent b."""
        return self._step(k, self.b, self.inflections)

    def plain(self, k: int) -> CumulativeTable:
        """t_bar_k: Pi = 1, exponent b + 3."""
        return self._step(k, self.b_bar, EMPTY_SET)

    def breve(self, k: int, i: int) -> CumulativeTable:
        """t_breve_k: Pi(., Y_breve_i), exponent b + 3."""
        return self._step(k, self.b_bar, self.breve_set(i))

    def _build_step(self, k: int, b: int, shape: InflectionSet) -> CumulativeTable:
        grid, level = self.grid, self.level
        x = grid.nodes
        integrand = scaled_kernel(k, level, b, x) * shape.pi(x)
        lo, hi = grid.window(level, k)
        running = cumulative_simpson(integrand, dx=grid.spacing, initial=0)
        norm = float(running[hi] - running[lo])
        mass = float(np.sum(np.abs(integrand[lo : hi + 1]))) * grid.spacing
        if not abs(norm) > 1e-12 * mass:
            raise DegenerateDenominator(index=k, level=level, value=norm)

        def derivative(u: np.ndarray) -> np.ndarray:
            return scaled_kernel(k, level, b, u) * shape.pi(u) / norm

        return CumulativeTable(
            grid=grid,
            values=(running - running[lo]) / norm,
            slopes=integrand / norm,
            derivative=derivative,
            label=f"t[n={level},k={k},b={b},|Y|={len(shape)}]",
            normalization=norm,
        )

    # =========================================================================
    # Ramps
    # =========================================================================

    def tau(self, k: int, shaped: bool = False) -> CumulativeTable:
        """tau_k from t_{k+-10}: plain t_bar by default, shaped t_k when asked."""
        return self._tau(k, shaped)

    def _build_tau(self, k: int, shaped: bool) -> CumulativeTable:
        provider = self.step if shaped else self.plain
        lo, hi = self.grid.window(self.level, k)
        left = integrate_from(provider(k + RAMP_OFFSET), lo, f"int t_{k + RAMP_OFFSET}")
        right = integrate_from(provider(k - RAMP_OFFSET), lo, f"int t_{k - RAMP_OFFSET}")
        alpha = solve_weight(
            float(left.values[hi]),
            float(right.values[hi]),
            PI,
            epsilon=self.clamp_epsilon,
            error=AlphaOutOfRange,
            strict=True,
            context=f"tau_{k} at level {self.level}",
        )
        return combine([(alpha, left), (1.0 - alpha, right)], f"tau[n={self.level},k={k}]")

    # =========================================================================
    # Corrections
    # =========================================================================

    def hat(self, i: int) -> CumulativeTable:
        """t_hat_{j_i} = (t_bar_{j_i+10} - t_breve_{j_i-10}) Pi(x, Y_i) / Pi(x_{j_i}, Y_i)."""
        return self._hat(i)

    def _build_hat(self, i: int) -> CumulativeTable:
        require_disjoint(self.inflections, self.level, HAT_NEIGHBORHOOD)
        j_i = self.anchor(i)
        upper = self.plain(j_i + HAT_OFFSET)
        lower = self.breve(j_i - HAT_OFFSET, i)
        modified = self.modified_set(i)
        scale = float(modified.pi(self.knot(j_i)))

        def ratio(u: np.ndarray) -> np.ndarray:
            return modified.pi(u) / scale

        def ratio_slope(u: np.ndarray) -> np.ndarray:
            return modified.pi_derivative(u) / scale

        def evaluator(x: np.ndarray) -> np.ndarray:
            return (upper.at(x) - lower.at(x)) * ratio(x)

        def derivative(u: np.ndarray) -> np.ndarray:
            return (upper.derivative(u) - lower.derivative(u)) * ratio(u) + (
                upper.at(u) - lower.at(u)
            ) * ratio_slope(u)

        x = self.grid.nodes
        gap = upper.values - lower.values
        table = CumulativeTable(
            grid=self.grid,
            values=gap * ratio(x),
            slopes=(upper.slopes - lower.slopes) * ratio(x) + gap * ratio_slope(x),
            derivative=derivative,
            label=f"t_hat[n={self.level},i={i}]",
            evaluator=evaluator,
        )
        at_point = float(table.at(self.inflections.point(i)))
        if abs(at_point) < self.divisor_floor:
            raise DivisorTooSmall(i=i, value=at_point)
        return table

    def _corrected(
        self, k: int, base: CumulativeTable, target: Callable[[float], float], label: str
    ) -> CumulativeTable:
        terms: list[tuple[float, CumulativeTable]] = [(1.0, base)]
        center = self.knot(k)
        for i in range(1, len(self.inflections) + 1):
            y = representative(self.inflections.point(i), center)
            hat = self.hat(i)
            weight = (target(y) - float(base.at(y))) / float(hat.at(y))
            terms.append((weight, hat))
        if len(terms) == 1:
            return base
        return combine(terms, label)

    def t_tilde(self, k: int) -> CumulativeTable:
        """t_bar_k corrected so that it equals chi(., x_k) at every y_i."""
        return self._tilde(k)

    def _build_t_tilde(self, k: int) -> CumulativeTable:
        center = self.knot(k)
        return self._corrected(
            k,
            self.plain(k),
            lambda y: float(chi(y, center)),
            f"t_tilde[n={self.level},k={k}]",
        )

    def tau_tilde(self, k: int) -> CumulativeTable:
        """tau_k (from t_bar) corrected so that it equals (y_i - x_k)_+ at every y_i."""
        return self._tau_tilde(k)

    def _build_tau_tilde(self, k: int) -> CumulativeTable:
        center = self.knot(k)
        return self._corrected(
            k,
            self.tau(k),
            lambda y: float(truncated_power(y, center, 1)),
            f"tau_tilde[n={self.level},k={k}]",
        )

    def interpolation_residuals(self, k: int) -> tuple[float, float]:
        """max |chi - t_tilde| and max |(y - x_k)_+ - tau_tilde| over the inflection points."""
        center = self.knot(k)
        step_residual, ramp_residual = 0.0, 0.0
        for i in range(1, len(self.inflections) + 1):
            y = representative(self.inflections.point(i), center)
            exact = float(chi(y, center))
            step_residual = max(step_residual, abs(exact - float(self.t_tilde(k).at(y))))
            ramp_residual = max(
                ramp_residual,
                abs(float(truncated_power(y, center, 1)) - float(self.tau_tilde(k).at(y))),
            )
        return step_residual, ramp_residual

    def extension_residuals(self, k: int) -> tuple[float, float, float]:
        """
        Node-level residuals of the structure that continues the corrected tables past
        one period: t_tilde_k(x + 2pi) - t_tilde_k(x) = 1,
        tau_tilde_k(x + 2pi) - tau_tilde_k(x) = x + 2pi - x_k, and t_hat_{j_i}(y_l) = 0
        for l != i.
        """
        period = 2 * self.grid.steps_per_half_period
        x = self.grid.nodes[: self.grid.size - period]
        step = self.t_tilde(k).values
        ramp = self.tau_tilde(k).values
        step_rise = np.max(np.abs(step[period:] - step[:-period] - 1.0))
        ramp_rise = np.max(np.abs(ramp[period:] - ramp[:-period] - (x + 2 * PI - self.knot(k))))
        vanishing = 0.0
        count = len(self.inflections)
        for i in range(1, count + 1):
            hat = self.hat(i)
            for other in range(1, count + 1):
                if other != i:
                    y = self.inflections.point(other)
                    vanishing = max(vanishing, abs(float(hat.at(y))))
        return float(step_rise), float(ramp_rise), vanishing


# =============================================================================
# Step kernel checks
# =============================================================================


def check_step_kernel(
    bank: KernelBank, k: int, samples: int = 4096, tolerance: float = 1e-9
) -> BoundReport:
    """
    Sign property t_k'(x) Pi(x) Pi(x_k) >= 0 (asserted) and fitted constants of the
    step estimates (reported) on a uniform sample of [x_k - pi, x_k + pi].
    """
    table = bank.step(k)
    center = bank.knot(k)
    h = bank.lattice.h
    x = np.linspace(center - PI, center + PI, samples)
    slope = table.derivative(x)
    pi_x = bank.inflections.pi(x)
    product = slope * pi_x * float(bank.inflections.pi(center))
    scale = max(float(np.max(np.abs(product))), 1e-300)
    margins = product / scale
    bad = margins < -tolerance
    worst = int(np.argmin(margins))
    sign = SignReport(
        check="step-sign",
        inequality="t_j'(x) Pi(x) Pi(x_j) >= 0",
        tolerance=tolerance,
        samples=samples,
        violations=int(np.count_nonzero(bad)),
        worst_location=float(x[worst]),
        worst_margin=float(margins[worst]),
    )
    if sign.violations:
        raise SignViolation("step-sign", float(x[worst]), float(margins[worst]))

    b, s = bank.b, bank.s
    gam = gamma(k, bank.level, x)
    grid_label = f"{samples} uniform points on [x_{k}-pi, x_{k}+pi], n={bank.level}"
    values = table.at(x)
    outside = ~bank.neighborhoods(10).contains(x) if s else np.ones(x.shape, dtype=bool)
    constants = [
        fitted(
            "c1",
            "|chi_j - t_j| <= c1 Gamma_j^(2b-2s-1)",
            BoundKind.UPPER,
            chi(x, center) - values,
            gam ** (2 * b - 2 * s - 1),
            gamma_power=2 * b - 2 * s - 1,
            sample_grid=grid_label,
        ),
        fitted(
            "c2",
            "|t_j'| <= c2 Gamma_j^(2b-2s) / h",
            BoundKind.UPPER,
            slope,
            gam ** (2 * b - 2 * s) / h,
            gamma_power=2 * b - 2 * s,
            sample_grid=grid_label,
        ),
        fitted(
            "c3",
            "|t_j'| >= c3 Gamma_j^(2b+2s) / h outside O_10",
            BoundKind.LOWER,
            slope[outside],
            gam[outside] ** (2 * b + 2 * s) / h,
            gamma_power=2 * b + 2 * s,
            sample_grid=grid_label,
        ),
    ]
    if s:
        inside = ~outside
        nearest = np.zeros(x.shape)
        for i in range(1, len(bank.inflections) + 1):
            lo, hi = bank.neighborhoods(10).interval(i)
            y = bank.inflections.point(i)
            offset = np.mod(x - lo, 2 * PI)
            here = (offset > 0) & (offset < hi - lo)
            y_here = lo + (y - lo) % (2 * PI)
            x_here = lo + offset
            nearest = np.where(
                here, np.abs(x_here - y_here) / abs(representative(center, y) - y), nearest
            )
        constants.append(
            fitted(
                "c3o",
                "|t_j'| >= c3 Gamma_j^(2b+2s) |x - y_i| / (h |x_j - y_i|) on O_i,10",
                BoundKind.LOWER,
                slope[inside],
                (gam ** (2 * b + 2 * s) * nearest / h)[inside],
                gamma_power=2 * b + 2 * s,
                sample_grid=grid_label,
            )
        )
    return BoundReport(index=k, level=bank.level, b=b, sign=sign, constants=constants)


def ramp_constant(bank: KernelBank, k: int, samples: int = 4096) -> float:
    """Fitted c8 of |(x - x_k)_+ - tau_tilde_k| <= c8 h Gamma_k^(2(b-s-1))."""
    center = bank.knot(k)
    x = np.linspace(center - PI, center + PI, samples)
    error = truncated_power(x, center, 1) - bank.tau_tilde(k).at(x)
    shape = bank.lattice.h * gamma(k, bank.level, x) ** (2 * (bank.b - bank.s - 1))
    return fit_constant(BoundKind.UPPER, error, shape)


# =============================================================================
# Quadrature
# =============================================================================


def quadrature_drift(
    coarse: FineGrid,
    fine: FineGrid,
    level: int,
    inflections: InflectionSet,
    b: int,
    indices: Sequence[int] | None = None,
) -> float:
    """
    Largest change of step normalizations (relative) and of step values at their own knot
    when the same kernels are integrated on `fine` instead of `coarse`.

    Plain steps are compared at every index; shaped steps only at indices of H_10.
    """
    indices = indices if indices is not None else (0, level // 2)
    near = build_neighborhoods(inflections, DyadicGrid(level), 10)
    banks = [KernelBank(grid, level, inflections, b, cache_size=4) for grid in (coarse, fine)]
    drift = 0.0
    for k in indices:
        kinds = ["plain", "step"] if len(inflections) == 0 or near.in_h(k) else ["plain"]
        for kind in kinds:
            low, high = (getattr(bank, kind)(k) for bank in banks)
            drift = max(
                drift,
                abs(high.normalization / low.normalization - 1.0),
                abs(high.value_at_knot(level, k) - low.value_at_knot(level, k)),
            )
    return drift


def resolve_fine_grid(
    level: int,
    inflections: InflectionSet,
    b: int,
    settings: ShapelineSettings,
    indices: Sequence[int] | None = None,
) -> tuple[FineGrid, float]:
    """
    Smallest fine grid, doubling from the configured density, whose kernel values move by
    less than the quadrature tolerance when it is doubled once more.

    Returns the grid and its drift; a drift at or above the tolerance means the doubling
    budget ran out.
    """
    grid = FineGrid.for_level(
        level,
        settings.quadrature_points,
        settings.min_points_per_step,
        settings.gauss_nodes,
        exponent=b,
    )
    for doubling in range(settings.max_quadrature_doublings + 1):
        finer = grid.refined()
        drift = quadrature_drift(grid, finer, level, inflections, b, indices)
        if drift < settings.quadrature_tolerance or doubling == settings.max_quadrature_doublings:
            break
        log.info(
            "quadrature_refined",
            level=level,
            points_per_step=finer.points_per_step,
            drift=drift,
        )
        grid = finer
    return grid, drift
