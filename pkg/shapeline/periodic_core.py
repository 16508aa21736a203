"""
Grids, inflection sets, exclusion neighborhoods and numeric primitives on the circle.

Conventions:
- knots run right to left: x_j = -j*h with h = pi/n, so x_n = -pi and x_{-n} = pi
- I_j = [x_j, x_{j-1}] and j_i is the index with y_i in [x_{j_i}, x_{j_i-1})
- O_{i,m} = (x_{j_i+m+1}, x_{j_i-m}); j belongs to H_m when x_j lies in no O_{i,m}
"""

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import structlog
from scipy.interpolate import KroghInterpolator
from scipy.special import comb

from shapeline.errors import NeighborhoodOverlap, ShapelineInputError

log = structlog.get_logger()

PI = math.pi
TWO_PI = 2.0 * math.pi
NEIGHBORHOOD_SIZES = (1, 2, 3, 10, 20, 30)
INDEX_SLACK = 1e-9

RealFunction = Callable[[np.ndarray], np.ndarray]


# =============================================================================
# Angles
# =============================================================================


def reduce_angle(x: np.ndarray | float) -> np.ndarray:
    """Map x into [-pi, pi] by whole periods; points already inside are left alone."""
    x = np.asarray(x, dtype=float)
    outside = np.abs(x) > PI
    if not np.any(outside):
        return x
    return np.where(outside, np.mod(x + PI, TWO_PI) - PI, x)


def wrap_point(y: float) -> tuple[float, int]:
    """Return (y - 2*pi*k, k) with the first component in [-pi, pi)."""
    k = math.floor((y + PI) / TWO_PI)
    wrapped = y - k * TWO_PI
    if wrapped >= PI:
        wrapped -= TWO_PI
        k += 1
    return wrapped, k


def representative(y: float, center: float) -> float:
    """The copy of y (mod 2*pi) lying in [center - pi, center + pi)."""
    return center - PI + float(np.mod(y - (center - PI), TWO_PI))


# =============================================================================
# Grid
# =============================================================================


@dataclass(frozen=True)
class DyadicGrid:
    """Uniform knots x_j = -j*pi/n."""

    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ShapelineInputError(f"grid level must be positive, got {self.n}")

    @property
    def h(self) -> float:
        return PI / self.n

    def knot(self, j: int | np.ndarray) -> np.ndarray | float:
        """x_j; exact at j = +-n."""
        if isinstance(j, int | np.integer):
            return PI * (-int(j) / self.n)
        return PI * (-np.asarray(j, dtype=float) / self.n)

    def interval(self, j: int) -> tuple[float, float]:
        """I_j = [x_j, x_{j-1}]."""
        return self.knot(j), self.knot(j - 1)

    def index_of(self, x: float) -> int:
        """Index j with x in [x_j, x_{j-1})."""
        return int(math.ceil(-x / self.h - INDEX_SLACK))

    def knots(self) -> np.ndarray:
        """x_n, ..., x_{-n} in increasing order."""
        return PI * (np.arange(-self.n, self.n + 1) / self.n)


# =============================================================================
# Inflection Sets
# =============================================================================


@dataclass(frozen=True)
class InflectionSet:
    """
    Points y_1 > ... > y_2s in [-pi, pi) and an orientation sign.

    Pi(x) = sign * prod sin((x - y_i)/2). The orientation absorbs the sign flips
    caused by wrapping points into [-pi, pi) after a shift; an empty set gives Pi = sign.
    """

    points: tuple[float, ...]
    sign: int = 1

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise ShapelineInputError(f"orientation must be +1 or -1, got {self.sign}")
        if len(self.points) % 2:
            raise ShapelineInputError(
                f"inflection points must come in an even count, got {len(self.points)}"
            )
        for y in self.points:
            if not (-PI <= y < PI):
                raise ShapelineInputError(f"inflection point {y} is outside [-pi, pi)")
        if any(a <= b for a, b in zip(self.points, self.points[1:], strict=False)):
            raise ShapelineInputError("inflection points must be strictly decreasing")

    @classmethod
    def from_values(cls, values: Iterable[float], sign: int = 1) -> "InflectionSet":
        """Wrap arbitrary reals into [-pi, pi), sort them and track the orientation."""
        wrapped = []
        for y in values:
            w, k = wrap_point(float(y))
            if k % 2:
                sign = -sign
            wrapped.append(w)
        ordered = sorted(wrapped, reverse=True)
        if len(set(ordered)) != len(ordered):
            raise ShapelineInputError("inflection points coincide after wrapping")
        return cls(points=tuple(ordered), sign=sign)

    @property
    def s(self) -> int:
        return len(self.points) // 2

    def __len__(self) -> int:
        return len(self.points)

    def point(self, i: int) -> float:
        """y_i for any integer i, using y_{i+2s} = y_i - 2*pi."""
        count = len(self.points)
        shift, base = divmod(i - 1, count)
        return self.points[base] - shift * TWO_PI

    def pi(self, x: np.ndarray | float) -> np.ndarray:
        """Evaluate Pi(x, Y)."""
        x = np.asarray(x, dtype=float)
        result = np.full(x.shape, float(self.sign))
        for y in self.points:
            result = result * np.sin(0.5 * (x - y))
        return result

    def pi_derivative(self, x: np.ndarray | float) -> np.ndarray:
        """d/dx Pi(x, Y)."""
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape)
        for i, yi in enumerate(self.points):
            term = np.full(x.shape, 0.5 * self.sign) * np.cos(0.5 * (x - yi))
            for k, yk in enumerate(self.points):
                if k != i:
                    term = term * np.sin(0.5 * (x - yk))
            total = total + term
        return total

    def replaced(self, i: int, value: float) -> "InflectionSet":
        """Copy with y_i (1-based) replaced by value."""
        values = list(self.points)
        values[i - 1] = value
        return InflectionSet.from_values(values, sign=self.sign)


# =============================================================================
# Neighborhoods
# =============================================================================


@dataclass(frozen=True)
class NeighborhoodIndex:
    """
    Exclusion neighborhoods O_{i,m} of one inflection set at one level.
    """

    grid: DyadicGrid
    inflections: InflectionSet
    m: int
    anchors: tuple[int, ...]

    def interval(self, i: int) -> tuple[float, float]:
        """O_{i,m} as an open interval (x_{j_i+m+1}, x_{j_i-m})."""
        j_i = self.anchors[i - 1]
        return self.grid.knot(j_i + self.m + 1), self.grid.knot(j_i - self.m)

    def owner(self, j: int) -> int | None:
        """1-based i with x_j in O_{i,m}, or None when j is in H_m."""
        period = 2 * self.grid.n
        for i, j_i in enumerate(self.anchors, start=1):
            if 2 * self.m >= period or (j - (j_i - self.m + 1)) % period < 2 * self.m:
                return i
        return None

    def contains_index(self, j: int) -> bool:
        return self.owner(j) is not None

    def in_h(self, j: int) -> bool:
        return self.owner(j) is None

    def survivors(self, lo: int, hi: int) -> list[int]:
        """H_m restricted to lo <= j <= hi."""
        return [j for j in range(lo, hi + 1) if self.in_h(j)]

    def contains(self, x: np.ndarray | float) -> np.ndarray:
        """Mask of points (periodically) inside some O_{i,m}."""
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape, dtype=bool)
        for i in range(1, len(self.anchors) + 1):
            lo, hi = self.interval(i)
            offset = np.mod(x - lo, TWO_PI)
            mask |= (offset > 0) & (offset < hi - lo)
        return mask

    def disjoint(self) -> bool:
        return _gaps_ok(self.anchors, self.grid.n, self.m)


def _gaps_ok(anchors: Sequence[int], n: int, m: int) -> bool:
    if len(anchors) < 2:
        return len(anchors) == 0 or 2 * m + 1 <= 2 * n
    ordered = sorted(anchors)
    gaps = [b - a for a, b in zip(ordered, ordered[1:], strict=False)]
    gaps.append(ordered[0] + 2 * n - ordered[-1])
    return min(gaps) >= 2 * m + 1


def build_neighborhoods(
    inflections: InflectionSet, grid: DyadicGrid, m: int
) -> NeighborhoodIndex:
    """Compute j_i and O_{i,m} for every inflection point."""
    if m not in NEIGHBORHOOD_SIZES:
        raise ShapelineInputError(f"neighborhood size m={m} not in {NEIGHBORHOOD_SIZES}")
    anchors = tuple(grid.index_of(y) for y in inflections.points)
    return NeighborhoodIndex(grid=grid, inflections=inflections, m=m, anchors=anchors)


def min_n_for(inflections: InflectionSet, m: int = 30, limit: int = 1 << 20) -> int:
    """Smallest n for which the O_{i,m} are pairwise disjoint over one period."""
    if len(inflections) == 0:
        return 1
    n = 1
    while n <= limit:
        grid = DyadicGrid(n)
        anchors = [grid.index_of(y) for y in inflections.points]
        if _gaps_ok(anchors, n, m):
            return n
        n += 1
    raise ShapelineInputError(f"no n <= {limit} separates the inflection points")


def require_disjoint(inflections: InflectionSet, n: int, m: int) -> None:
    """Raise NeighborhoodOverlap unless n reaches min_n_for(Y, m)."""
    required = min_n_for(inflections, m)
    if n < required:
        raise NeighborhoodOverlap(n=n, required=required, m=m)


# =============================================================================
# Rotation
# =============================================================================


@dataclass(frozen=True)
class Rotation:
    """
    Whole-knot shift moving the inflection points away from +-pi.

    Working coordinates are u = x - shift; f_w(u) = f(u + shift).
    """

    grid: DyadicGrid
    knots: int

    @property
    def shift(self) -> float:
        return self.knots * self.grid.h

    def apply(self, inflections: InflectionSet) -> InflectionSet:
        return InflectionSet.from_values(
            [y - self.shift for y in inflections.points], sign=inflections.sign
        )

    def to_working(self, x: np.ndarray | float) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.shift


def choose_rotation(inflections: InflectionSet, grid: DyadicGrid) -> Rotation:
    """Pick the knot shift that maximizes the distance of Y from +-pi."""
    if len(inflections) == 0:
        return Rotation(grid=grid, knots=0)
    best_k, best_score = 0, -1.0
    for k in sorted(range(-grid.n, grid.n), key=lambda v: (abs(v), v)):
        shift = k * grid.h
        score = min(PI - abs(wrap_point(y - shift)[0]) for y in inflections.points)
        if score > best_score + 1e-12:
            best_k, best_score = k, score
    return Rotation(grid=grid, knots=best_k)


# =============================================================================
# Primitives
# =============================================================================


def chi(x: np.ndarray | float, a: float) -> np.ndarray:
    """Step chi(x, a): 0 for x <= a, 1 for x > a."""
    return (np.asarray(x, dtype=float) > a).astype(float)


def truncated_power(x: np.ndarray | float, a: float, k: int) -> np.ndarray:
    """(x - a)_+^k."""
    x = np.asarray(x, dtype=float)
    return np.where(x > a, (x - a) ** k, 0.0)


def gamma(j: int, n: int, x: np.ndarray | float) -> np.ndarray:
    """Majorant Gamma_j(x) = min(1, 1/(n |sin((x - x_j - h/2)/2)|))."""
    h = PI / n
    center = -j * h + 0.5 * h
    denom = n * np.abs(np.sin(0.5 * (np.asarray(x, dtype=float) - center)))
    with np.errstate(divide="ignore"):
        inverse = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), np.inf)
    return np.minimum(1.0, inverse)


def gamma_square_sum(n: int, x: np.ndarray) -> np.ndarray:
    """Sum over j = 1-n..n of Gamma_j(x)^2."""
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape)
    for j in range(1 - n, n + 1):
        total += gamma(j, n, x) ** 2
    return total


# =============================================================================
# Divided Differences
# =============================================================================


@dataclass(frozen=True)
class DividedDifferenceTable:
    """
    F_j = [x_j, x_{j-1}, x_{j-2}; f] for j = 2-n..n and
    Phi_j = [x_{j+1}, ..., x_{j-3}; f] for j = 3-n..n-1.
    """

    grid: DyadicGrid
    values: np.ndarray  # f(x_j) for j = -n..n
    second: np.ndarray  # F_j, j = 2-n..n
    fourth: np.ndarray  # Phi_j, j = 3-n..n-1

    def value(self, j: int) -> float:
        return float(self.values[j + self.grid.n])

    def F(self, j: int) -> float:
        return float(self.second[j - (2 - self.grid.n)])

    def Phi(self, j: int) -> float:
        return float(self.fourth[j - (3 - self.grid.n)])

    @property
    def phi_indices(self) -> range:
        return range(3 - self.grid.n, self.grid.n)

    def identity_residual(self) -> float:
        """max |4h Phi_j - (F_{j+1} - 2F_j + F_{j-1})/(3h)| relative to max |4h Phi|."""
        h = self.grid.h
        lhs = np.array([4 * h * self.Phi(j) for j in self.phi_indices])
        rhs = np.array(
            [(self.F(j + 1) - 2 * self.F(j) + self.F(j - 1)) / (3 * h) for j in self.phi_indices]
        )
        scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), 1e-300)
        return float(np.max(np.abs(lhs - rhs)) / scale)


def _newton_differences(ascending: np.ndarray, h: float, order: int) -> np.ndarray:
    """Divided differences of consecutive uniform nodes, lowest node first."""
    return np.diff(ascending, order) / (math.factorial(order) * h**order)


def divided_differences(f: RealFunction, grid: DyadicGrid) -> DividedDifferenceTable:
    """Divided differences of f on the knots of grid."""
    n, h = grid.n, grid.h
    by_index = np.asarray(f(grid.knot(np.arange(-n, n + 1))), dtype=float)
    ascending = by_index[::-1]  # x_n, x_{n-1}, ..., x_{-n}
    second_asc = _newton_differences(ascending, h, 2)
    fourth_asc = _newton_differences(ascending, h, 4)
    # F_j starts at x_j (position n - j); Phi_j starts at x_{j+1} (position n - j - 1)
    second = np.array([second_asc[n - j] for j in range(2 - n, n + 1)])
    fourth = np.array([fourth_asc[n - j - 1] for j in range(3 - n, n)])
    return DividedDifferenceTable(grid=grid, values=by_index, second=second, fourth=fourth)


# =============================================================================
# Moduli of Smoothness
# =============================================================================


def modulus(
    f: RealFunction,
    k: int,
    t: float,
    interval: tuple[float, float] | None = None,
    *,
    grid_points: int = 1 << 14,
    delta_points: int = 64,
) -> float:
    """
    omega_k(f, t): sup over 0 < delta <= t and x of |Delta_delta^k f(x)|.

    Over a full period unless an interval [a, b] is given, in which case x + k*delta
    stays inside it. Computed on a search grid, so the value is approximate from below.
    """
    if k < 1:
        raise ShapelineInputError(f"modulus order must be positive, got {k}")
    if t < 0:
        raise ShapelineInputError(f"modulus step must be non-negative, got {t}")
    if t == 0:
        return 0.0
    weights = [(-1) ** (k - m) * comb(k, m, exact=True) for m in range(k + 1)]
    deltas = t * np.arange(1, delta_points + 1) / delta_points
    periodic_x = -PI + TWO_PI * np.arange(grid_points) / grid_points
    best = 0.0
    for delta in deltas:
        if interval is None:
            x = periodic_x
        else:
            a, b = interval
            top = b - k * delta
            if top < a:
                continue
            x = np.linspace(a, top, grid_points)
        diff = np.zeros(x.shape)
        for m, weight in enumerate(weights):
            diff += weight * np.asarray(f(x + m * delta), dtype=float)
        best = max(best, float(np.max(np.abs(diff))))
    return best


def sup_norm(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if values.size else 0.0


def search_grid(grid_points: int, n: int | None = None) -> np.ndarray:
    """Uniform points on [-pi, pi] plus the knots of level n, sorted."""
    x = np.linspace(-PI, PI, grid_points + 1)
    if n is not None:
        x = np.union1d(x, DyadicGrid(n).knots())
    return x


# =============================================================================
# Lagrange / Whitney
# =============================================================================


@dataclass(frozen=True)
class LagrangeCubic:
    """Cubic interpolating f at a, a + (b-a)/3, b - (b-a)/3, b."""

    a: float
    b: float
    values: tuple[float, float, float, float]

    @property
    def nodes(self) -> np.ndarray:
        third = (self.b - self.a) / 3.0
        return np.array([self.a, self.a + third, self.b - third, self.b])

    @cached_property
    def _interpolator(self) -> KroghInterpolator:
        return KroghInterpolator(self.nodes, np.array(self.values))

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        return np.asarray(self._interpolator(np.asarray(x, dtype=float)), dtype=float)

    def derivatives(self, x: np.ndarray | float) -> np.ndarray:
        """Rows: value, first and second derivative."""
        return np.asarray(self._interpolator.derivatives(np.asarray(x, dtype=float), der=3))


def build_lagrange_cubic(f: RealFunction, a: float, b: float) -> LagrangeCubic:
    if not a < b:
        raise ShapelineInputError(f"interpolation interval needs a < b, got [{a}, {b}]")
    blank = LagrangeCubic(a=a, b=b, values=(0.0, 0.0, 0.0, 0.0))
    values = np.asarray(f(blank.nodes), dtype=float)
    return LagrangeCubic(a=a, b=b, values=tuple(float(v) for v in values))


def lagrange_cubic(f: RealFunction, a: float, b: float, x: np.ndarray | float) -> np.ndarray:
    """L_3(x; a, b; f)."""
    return build_lagrange_cubic(f, a, b)(x)


def whitney_check(
    f: RealFunction,
    a: float,
    b: float,
    *,
    tolerance_factor: float = 1.05,
    samples: int = 4096,
    grid_points: int = 1 << 12,
) -> tuple[float, float, bool]:
    """Return (max|f - L_3|, omega_4(f, (b-a)/4, [a, b]), passed)."""
    x = np.linspace(a, b, samples)
    error = sup_norm(np.asarray(f(x)) - lagrange_cubic(f, a, b, x))
    omega = modulus(f, 4, (b - a) / 4.0, (a, b), grid_points=grid_points)
    return error, omega, error <= tolerance_factor * omega
