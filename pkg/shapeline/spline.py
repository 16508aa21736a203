"""
Nearly coconvex cubic spline.

S(x) = L_3(x; x_n; f) + 4h sum_j Phi_j Psi_j(x), where each Psi_j is one of three
truncated cubics Psi_{j,nu} chosen by the selection rules. The spline is built in
working coordinates (after the knot rotation) and evaluated periodically.
"""

from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import structlog
from scipy.integrate import quad

from shapeline.errors import IncompleteCase
from shapeline.functions import PeriodicFunction
from shapeline.models import SelectionEntry, SelectionKind, SignReport
from shapeline.periodic_core import (
    PI,
    DividedDifferenceTable,
    DyadicGrid,
    InflectionSet,
    LagrangeCubic,
    NeighborhoodIndex,
    Rotation,
    build_lagrange_cubic,
    build_neighborhoods,
    choose_rotation,
    divided_differences,
    reduce_angle,
    require_disjoint,
)

log = structlog.get_logger()

CHUNK = 4096
SPLINE_NEIGHBORHOOD = 3
MOVED_OFFSET = 5  # Y_tilde_i replaces y_i by x_{j_i+5}


# =============================================================================
# Pieces
# =============================================================================


@dataclass(frozen=True)
class PsiPiece:
    """
    Psi_{j,nu}(x) = (x-a)^3_+ + 3 h_tilde (x-a)^2_+ + h_hat (x-a)_+.

    a = x_{j-nu+1}, h_tilde = (nu-2) h, h_hat = 2h^2 for nu in {1, 3} and -h^2 for nu = 2.
    Agrees with Psi_3(x, x_j) = (x-x_j)_+ (x-x_{j-1})(x-x_{j-2}) outside [x_j, a].
    """

    grid: DyadicGrid
    j: int
    nu: int

    @property
    def anchor(self) -> float:
        return self.grid.knot(self.j - self.nu + 1)

    @property
    def h_tilde(self) -> float:
        return (self.nu - 2) * self.grid.h

    @property
    def h_hat(self) -> float:
        h = self.grid.h
        return -h * h if self.nu == 2 else 2 * h * h

    @property
    def center(self) -> float:
        """d_j = x_{j-1}."""
        return self.grid.knot(self.j - 1)

    def __call__(self, x: np.ndarray | float, order: int = 0, right: bool = False) -> np.ndarray:
        return truncated_cubic(
            np.asarray(x, dtype=float) - self.anchor, self.h_tilde, self.h_hat, order, right
        )


def truncated_cubic(
    v: np.ndarray, h_tilde: np.ndarray | float, h_hat: np.ndarray | float, order: int, right: bool
) -> np.ndarray:
    """Value or derivative of v^3_+ + 3 h_tilde v^2_+ + h_hat v_+; `right` takes v = 0 as inside."""
    active = v >= 0 if right else v > 0
    if order == 0:
        body = v * (v * (v + 3 * h_tilde) + h_hat)
    elif order == 1:
        body = 3 * v * v + 6 * h_tilde * v + h_hat
    elif order == 2:
        body = 6 * v + 6 * h_tilde
    else:
        raise ValueError(f"derivative order {order} not supported")
    return np.where(active, body, 0.0)


def psi3(x: np.ndarray | float, grid: DyadicGrid, j: int) -> np.ndarray:
    """Psi_3(x, x_j)."""
    return PsiPiece(grid, j, 1)(x)


def psi_integral_form(piece: PsiPiece, x: float) -> float:
    """Psi_{j,nu}(x) from its double-integral definition, by adaptive quadrature."""
    a, lower = piece.anchor, piece.center - PI
    if x <= a:
        return 0.0

    def inner(t: float) -> float:
        if t <= a:
            return 0.0
        return 6 * (0.5 * (t - a) ** 2 + piece.h_tilde * (t - a)) + piece.h_hat

    value, _ = quad(inner, lower, x, points=[a], epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(value)


@dataclass(frozen=True)
class TruncatedCubicSum:
    """Weighted sum of truncated cubics, evaluated in chunks."""

    anchors: np.ndarray
    weights: np.ndarray
    shifts: np.ndarray
    jumps: np.ndarray

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[float, PsiPiece]]) -> "TruncatedCubicSum":
        kept = [(w, p) for w, p in terms if w != 0]
        return cls(
            anchors=np.array([p.anchor for _, p in kept]),
            weights=np.array([w for w, _ in kept]),
            shifts=np.array([p.h_tilde for _, p in kept]),
            jumps=np.array([p.h_hat for _, p in kept]),
        )

    def evaluate(self, x: np.ndarray, order: int = 0, right: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.zeros(flat.shape)
        if self.anchors.size == 0:
            return out.reshape(x.shape)
        for start in range(0, flat.size, CHUNK):
            part = flat[start : start + CHUNK, None]
            values = truncated_cubic(part - self.anchors, self.shifts, self.jumps, order, right)
            out[start : start + CHUNK] = values @ self.weights
        return out.reshape(x.shape)


# =============================================================================
# Selection
# =============================================================================


def classify_by_f(f_next: float, f_j: float, f_prev: float) -> SelectionEntry | None:
    """
    Rules comparing |F_{j+1}|, |F_j|, |F_{j-1}|; None when no pattern matches.

    D3 mixes nu=1 (weight alpha) with nu=3.
    """
    a, b, c = abs(f_next), abs(f_j), abs(f_prev)
    if a > b >= c:
        return SelectionEntry(j=0, kind=SelectionKind.D1, nu=1)
    if a <= b < c:
        return SelectionEntry(j=0, kind=SelectionKind.D2, nu=3)
    if a > b < c:
        denominator = f_next + f_prev
        alpha = 0.5 if denominator == 0 else min(max(f_next / denominator, 0.0), 1.0)
        return SelectionEntry(j=0, kind=SelectionKind.D3, nu=1, alpha=alpha)
    return None


def moved_set(inflections: InflectionSet, near: NeighborhoodIndex, i: int) -> InflectionSet:
    """Y_tilde_i: y_i replaced by x_{j_i+5}."""
    j_i = near.anchors[i - 1]
    return inflections.replaced(i, near.grid.knot(j_i + MOVED_OFFSET))


def select_psi(
    j: int,
    differences: DividedDifferenceTable,
    inflections: InflectionSet,
    near: NeighborhoodIndex,
    *,
    allow_tie: bool = True,
) -> SelectionEntry:
    """Pick Psi_j for 3-n <= j <= n-1."""
    grid = differences.grid
    phi = differences.Phi(j)
    x_j = grid.knot(j)
    owner = near.owner(j)
    if owner is not None:
        moved = moved_set(inflections, near, owner)
        if phi * float(moved.pi(x_j)) <= 0:
            return SelectionEntry(j=j, kind=SelectionKind.D4A, nu=2)
        return SelectionEntry(j=j, kind=SelectionKind.D4B, nu=1)
    if phi * float(inflections.pi(x_j)) <= 0:
        return SelectionEntry(j=j, kind=SelectionKind.D0, nu=2)
    entry = classify_by_f(differences.F(j + 1), differences.F(j), differences.F(j - 1))
    if entry is not None:
        return entry.model_copy(update={"j": j})
    if not allow_tie:
        raise IncompleteCase(j)
    return SelectionEntry(j=j, kind=SelectionKind.TIE, nu=2)


def selection_terms(grid: DyadicGrid, entry: SelectionEntry) -> list[tuple[float, PsiPiece]]:
    """Psi_j as a combination of Psi_{j,nu}."""
    if entry.kind == SelectionKind.D3:
        alpha = entry.alpha if entry.alpha is not None else 0.5
        return [(alpha, PsiPiece(grid, entry.j, 1)), (1.0 - alpha, PsiPiece(grid, entry.j, 3))]
    return [(1.0, PsiPiece(grid, entry.j, entry.nu))]


# =============================================================================
# Regions
# =============================================================================


@dataclass(frozen=True)
class Region:
    """A maximal run of consecutive I_j with j in H_3, covering [a, b]."""

    lower: int  # x_lower = a
    upper: int  # x_{upper-1} = b
    a: float
    b: float
    indices: tuple[int, ...]

    @property
    def interior(self) -> tuple[int, ...]:
        return self.indices[1:-1]

    def contains(self, x: np.ndarray | float) -> np.ndarray:
        """Membership in G = (a, b]."""
        x = np.asarray(x, dtype=float)
        return (x > self.a) & (x <= self.b)


@dataclass(frozen=True)
class RegionDecomposition:
    grid: DyadicGrid
    regions: tuple[Region, ...]

    def __len__(self) -> int:
        return len(self.regions)

    def covers(self, x: np.ndarray | float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape, dtype=bool)
        for region in self.regions:
            mask |= region.contains(x)
        return mask

    def region_of(self, j: int) -> Region | None:
        for region in self.regions:
            if j in region.indices:
                return region
        return None


def decompose_regions(inflections: InflectionSet, grid: DyadicGrid) -> RegionDecomposition:
    """Split [-pi, pi] intersected with the union of I_j, j in H_3, into maximal intervals."""
    near = build_neighborhoods(inflections, grid, SPLINE_NEIGHBORHOOD)
    survivors = near.survivors(1 - grid.n, grid.n)
    runs: list[list[int]] = []
    for j in survivors:
        if runs and runs[-1][-1] == j - 1:
            runs[-1].append(j)
        else:
            runs.append([j])
    regions = [
        Region(
            lower=run[-1],
            upper=run[0],
            a=grid.knot(run[-1]),
            b=grid.knot(run[0] - 1),
            indices=tuple(reversed(run)),
        )
        for run in runs
    ]
    regions.sort(key=lambda r: r.a)
    return RegionDecomposition(grid=grid, regions=tuple(regions))


# =============================================================================
# Model
# =============================================================================


@dataclass
class SplineModel:
    """
    The spline S for one function, inflection set and level.

    Working coordinates u = x - shift keep the inflection points away from +-pi; public
    evaluators take original coordinates and continue S periodically.
    """

    function: PeriodicFunction
    inflections: InflectionSet
    grid: DyadicGrid
    rotation: Rotation
    working_function: PeriodicFunction
    working_inflections: InflectionSet
    differences: DividedDifferenceTable
    selections: list[SelectionEntry]
    lagrange: LagrangeCubic
    diagnostics: list[str] = field(default_factory=list)

    @cached_property
    def _sum(self) -> TruncatedCubicSum:
        h = self.grid.h
        terms = []
        for entry in self.selections:
            weight = 4 * h * self.differences.Phi(entry.j)
            terms.extend((weight * c, piece) for c, piece in selection_terms(self.grid, entry))
        return TruncatedCubicSum.from_terms(terms)

    @cached_property
    def _technical(self) -> TruncatedCubicSum:
        h = self.grid.h
        return TruncatedCubicSum.from_terms(
            (4 * h * self.differences.Phi(j), PsiPiece(self.grid, j, 1))
            for j in self.differences.phi_indices
        )

    @cached_property
    def regions(self) -> RegionDecomposition:
        return decompose_regions(self.working_inflections, self.grid)

    @property
    def n(self) -> int:
        return self.grid.n

    def to_working(self, x: np.ndarray | float) -> np.ndarray:
        return reduce_angle(self.rotation.to_working(x))

    def from_working(self, u: np.ndarray | float) -> np.ndarray:
        return reduce_angle(np.asarray(u, dtype=float) + self.rotation.shift)

    def working(self, u: np.ndarray | float, order: int = 0, right: bool = False) -> np.ndarray:
        """S^(order) in working coordinates, without periodic reduction."""
        u = np.asarray(u, dtype=float)
        return self.lagrange.derivatives(u)[order] + self._sum.evaluate(u, order, right)

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        return self.working(self.to_working(x))

    def derivative(self, x: np.ndarray | float, order: int = 1) -> np.ndarray:
        return self.working(self.to_working(x), order)

    def technical(self, x: np.ndarray | float) -> np.ndarray:
        """Technical spline s, which interpolates f at every knot."""
        u = self.to_working(x)
        return self.lagrange(u) + self._technical.evaluate(u)

    def selection(self, j: int) -> SelectionEntry:
        return self.selections[j - (3 - self.n)]

    def psi(self, j: int, u: np.ndarray | float) -> np.ndarray:
        """Psi_j in working coordinates, boundary indices included."""
        u = np.asarray(u, dtype=float)
        if j == self.n:
            return psi3(u, self.grid, self.n)
        if j == 2 - self.n:
            return np.zeros(u.shape)
        return sum(c * piece(u) for c, piece in selection_terms(self.grid, self.selection(j)))

    def f_form(self, u: np.ndarray | float) -> np.ndarray:
        """S from the F_j representation (summation by parts of the Phi form)."""
        u = np.asarray(u, dtype=float)
        n, h, dd = self.n, self.grid.h, self.differences
        x_n, x_n1 = self.grid.knot(n), self.grid.knot(n - 1)
        psi = {j: self.psi(j, u) for j in range(2 - n, n + 1)}
        linear = dd.value(n) + (dd.value(n - 1) - dd.value(n)) / h * (u - x_n)
        total = linear + dd.F(n) * ((u - x_n) * (u - x_n1) - (psi[n] - psi[n - 1]) / (3 * h))
        for j in range(3 - n, n):
            a_j = (psi[j + 1] - 2 * psi[j] + psi[j - 1]) / (3 * h)
            total = total + dd.F(j) * a_j
        return total + dd.F(2 - n) * psi[3 - n] / (3 * h)

    def dump_columns(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Columns x, S, S', S'', Pi, S''*Pi."""
        u = self.to_working(x)
        second = self.working(u, 2)
        pi = self.inflections.pi(x)
        return {
            "x": x,
            "S": self.working(u),
            "S1": self.working(u, 1),
            "S2": second,
            "Pi": pi,
            "S2_Pi": second * pi,
        }


def build_spline(
    f: PeriodicFunction, inflections: InflectionSet, n: int, *, allow_tie: bool = True
) -> SplineModel:
    """Build S for f and Y at level n."""
    require_disjoint(inflections, n, SPLINE_NEIGHBORHOOD)
    grid = DyadicGrid(n)
    rotation = choose_rotation(inflections, grid)
    working_inflections = rotation.apply(inflections)
    working_function = f.shifted(rotation.shift)
    differences = divided_differences(working_function, grid)
    near = build_neighborhoods(working_inflections, grid, 2)

    selections, diagnostics = [], []
    for j in differences.phi_indices:
        entry = select_psi(j, differences, working_inflections, near, allow_tie=allow_tie)
        if entry.kind == SelectionKind.TIE:
            diagnostics.append(f"tie at j={j}: nu=2 used")
        selections.append(entry)

    lagrange = build_lagrange_cubic(working_function, grid.knot(n), grid.knot(n - 3))
    log.debug(
        "spline_built",
        function=f.name,
        n=n,
        rotation=rotation.knots,
        ties=len(diagnostics),
    )
    return SplineModel(
        function=f,
        inflections=inflections,
        grid=grid,
        rotation=rotation,
        working_function=working_function,
        working_inflections=working_inflections,
        differences=differences,
        selections=selections,
        lagrange=lagrange,
        diagnostics=diagnostics,
    )


def build_technical_spline(f: PeriodicFunction, grid: DyadicGrid) -> SplineModel:
    """Model whose `technical` evaluator is s; no rotation, no inflection points."""
    return build_spline(f, InflectionSet(points=()), grid.n)


# =============================================================================
# Shape checks
# =============================================================================


def _interval_samples(grid: DyadicGrid, indices: Iterable[int], per_interval: int) -> np.ndarray:
    offsets = (np.arange(per_interval) + 0.5) / per_interval
    chunks = [grid.knot(j) + grid.h * offsets for j in indices]
    return np.concatenate(chunks) if chunks else np.zeros(0)


def _sign_report(
    check: str,
    inequality: str,
    margins: np.ndarray,
    locations: np.ndarray,
    tolerance: float,
    *,
    asserted: bool = True,
) -> SignReport:
    if margins.size == 0:
        return SignReport(
            check=check, inequality=inequality, tolerance=tolerance, asserted=asserted
        )
    worst = int(np.argmin(margins))
    return SignReport(
        check=check,
        inequality=inequality,
        tolerance=tolerance,
        samples=int(margins.size),
        violations=int(np.count_nonzero(margins < -tolerance)),
        worst_location=float(locations[worst]),
        worst_margin=float(margins[worst]),
        asserted=asserted,
    )


def seam_report(
    check: str,
    second_below: float,
    second_above: float,
    jump: float,
    pi_seam: float,
    scale: float,
    h: float,
    location: float,
    tolerance: float,
) -> SignReport:
    """
    Shape of a periodic continuation across the seam u = pi ~ -pi.

    second_below = g''(pi-), second_above = g''(-pi+) and jump = g'(-pi+) - g'(pi-) must
    all carry the sign of Pi there; the jump is measured against scale * h.
    """
    sign = float(np.sign(pi_seam))
    margins = np.array(
        [second_below * sign / scale, second_above * sign / scale, jump * sign / (scale * h)]
    )
    return _sign_report(
        check,
        "g''(pi-) Pi, g''(-pi+) Pi and (g'(-pi+) - g'(pi-)) Pi >= 0 at the seam",
        margins,
        np.full(3, location),
        tolerance,
    )


def case_brackets(model: SplineModel) -> dict[SelectionKind, list[tuple[float, float]]]:
    """Brackets (a_., a_.] on which S'' must keep the sign of Pi, per selection kind."""
    grid = model.grid
    brackets: dict[SelectionKind, list[tuple[float, float]]] = {}
    for region in model.regions.regions:
        for j in region.indices:
            if not 3 - model.n <= j <= model.n - 1:
                continue
            kind = model.selection(j).kind
            a1, a2, a3 = grid.knot(j), grid.knot(j - 1), grid.knot(j - 2)
            span = {
                SelectionKind.D0: (a1, a3),
                SelectionKind.D1: (a1, a2),
                SelectionKind.D2: (a2, a3),
                SelectionKind.D3: (a1, a3),
            }.get(kind)
            if span is None:
                continue
            lo, hi = max(span[0], region.a), min(span[1], region.b)
            if lo < hi:
                brackets.setdefault(kind, []).append((lo, hi))
    return brackets


def verify_spline_shape(
    model: SplineModel, tolerance: float = 1e-9, samples_per_interval: int = 32
) -> list[SignReport]:
    """
    Sign checks of S, first entry asserted S''(x) Pi(x) >= 0 on I_j for j in H_3.

    Also asserts S'(a-) <= S'(a+) (sign of Pi taken into account) at the anchors inside
    the regions and the same shape across the seam at +-pi, and reports S'' sign per
    selection case on its bracket.
    """
    grid, pi = model.grid, model.working_inflections.pi
    near = build_neighborhoods(model.working_inflections, grid, SPLINE_NEIGHBORHOOD)
    u = _interval_samples(grid, near.survivors(1 - grid.n, grid.n), samples_per_interval)
    second = model.working(u, 2)
    scale = max(float(np.max(np.abs(second))) if second.size else 0.0, 1e-300)
    reports = [
        _sign_report(
            "spline-sign",
            "S''(x) Pi(x) >= 0 on I_j, j in H_3",
            second * pi(u) / scale,
            model.from_working(u),
            tolerance,
        )
    ]

    anchors = set()
    for region in model.regions.regions:
        for j in region.indices:
            if 3 - model.n <= j <= model.n - 1:
                for _, piece in selection_terms(grid, model.selection(j)):
                    if region.contains(piece.anchor):
                        anchors.add(piece.anchor)
    points = np.array(sorted(anchors))
    if points.size:
        jumps = model.working(points, 1, right=True) - model.working(points, 1)
        jump_scale = max(float(np.max(np.abs(jumps))), 1e-300)
        margins = jumps * np.sign(pi(points)) / jump_scale
    else:
        margins = np.zeros(0)
    reports.append(
        _sign_report(
            "spline-anchor-jumps",
            "S'(a-) <= S'(a+) where Pi > 0 (reversed where Pi < 0)",
            margins,
            model.from_working(points) if points.size else points,
            tolerance,
        )
    )

    reports.append(
        seam_report(
            "spline-seam",
            float(model.working(PI, 2)),
            float(model.working(-PI, 2, right=True)),
            float(model.working(-PI, 1, right=True) - model.working(PI, 1)),
            float(pi(PI)),
            scale,
            grid.h,
            float(model.from_working(PI)),
            tolerance,
        )
    )

    offsets = (np.arange(samples_per_interval) + 0.5) / samples_per_interval
    for kind, spans in sorted(case_brackets(model).items()):
        x = np.concatenate([lo + (hi - lo) * offsets for lo, hi in spans])
        reports.append(
            _sign_report(
                f"spline-case-{kind.value}",
                f"S''(x) Pi(x) >= 0 on the {kind.value} bracket",
                model.working(x, 2) * pi(x) / scale,
                model.from_working(x),
                tolerance,
                asserted=False,
            )
        )
    return reports


def psi_agreement(grid: DyadicGrid, j: int, nu: int, samples: int = 257) -> float:
    """max |Psi_3(., x_j) - Psi_{j,nu}| / h^3 on [x_j, a_nu]."""
    piece = PsiPiece(grid, j, nu)
    x = np.linspace(grid.knot(j), piece.anchor, samples)
    return float(np.max(np.abs(psi3(x, grid, j) - piece(x)))) / grid.h**3
