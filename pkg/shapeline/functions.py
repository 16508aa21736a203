"""
Periodic test functions: builtin registry, the f_g family and CSV-sampled inputs.
"""

from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from shapeline.errors import ShapelineInputError
from shapeline.periodic_core import PI, TWO_PI, InflectionSet, RealFunction, reduce_angle

MIN_SAMPLES = 64
FG_SAMPLES = 4096


class FunctionSource(StrEnum):
    BUILTIN = "builtin"
    SPECTRAL = "spectral"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class PeriodicFunction:
    """
    A real function on the circle.

    Arguments outside [-pi, pi] are reduced by whole periods before evaluation; inside
    they are passed through, so non-periodic inputs such as cubics keep f(pi).
    """

    name: str
    evaluator: RealFunction
    second_derivative: RealFunction | None = None
    source: FunctionSource = FunctionSource.BUILTIN
    approximate: bool = False

    def __call__(self, x: np.ndarray | float) -> np.ndarray:
        return np.asarray(self.evaluator(reduce_angle(x)), dtype=float)

    def f2(self, x: np.ndarray | float, step: float = 1e-3) -> np.ndarray:
        """Second derivative: analytic when known, central differences otherwise."""
        x = np.asarray(x, dtype=float)
        if self.second_derivative is not None:
            return np.asarray(self.second_derivative(reduce_angle(x)), dtype=float)
        return (self(x + step) - 2 * self(x) + self(x - step)) / step**2

    def shifted(self, shift: float) -> "PeriodicFunction":
        """u -> f(u + shift), used to move into working coordinates."""
        if shift == 0:
            return self
        f2 = None
        if self.second_derivative is not None:
            f2 = lambda u: self.f2(np.asarray(u) + shift)  # noqa: E731
        return PeriodicFunction(
            name=self.name,
            evaluator=lambda u: self(np.asarray(u) + shift),
            second_derivative=f2,
            source=self.source,
            approximate=self.approximate,
        )


# =============================================================================
# Builtins
# =============================================================================


def _poly4_periodic(x: np.ndarray) -> np.ndarray:
    return (x**2 - PI**2) ** 2


def _cubic(x: np.ndarray) -> np.ndarray:
    return 0.05 * x**3 + 0.2 * x**2 - x + 1.0


_BUILTINS: dict[str, tuple[RealFunction, RealFunction]] = {
    "neg-sin": (lambda x: -np.sin(x), lambda x: np.sin(x)),
    "sin": (np.sin, lambda x: -np.sin(x)),
    "const": (lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "neg-sin-mix": (
        lambda x: -np.sin(x) - 0.05 * np.sin(2 * x),
        lambda x: np.sin(x) + 0.2 * np.sin(2 * x),
    ),
    "poly4-periodic": (_poly4_periodic, lambda x: 12 * x**2 - 4 * PI**2),
    "cubic-poly": (_cubic, lambda x: 0.3 * x + 0.4),
}


def builtin_names() -> list[str]:
    return sorted([*_BUILTINS, "fg", "csv"])


def fg_function(
    inflections: InflectionSet,
    weight: Callable[[np.ndarray], np.ndarray] | None = None,
    samples: int = FG_SAMPLES,
) -> PeriodicFunction:
    """
    Member of the f_g family: f'' = Pi * g + lam with g > 0 and lam making f'' mean-free.

    f is recovered spectrally from f'' and sampled through a periodic cubic spline; the
    second derivative is kept exact.
    """
    g = weight or (lambda x: 2.0 + np.cos(x))
    x = -PI + TWO_PI * np.arange(samples) / samples
    shaped = inflections.pi(x) * g(x)
    lam = -float(np.mean(shaped))
    coefficients = np.fft.rfft(shaped + lam)
    k = np.arange(coefficients.size)
    scale = np.zeros(coefficients.size)
    scale[1:] = -1.0 / k[1:] ** 2
    values = np.fft.irfft(coefficients * scale, n=samples)
    spline = _periodic_spline(x, values)

    def second(u: np.ndarray) -> np.ndarray:
        return inflections.pi(u) * g(u) + lam

    return PeriodicFunction(
        name="fg",
        evaluator=lambda u: spline(_into_period(u, x[0])),
        second_derivative=second,
        source=FunctionSource.SPECTRAL,
        approximate=True,
    )


def _into_period(u: np.ndarray, start: float) -> np.ndarray:
    return start + np.mod(np.asarray(u, dtype=float) - start, TWO_PI)


def _periodic_spline(x: np.ndarray, values: np.ndarray) -> CubicSpline:
    closed_x = np.append(x, x[0] + TWO_PI)
    closed_values = np.append(values, values[0])
    return CubicSpline(closed_x, closed_values, bc_type="periodic")


def sampled_function(path: str | Path) -> PeriodicFunction:
    """Periodic cubic-spline interpolant of uniform (x, f(x)) samples from a CSV file."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise ShapelineInputError(f"cannot read samples from {path}: {e}") from e
    if data.shape[1] != 2:
        raise ShapelineInputError(f"{path} must have two columns (x, f(x))")
    x, values = data[:, 0], data[:, 1]
    if x.size < MIN_SAMPLES:
        raise ShapelineInputError(f"{path} has {x.size} samples, at least {MIN_SAMPLES} needed")
    step = TWO_PI / x.size
    if not np.allclose(np.diff(x), step, rtol=1e-6, atol=1e-9):
        raise ShapelineInputError(f"{path} must hold {x.size} uniform samples over one period")
    spline = _periodic_spline(x, values)
    curvature = spline.derivative(2)
    return PeriodicFunction(
        name=Path(path).stem,
        evaluator=lambda u: spline(_into_period(u, x[0])),
        second_derivative=lambda u: curvature(_into_period(u, x[0])),
        source=FunctionSource.SAMPLED,
        approximate=True,
    )


def get_function(
    name: str, inflections: InflectionSet | None = None, csv_path: str | None = None
) -> PeriodicFunction:
    """Resolve a function id from the registry."""
    if name in _BUILTINS:
        value, second = _BUILTINS[name]
        return PeriodicFunction(name=name, evaluator=value, second_derivative=second)
    if name == "fg":
        if inflections is None:
            raise ShapelineInputError("the fg family needs an inflection set")
        return fg_function(inflections)
    if name == "csv":
        if not csv_path:
            raise ShapelineInputError("function id 'csv' needs a csv_path")
        return sampled_function(csv_path)
    raise ShapelineInputError(
        f"unknown function id '{name}'; choose from {', '.join(builtin_names())}"
    )
