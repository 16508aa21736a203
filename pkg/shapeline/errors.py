"""
Exception hierarchy for the shapeline package.

Library code raises these; only the CLI maps them to exit codes.
"""

from __future__ import annotations


class ShapelineError(Exception):
    """Base class for all shapeline errors."""

    exit_code = 2


class ShapelineInputError(ShapelineError):
    """Invalid user input (function id, inflection set, grid sizes)."""

    exit_code = 1


class NeighborhoodOverlap(ShapelineInputError):
    """The requested n is too small for the exclusion neighborhoods to be disjoint."""

    def __init__(self, n: int, required: int, m: int):
        self.n = n
        self.required = required
        self.m = m
        super().__init__(
            f"n={n} is below the minimum n={required} required for disjoint O(i,{m}) neighborhoods"
        )


class DegenerateDenominator(ShapelineError):
    """The normalizing integral of a step kernel vanished."""

    def __init__(self, index: int, level: int, value: float):
        self.index = index
        self.level = level
        self.value = value
        super().__init__(f"normalizing integral of t_{index} at level {level} is {value:.3e}")


class ParameterOutOfRange(ShapelineError):
    """A closed-form affine solve left the unit interval by more than the clamp epsilon."""

    symbol = "parameter"

    def __init__(self, value: float, context: str = ""):
        self.value = value
        self.context = context
        super().__init__(f"{self.symbol}={value:.6g} outside [0, 1] {context}".rstrip())


class AlphaOutOfRange(ParameterOutOfRange):
    symbol = "alpha"


class BetaOutOfRange(ParameterOutOfRange):
    symbol = "beta"


class DivisorTooSmall(ShapelineError):
    """The correcting polynomial t_hat vanished at its inflection point."""

    def __init__(self, i: int, value: float):
        self.i = i
        self.value = value
        super().__init__(f"|t_hat(y_{i})| = {abs(value):.3e} below the divisor floor")


class IncompleteCase(ShapelineError):
    """No selection rule matched; raised only when tie-breaking is disabled."""

    def __init__(self, j: int):
        self.j = j
        super().__init__(f"selection rules do not cover j={j}")


class SignViolation(ShapelineError):
    """A shape inequality failed at a sampled point."""

    def __init__(self, check: str, location: float, margin: float):
        self.check = check
        self.location = location
        self.margin = margin
        super().__init__(f"{check} violated at x={location:.9f} (margin {margin:.3e})")


class CalibrationExhausted(ShapelineError):
    """Multiplier calibration reached its budget without passing the sign checks."""

    exit_code = 3

    def __init__(self, m1: int, m2: int, max_m2: int, max_m1: int | None = None):
        self.m1 = m1
        self.m2 = m2
        self.max_m1 = max_m1 if max_m1 is not None else m1
        self.max_m2 = max_m2
        super().__init__(
            f"calibration stopped at m1={m1}, m2={m2} "
            f"(budget m1 <= {self.max_m1}, m2 <= {max_m2})"
        )
