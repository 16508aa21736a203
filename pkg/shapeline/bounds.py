"""
Fitting of existential constants from sampled inequalities.
"""

import numpy as np

from shapeline.models import BoundKind, FittedConstant


def fit_constant(kind: BoundKind, lhs: np.ndarray, shape: np.ndarray) -> float:
    """
    Fit the constant of |lhs| <= C * shape (UPPER) or |lhs| >= C * shape (LOWER).

    UPPER returns the smallest admissible C, LOWER the largest. Samples where the
    shape vanishes carry no information and are skipped; all-zero samples give 0.
    """
    lhs = np.abs(np.asarray(lhs, dtype=float))
    shape = np.abs(np.asarray(shape, dtype=float))
    if lhs.size == 0 or not np.any(lhs > 0):
        return 0.0
    informative = shape > 0
    if kind == BoundKind.UPPER:
        if np.any(lhs[~informative] > 0):
            return float("inf")
        return float(np.max(lhs[informative] / shape[informative]))
    if not np.any(informative):
        return 0.0
    return float(np.min(lhs[informative] / shape[informative]))


def fitted(
    name: str,
    inequality: str,
    kind: BoundKind,
    lhs: np.ndarray,
    shape: np.ndarray,
    *,
    gamma_power: float | None,
    sample_grid: str,
) -> FittedConstant:
    """Fit a constant and package it with the sample description."""
    return FittedConstant(
        name=name,
        inequality=inequality,
        kind=kind,
        value=fit_constant(kind, lhs, shape),
        gamma_power=gamma_power,
        sample_grid=sample_grid,
        samples=int(np.size(lhs)),
    )
