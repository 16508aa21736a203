"""
Pytest configuration and fixtures for shapeline tests.
"""

import math
import os

import pytest

# Set test environment BEFORE importing package modules
# Small grids keep the polynomial builds fast; SHAPELINE_ is the settings env prefix
os.environ["SHAPELINE_LOG_LEVEL"] = "WARNING"
os.environ["SHAPELINE_LOG_FORMAT"] = "console"
os.environ["SHAPELINE_THREADS"] = "2"
os.environ["SHAPELINE_GRID_POINTS"] = "2048"
os.environ["SHAPELINE_DELTA_POINTS"] = "32"
os.environ["SHAPELINE_QUADRATURE_POINTS"] = "8192"

# Clear the settings cache so the overrides are picked up
from shapeline import config  # noqa: E402

config.get_settings.cache_clear()

from shapeline.config import get_settings  # noqa: E402
from shapeline.periodic_core import InflectionSet  # noqa: E402

settings = get_settings()


@pytest.fixture
def two_points() -> InflectionSet:
    """Y = {0, -pi}; Pi(x) = sin(x)/2."""
    return InflectionSet.from_values([0.0, -math.pi])


@pytest.fixture
def quarter_points() -> InflectionSet:
    """Y = {pi/2, -pi/2}, already away from +-pi."""
    return InflectionSet.from_values([math.pi / 2, -math.pi / 2])


@pytest.fixture
def test_settings():
    return get_settings()
