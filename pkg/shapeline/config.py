"""
Configuration management for shapeline.
Loads settings from environment variables (SHAPELINE_*) and run configs from YAML/JSON files.
"""

import json
from functools import lru_cache
from pathlib import Path
from typing import Any

import yaml
from pydantic import Field
from pydantic_settings import BaseSettings


class ShapelineSettings(BaseSettings):
    """
    Process-wide settings loaded from environment variables.
    """

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"

    # Workers
    threads: int = Field(default=4, ge=1, description="Upper bound on joblib workers.")

    # Search grids (moduli, sup-norms)
    grid_points: int = Field(default=2**14, description="Points per period for sup-norm scans.")
    delta_points: int = Field(default=64, description="Step sizes scanned by the modulus search.")

    # Quadrature
    quadrature_points: int = Field(default=2**16, description="Fine-grid points per period (Q).")
    min_points_per_step: int = 16
    gauss_nodes: int = 8
    quadrature_tolerance: float = Field(
        default=1e-8, description="Largest change of a kernel value when the fine grid doubles."
    )
    max_quadrature_doublings: int = Field(default=2, ge=0)

    # Polynomial levels
    multiplier_m1: int = Field(default=2, ge=1)
    multiplier_m2: int = Field(default=4, ge=1)
    max_m1: int = 8
    max_m2: int = 16

    # Tolerances
    sign_tolerance: float = 1e-9
    clamp_epsilon: float = 1e-6
    divisor_floor: float = 1e-12
    whitney_tolerance_factor: float = 1.05

    # Studies
    seed: int = 20240601
    output_dir: str = "shapeline-out"

    def validate_grids(self) -> list[str]:
        """Validate grid sizes. Returns list of errors."""
        errors = []
        if self.grid_points < 256:
            errors.append("GRID_POINTS must be at least 256")
        if self.delta_points < 2:
            errors.append("DELTA_POINTS must be at least 2")
        if self.quadrature_points < 1024:
            errors.append("QUADRATURE_POINTS must be at least 1024")
        if self.min_points_per_step < 4 or self.min_points_per_step % 2:
            errors.append("MIN_POINTS_PER_STEP must be an even number >= 4")
        if self.max_m1 < self.multiplier_m1:
            errors.append("MAX_M1 must not be below MULTIPLIER_M1")
        if self.max_m2 < self.multiplier_m2:
            errors.append("MAX_M2 must not be below MULTIPLIER_M2")
        return errors

    class Config:
        env_prefix = "SHAPELINE_"
        env_file = ".env"
        case_sensitive = False


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Load a run configuration file. YAML and JSON are both accepted."""
    config_path = Path(path)
    text = config_path.read_text()
    if config_path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{config_path} must contain a mapping at the top level")
    return data


@lru_cache
def get_settings() -> ShapelineSettings:
    """Get cached settings instance."""
    return ShapelineSettings()
