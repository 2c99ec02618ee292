"""
Lab settings using Pydantic Settings.
Loads process-wide defaults from LAB_* environment variables or a .env file.
"""

from functools import lru_cache
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class LabSettings(BaseSettings):
    """Defaults used whenever a run config leaves a value out."""

    model_config = SettingsConfigDict(
        env_prefix="LAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False,
    )

    # -------------------------------------------------------------------------
    # Runtime
    # -------------------------------------------------------------------------
    log_level: str = Field(
        default="INFO",
        description="Root log level (DEBUG, INFO, WARNING, ERROR)"
    )
    output_dir: str = Field(
        default="output",
        description="Directory for CSV files and summary.txt"
    )
    threads: int = Field(
        default=0,
        ge=0,
        le=256,
        description="Worker threads for multistart searches (0 = auto)"
    )
    random_seed: int = Field(
        default=0,
        ge=0,
        description="Seed for randomized searches and sampling"
    )

    # -------------------------------------------------------------------------
    # Tolerances
    # -------------------------------------------------------------------------
    tol_lich: float = Field(
        default=1e-10,
        gt=0,
        lt=1,
        description="Relative tolerance of the Lichnerowicz solver"
    )
    tol_coupled: float = Field(
        default=1e-8,
        gt=0,
        lt=1,
        description="Relative residual tolerance of the coupled solvers"
    )
    tol_halfcont: float = Field(
        default=1e-8,
        gt=0,
        lt=1,
        description="Absolute residual tolerance of the dichotomy search"
    )
    kernel_tol: float = Field(
        default=1e-8,
        gt=0,
        lt=1,
        description="Relative threshold of the conformal Killing kernel check"
    )

    # -------------------------------------------------------------------------
    # Iteration caps
    # -------------------------------------------------------------------------
    max_iter: int = Field(
        default=200,
        ge=1,
        le=10000,
        description="Newton iteration cap"
    )
    monotone_max_iter: int = Field(
        default=5000,
        ge=1,
        le=1000000,
        description="Monotone iteration cap"
    )
    picard_max_iter: int = Field(
        default=100,
        ge=1,
        le=10000,
        description="Picard iteration cap of the coupled solver"
    )
    damping: float = Field(
        default=0.7,
        gt=0,
        le=1,
        description="Geometric damping of the Picard update"
    )

    @property
    def workers(self) -> Optional[int]:
        """Thread count with 0 resolved to None (executor default)."""
        return self.threads or None


@lru_cache()
def get_settings() -> LabSettings:
    """
    Get cached lab settings.
    Uses lru_cache to only load settings once.
    """
    return LabSettings()
