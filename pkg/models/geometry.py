"""
Grid and reduced-geometry data models.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, period)."""

    num_points: int
    period: float = 2.0 * np.pi
    derivative_order: int = 2

    @property
    def spacing(self) -> float:
        """Distance between neighbouring nodes."""
        return self.period / self.num_points

    @property
    def x(self) -> np.ndarray:
        """Node coordinates."""
        return np.arange(self.num_points) * self.spacing

    @property
    def x_half(self) -> np.ndarray:
        """Staggered coordinates x_{j+1/2}."""
        return (np.arange(self.num_points) + 0.5) * self.spacing

    def to_dict(self) -> dict:
        return {
            "num_points": self.num_points,
            "period": self.period,
            "spacing": self.spacing,
            "derivative_order": self.derivative_order,
        }


@dataclass(frozen=True, eq=False)
class FiberBlock:
    """
    One fiber factor B(x)^2 h of the warped metric.

    h is the unit flat metric of T^dim (curvature 0) or the unit round
    metric of S^dim (curvature 1, dim >= 2).
    """

    profile: np.ndarray
    dim: int = 1
    curvature: int = 0

    @property
    def is_circle(self) -> bool:
        """True for a one-dimensional flat factor (carries shear components)."""
        return self.dim == 1 and self.curvature == 0

    @property
    def fiber_scalar_curvature(self) -> float:
        """Scalar curvature of the unit fiber."""
        return float(self.curvature * self.dim * (self.dim - 1))


@dataclass(frozen=True, eq=False)
class ReducedGeometry:
    """
    Metric g = A(x)^2 dx^2 + sum_i B_i(x)^2 h_i on a periodic interval times fibers.

    Built by services.geometry.make_geometry, which validates the profiles
    and fills the derived curvature and volume weight. Instances are
    immutable and compared by identity.
    """

    grid: Grid
    profile_A: np.ndarray
    blocks: Tuple[FiberBlock, ...]
    R: np.ndarray = field(repr=False)
    vol: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        """Manifold dimension."""
        return 1 + sum(b.dim for b in self.blocks)

    @property
    def N_exp(self) -> float:
        """Critical exponent N = 2n/(n-2)."""
        return 2.0 * self.n / (self.n - 2)

    @property
    def c_n(self) -> float:
        """Conformal Laplacian coefficient 4(n-1)/(n-2)."""
        return 4.0 * (self.n - 1) / (self.n - 2)

    @property
    def kinetic_factor(self) -> float:
        """(n-1)/n, the coefficient of the mean-curvature terms."""
        return (self.n - 1) / self.n

    @property
    def profiles_B(self) -> Tuple[np.ndarray, ...]:
        return tuple(b.profile for b in self.blocks)

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([b.dim for b in self.blocks], dtype=float)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "grid": self.grid.to_dict(),
            "blocks": [
                {"dim": b.dim, "curvature": b.curvature} for b in self.blocks
            ],
            "min_R": float(np.min(self.R)),
            "max_R": float(np.max(self.R)),
            "total_volume": float(np.sum(self.vol) * self.grid.spacing),
        }
