"""
Problem and seed-data models for the scalar and coupled solvers.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fields import ReducedTensor
from .geometry import ReducedGeometry
from services.errors import InvalidState


def _as_field(geom: ReducedGeometry, values, name: str) -> np.ndarray:
    """Broadcast scalars and check length and finiteness."""
    arr = np.broadcast_to(np.asarray(values, dtype=float), (geom.grid.num_points,)).copy()
    if not np.all(np.isfinite(arr)):
        raise InvalidState(f"{name} has non-finite values")
    return arr


@dataclass
class LichProblem:
    """
    One instance of the Lichnerowicz equation

        c_n Delta phi + R phi + ((n-1)/n) t tau^2 phi^(N-1) = w^2 phi^(-N-1)

    on a fixed geometry. The geometry may have sign-changing R; the
    solver positivizes it first.
    """

    geom: ReducedGeometry
    tau: np.ndarray
    w: np.ndarray
    t: float = 1.0

    def __post_init__(self):
        self.tau = _as_field(self.geom, self.tau, "tau")
        self.w = _as_field(self.geom, self.w, "w")
        if not 0.0 <= self.t <= 1.0:
            raise InvalidState(f"t must lie in [0, 1], got {self.t}")
        if not np.any(self.w != 0.0):
            raise InvalidState("w vanishes identically; existence requires w != 0")

    @property
    def w_sq(self) -> np.ndarray:
        return self.w ** 2

    @property
    def tau_term(self) -> np.ndarray:
        """Coefficient ((n-1)/n) t tau^2 of phi^(N-1)."""
        return self.geom.kinetic_factor * self.t * self.tau ** 2

    def with_w(self, w: np.ndarray) -> "LichProblem":
        return replace(self, w=w)


@dataclass
class SeedData:
    """
    Seed (g, tau, sigma) with exponent a, scale t and deformation k.

    The mean curvature entering both equations is t * tau^a, so the
    (a,k)-system is t = 1 and the (t,k)-system keeps a fixed.
    """

    geom: ReducedGeometry
    tau: np.ndarray
    sigma: ReducedTensor
    a: float = 1.0
    t: float = 1.0
    k: float = 0.0
    p_sobolev: Optional[float] = None

    def __post_init__(self):
        self.tau = _as_field(self.geom, self.tau, "tau")
        if np.min(self.tau) <= 0:
            raise InvalidState("tau must be strictly positive")
        if self.a < 1.0:
            raise InvalidState(f"exponent a must be >= 1, got {self.a}")
        if not 0.0 < self.t <= 1.0:
            raise InvalidState(f"t must lie in (0, 1], got {self.t}")
        if self.k < 0.0:
            raise InvalidState(f"k must be >= 0, got {self.k}")
        if self.p_sobolev is None:
            self.p_sobolev = 2.0 * self.geom.n
        elif self.p_sobolev <= self.geom.n:
            raise InvalidState(f"p must exceed n = {self.geom.n}, got {self.p_sobolev}")

    @property
    def tau_eff(self) -> np.ndarray:
        """Effective mean curvature t * tau^a."""
        return self.t * self.tau ** self.a

    @property
    def sigma_is_zero(self) -> bool:
        return not (
            np.any(self.sigma.xx)
            or any(np.any(q) for q in self.sigma.blocks)
            or any(np.any(s) for s in self.sigma.shear)
        )

    def with_(self, **changes) -> "SeedData":
        """Copy with some fields replaced, e.g. seed.with_(k=2.0)."""
        return replace(self, **changes)


@dataclass
class Anchors:
    """
    Anchor data (phi_0, W_0, k_0) for the deformed operator.

    a0 is the base exponent used by the mode-2 wiring tau^(a0/t) and t0
    the base scale used by mode 1.
    """

    phi0: np.ndarray
    W0: np.ndarray
    k0: float = 0.0
    a0: float = 1.0
    t0: float = 1.0
    parameter: Optional[float] = None
    notes: dict = field(default_factory=dict)

    @property
    def sup_phi0(self) -> float:
        return float(np.max(np.abs(self.phi0)))
