"""
Finite-dimensional fixed-point models: parameterized maps, constraint
families and dichotomy outcomes.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

FIXED_POINT = "fixed_point"
CRITICAL_TUPLE = "critical_tuple"
INCONCLUSIVE = "inconclusive"


@dataclass
class ParamMap:
    """Continuous map T: [0,1] x R^d -> R^d."""

    dimension: int
    evaluator: Callable[[float, np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    name: str = ""

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        value = np.atleast_1d(np.asarray(self.evaluator(t, x), dtype=float))
        if value.shape != (self.dimension,):
            raise ValueError(f"map {self.name!r} returned shape {value.shape}, expected ({self.dimension},)")
        return value


@dataclass
class TAssociation:
    """
    Constraint family {F_i} attached to a map T.

    box_radius bounds the sample box |x|_inf <= box_radius and budget is
    the number of samples used by the certificate.
    """

    map: ParamMap
    constraints: List[Callable[[float, np.ndarray], float]]
    box_radius: float = 10.0
    budget: int = 10_000
    name: str = ""

    @property
    def dimension(self) -> int:
        return self.map.dimension

    def constraint_values(self, t: float, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([float(F(t, x)) for F in self.constraints])

    def admissible(self, t: float, x) -> bool:
        """True when every F_i(t, x) <= 0."""
        return bool(np.all(self.constraint_values(t, x) <= 0.0))


@dataclass
class AssociationCertificate:
    """Sampled bound C >= sup ||T(t,x)|| over the constraint sublevel set."""

    bound: float
    samples: int
    box_radii: List[float] = field(default_factory=list)
    box_sups: List[float] = field(default_factory=list)
    argmax: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "bound": self.bound,
            "samples": self.samples,
            "box_radii": list(self.box_radii),
            "box_sups": list(self.box_sups),
        }


@dataclass
class DichotomyResult:
    """Outcome of the dichotomy search."""

    variant: str
    x: Optional[np.ndarray] = None
    t: Optional[float] = None
    active_index: Optional[int] = None
    residual: float = float("nan")
    constraint_values: Optional[np.ndarray] = None

    @property
    def is_fixed_point(self) -> bool:
        return self.variant == FIXED_POINT

    @property
    def is_critical_tuple(self) -> bool:
        return self.variant == CRITICAL_TUPLE

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "t": self.t,
            "x": None if self.x is None else [float(v) for v in self.x],
            "active_index": self.active_index,
            "residual": self.residual,
        }


@dataclass
class Witness:
    """Direction p and radius r with <p, f(y) - y> > 0 on the sampled ball."""

    p: np.ndarray
    radius: float
    samples: int

    def to_dict(self) -> dict:
        return {"p": [float(v) for v in self.p], "radius": self.radius, "samples": self.samples}
