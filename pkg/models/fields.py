"""
Field containers on a reduced geometry.

Scalar fields and the single component W(x) of W = W(x) d/dx are stored
as plain 1-D numpy arrays. Symmetric 2-tensors use ReducedTensor.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

ScalarField = np.ndarray
ReducedVector = np.ndarray


@dataclass
class ReducedTensor:
    """
    Symmetric tensor invariant under the fiber isometries.

    xx is the mixed component T^x_x, blocks[i] the value q_i with
    T restricted to fiber block i equal to q_i * identity, and shear[i]
    the lower-index component T_{x y_i} (zero for non-circle blocks).
    """

    xx: np.ndarray
    blocks: List[np.ndarray]
    shear: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.shear:
            self.shear = [np.zeros_like(self.xx) for _ in self.blocks]

    def trace(self, multiplicities: np.ndarray) -> np.ndarray:
        """Pointwise trace g^{ij} T_ij."""
        total = self.xx.copy()
        for m, q in zip(multiplicities, self.blocks):
            total = total + m * q
        return total

    def __add__(self, other: "ReducedTensor") -> "ReducedTensor":
        return ReducedTensor(
            xx=self.xx + other.xx,
            blocks=[p + q for p, q in zip(self.blocks, other.blocks)],
            shear=[p + q for p, q in zip(self.shear, other.shear)],
        )

    def scaled(self, diag_factor: np.ndarray, shear_factor: np.ndarray) -> "ReducedTensor":
        """Multiply mixed diagonal parts and shear parts by separate weights."""
        return ReducedTensor(
            xx=self.xx * diag_factor,
            blocks=[q * diag_factor for q in self.blocks],
            shear=[s * shear_factor for s in self.shear],
        )

    @classmethod
    def zeros(cls, num_points: int, num_blocks: int) -> "ReducedTensor":
        return cls(
            xx=np.zeros(num_points),
            blocks=[np.zeros(num_points) for _ in range(num_blocks)],
        )


# The TT data and the image of L share one container.
ReducedTT = ReducedTensor


@dataclass
class TTSpec:
    """
    Free data for make_tt_tensor.

    s0 fixes the conserved flux of the divergence ODE, profiles gives
    q_i for every block except the last (fixed by the trace), shear gives
    the conserved constants vol * T^x_{y_i} for circle blocks.
    """

    s0: float = 0.0
    profiles: List[np.ndarray] = field(default_factory=list)
    shear: List[float] = field(default_factory=list)
    project: bool = False
    forced_trace: Optional[np.ndarray] = None

    @property
    def is_zero(self) -> bool:
        return (
            self.s0 == 0.0
            and all(not np.any(p) for p in self.profiles)
            and all(c == 0.0 for c in self.shear)
        )


@dataclass
class ConformalTransform:
    """Strictly positive conformal factor theta with g_hat = theta^(N-2) g."""

    theta: np.ndarray

    @property
    def min_theta(self) -> float:
        return float(np.min(self.theta))

    def inverse(self) -> "ConformalTransform":
        return ConformalTransform(theta=1.0 / self.theta)


@dataclass
class Norms:
    """Result of norms_and_integrals."""

    sup_norm: float
    L2_norm: float
    Lp_norm: float
    p: float
    integral: float

    def to_dict(self) -> dict:
        return {
            "sup_norm": self.sup_norm,
            "L2_norm": self.L2_norm,
            "Lp_norm": self.Lp_norm,
            "p": self.p,
            "integral": self.integral,
        }

