"""
Result containers returned by the solvers, sweeps and diagnostics.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

BRANCH_SMALL = "small"
BRANCH_LARGE = "large"


def deformed_branch(k: float) -> str:
    """Branch tag for a solution of the k-deformed system."""
    return f"deformed({k!r})"


@dataclass
class Bracket:
    """Constant sub/supersolution pair phi_minus <= phi_plus."""

    phi_minus: float
    phi_plus: float

    def to_dict(self) -> dict:
        return {"phi_minus": self.phi_minus, "phi_plus": self.phi_plus}


@dataclass
class EigenPair:
    """First eigenpair of the conformal Laplacian."""

    lambda1: float
    u: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "iterations": self.iterations,
            "residual": self.residual,
        }


@dataclass
class LichSolution:
    """Output of the Lichnerowicz solver."""

    phi: np.ndarray
    iterations: int
    residual_norm: float
    method: str = "newton"
    bracket: Optional[Bracket] = None

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "method": self.method,
            "min_phi": float(np.min(self.phi)),
            "max_phi": float(np.max(self.phi)),
            "bracket": self.bracket.to_dict() if self.bracket else None,
        }


@dataclass
class SolveReport:
    """Solution pair (phi, W) of the coupled system."""

    phi: np.ndarray
    W: np.ndarray
    res_lich: float
    res_vector: float
    iterations: int
    branch: str = BRANCH_SMALL
    method: str = "picard"
    parameter: Optional[float] = None
    history: List[float] = field(default_factory=list)

    @property
    def sup_phi(self) -> float:
        return float(np.max(np.abs(self.phi)))

    def to_row(self, parameter: Optional[float] = None) -> dict:
        """CSV row: parameter, sup_phi, res_lich, res_vector, iterations, branch."""
        value = self.parameter if parameter is None else parameter
        return {
            "parameter": value,
            "sup_phi": self.sup_phi,
            "res_lich": self.res_lich,
            "res_vector": self.res_vector,
            "iterations": self.iterations,
            "branch": self.branch,
        }

    def to_dict(self) -> dict:
        row = self.to_row()
        row["method"] = self.method
        row["min_phi"] = float(np.min(self.phi))
        row["sup_W"] = float(np.max(np.abs(self.W)))
        return row


@dataclass
class ContinuationPoint:
    """One accepted or failed step of a continuation run."""

    parameter: float
    report: Optional[SolveReport] = None
    stage: str = "natural"
    failure: Optional[str] = None

    @property
    def converged(self) -> bool:
        return self.report is not None


@dataclass
class ContinuationTrace:
    """
    Ordered record of a parameter continuation.

    Points keep insertion order; the parameter is monotone between folds.
    """

    parameter_name: str = "k"
    points: List[ContinuationPoint] = field(default_factory=list)
    fold: bool = False
    fold_parameter: Optional[float] = None
    fold_index: Optional[int] = None

    def append(self, point: ContinuationPoint) -> None:
        self.points.append(point)

    @property
    def converged_points(self) -> List[ContinuationPoint]:
        return [p for p in self.points if p.converged]

    @property
    def failures(self) -> List[ContinuationPoint]:
        return [p for p in self.points if not p.converged]

    def parameters(self) -> np.ndarray:
        return np.array([p.parameter for p in self.converged_points])

    def sup_phis(self) -> np.ndarray:
        return np.array([p.report.sup_phi for p in self.converged_points])

    @property
    def max_sup_phi(self) -> float:
        values = self.sup_phis()
        return float(np.max(values)) if values.size else math.nan

    def fold_point(self) -> Optional[ContinuationPoint]:
        if self.fold_index is None:
            return None
        return self.points[self.fold_index]

    def rows(self) -> List[dict]:
        return [p.report.to_row(p.parameter) for p in self.converged_points]

    def to_dict(self) -> dict:
        return {
            "parameter_name": self.parameter_name,
            "points": len(self.points),
            "converged": len(self.converged_points),
            "fold": self.fold,
            "fold_parameter": self.fold_parameter,
            "max_sup_phi": self.max_sup_phi,
        }


@dataclass
class TwoSolutions:
    """Small and large solutions for one seed."""

    small: SolveReport
    large: SolveReport
    trace: Optional[ContinuationTrace] = None
    method: str = "fold_return"

    @property
    def gap(self) -> float:
        """Relative sup-norm gap ||phi_large - phi_small|| / ||phi_small||."""
        return float(np.max(np.abs(self.large.phi - self.small.phi)) / self.small.sup_phi)


@dataclass
class AdmissibilityReport:
    """
    Measured constant of |L(omega#)| <= c |omega|^2 for omega = d tau / tau.

    violated means some point below the cutoff still carries a
    non-negligible |L(omega#)|; c is then infinite.
    level is the fraction of the largest |omega| below which the ratio
    is not measured.
    """

    c_measured: float
    n: int
    cutoff: float
    excluded_fraction: float
    violated: bool = False
    cmc: bool = False
    level: float = 0.0
    dual: str = "metric dual vector field of d tau / tau"

    @property
    def a_min(self) -> float:
        return (self.c_measured / 2.0) * math.sqrt(self.n / (self.n - 1))

    def to_dict(self) -> dict:
        return {
            "c_measured": self.c_measured,
            "a_min": self.a_min,
            "violated": self.violated,
            "cmc": self.cmc,
            "cutoff": self.cutoff,
            "excluded_fraction": self.excluded_fraction,
            "level": self.level,
            "dual": self.dual,
        }


@dataclass
class DerivativeCheckReport:
    """Central-difference study of the solution map w -> phi."""

    eps: List[float]
    differences: List[float]
    slope: float
    limit: np.ndarray
    reference: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "eps": list(self.eps),
            "differences": list(self.differences),
            "slope": self.slope,
            "sup_limit": float(np.max(np.abs(self.limit))),
        }


@dataclass
class CovarianceReport:
    """Round trip of a solve through a conformal change."""

    relative_error: float
    phi: np.ndarray
    phi_hat: np.ndarray

    def to_dict(self) -> dict:
        return {"relative_error": self.relative_error}


@dataclass
class EnergyReport:
    """Both sides of the integrated Lichnerowicz equation."""

    lhs: float
    rhs: float

    @property
    def relative_gap(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.rhs), 1e-300)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "relative_gap": self.relative_gap}


@dataclass
class LimitEquationReport:
    """Residual of the blow-up limit equation and the integrated contraction estimate."""

    residual: float
    pairing: float
    bound: float

    def to_dict(self) -> dict:
        return {"residual": self.residual, "pairing": self.pairing, "bound": self.bound}
