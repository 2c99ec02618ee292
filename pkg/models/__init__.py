"""Data models for the conformal-constraints lab."""

from .geometry import Grid, FiberBlock, ReducedGeometry
from .fields import (
    ScalarField,
    ReducedVector,
    ReducedTensor,
    ReducedTT,
    TTSpec,
    ConformalTransform,
    Norms,
)
from .seed import LichProblem, SeedData, Anchors
from .reports import (
    Bracket,
    EigenPair,
    LichSolution,
    SolveReport,
    ContinuationPoint,
    ContinuationTrace,
    TwoSolutions,
    AdmissibilityReport,
    DerivativeCheckReport,
    CovarianceReport,
    EnergyReport,
    LimitEquationReport,
)
from .halfcont import ParamMap, TAssociation, AssociationCertificate, DichotomyResult, Witness

__all__ = [
    "Grid",
    "FiberBlock",
    "ReducedGeometry",
    "ScalarField",
    "ReducedVector",
    "ReducedTensor",
    "ReducedTT",
    "TTSpec",
    "ConformalTransform",
    "Norms",
    "LichProblem",
    "SeedData",
    "Anchors",
    "Bracket",
    "EigenPair",
    "LichSolution",
    "SolveReport",
    "ContinuationPoint",
    "ContinuationTrace",
    "TwoSolutions",
    "AdmissibilityReport",
    "DerivativeCheckReport",
    "CovarianceReport",
    "EnergyReport",
    "LimitEquationReport",
    "ParamMap",
    "TAssociation",
    "AssociationCertificate",
    "DichotomyResult",
    "Witness",
]
