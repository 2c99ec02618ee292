"""
Deformed operator T(t, phi) built from anchor data, and the pair of
constraint functions that turns it into a T-association.

Mode "a" deforms the exponent (mean curvature tau^(a0/t)); mode "t"
keeps a fixed and scales the mean curvature by t^N t0.
"""

import logging
from typing import Optional

import numpy as np

from models.fields import ReducedTensor
from models.halfcont import ParamMap, TAssociation
from models.reports import ContinuationTrace
from models.seed import Anchors, LichProblem, SeedData
from services import lichnerowicz
from services.coupled import DEFAULT_KERNEL_TOL, vector_solve
from services.errors import InvalidState, NotFound
from services.geometry import apply_L, derivative, tensor_norm_sq

logger = logging.getLogger(__name__)

MODES = ("a", "t")
POSITIVITY_FLOOR = 1e-6


def deformation_term(phi: np.ndarray, anchors: Anchors, seed: SeedData) -> float:
    """(2 max{||phi0||, 2} - ||phi||)_+ (||sigma + L W0||^2 + k0^2)."""
    cap = 2.0 * max(anchors.sup_phi0, 2.0)
    excess = max(cap - float(np.max(np.abs(phi))), 0.0)
    if excess == 0.0:
        return 0.0
    anchor_tensor: ReducedTensor = seed.sigma + apply_L(seed.geom, anchors.W0)
    return excess * (float(np.max(tensor_norm_sq(seed.geom, anchor_tensor))) + anchors.k0 ** 2)


def _mean_curvature_and_source(t: float, phi: np.ndarray, anchors: Anchors, seed: SeedData, mode: str):
    """Mean curvature entering the scalar equation and the vector source covector."""
    geom = seed.geom
    N = geom.N_exp
    c = geom.kinetic_factor
    if mode == "a":
        if t == 0.0:
            zeros = np.zeros(geom.grid.num_points)
            return zeros, zeros
        tau_t = seed.tau ** (anchors.a0 / t)
        return tau_t, c * t ** (-N) * phi ** N * derivative(geom.grid, tau_t)
    tau_a = seed.tau ** seed.a
    source = c * anchors.t0 * phi ** N * derivative(geom.grid, tau_a)
    return t ** N * anchors.t0 * tau_a, source


def deformed_T_apply(
    t: float,
    phi: np.ndarray,
    anchors: Anchors,
    seed: SeedData,
    mode: str = "a",
    kernel_tol: float = DEFAULT_KERNEL_TOL,
    rel_tol: float = lichnerowicz.DEFAULT_TOL,
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Evaluate psi = T(t, phi).

    W solves the vector equation with the mode's source, then psi solves
    the Lichnerowicz equation with w^2 = |sigma + LW|^2 plus the
    deformation term. In mode "a" the value t = 0 gives the tau-free
    equation with source |sigma|^2 plus the deformation term.

    Raises:
        InvalidState: t outside [0, 1], unknown mode, or phi not positive
    """
    if mode not in MODES:
        raise InvalidState(f"unknown deformation mode '{mode}'")
    if not 0.0 <= t <= 1.0:
        raise InvalidState(f"t must lie in [0, 1], got {t}")
    phi = np.asarray(phi, dtype=float)
    if np.min(phi) <= 0:
        raise InvalidState("phi must be positive")
    if mode == "a" and np.max(seed.tau) >= 1.0:
        logger.warning("Exponent deformation expects max tau < 1")

    geom = seed.geom
    tau_lich, source = _mean_curvature_and_source(t, phi, anchors, seed, mode)
    W = vector_solve(geom, source, kernel_tol)
    w_sq = tensor_norm_sq(geom, seed.sigma + apply_L(geom, W)) + deformation_term(phi, anchors, seed)
    prob = LichProblem(geom=geom, tau=tau_lich, w=np.sqrt(w_sq), t=1.0)
    return lichnerowicz.solve(prob, init=init, rel_tol=rel_tol).phi


def anchors_from_trace(trace: ContinuationTrace, seed: SeedData) -> Anchors:
    """
    Anchors (phi0, W0, k0) at the largest-sup_phi point of a k sweep.

    Raises:
        NotFound: the trace holds no converged point
    """
    converged = trace.converged_points
    if not converged:
        raise NotFound("a converged point for anchors", trace)
    point = trace.fold_point() if trace.fold_index is not None else None
    if point is None or not point.converged:
        point = max(converged, key=lambda p: p.report.sup_phi)
    report = point.report
    k0 = point.parameter if trace.parameter_name == "k" else seed.k
    logger.info(f"Anchors at {trace.parameter_name}={point.parameter:.6g}, sup phi0={report.sup_phi:.6g}")
    return Anchors(
        phi0=report.phi.copy(),
        W0=report.W.copy(),
        k0=float(k0),
        a0=seed.a,
        t0=seed.t,
        parameter=point.parameter,
        notes={"fold": trace.fold},
    )


def deformed_association(
    seed: SeedData,
    anchors: Anchors,
    kappa: float,
    b_kappa: float,
    mode: str = "a",
    box_radius: Optional[float] = None,
    budget: int = 10000,
) -> TAssociation:
    """
    T-association {F1, F2} for the deformed operator:

        F1(t, phi) = ||T(t, phi)|| / max{||phi||, 1} - kappa
        F2(t, phi) = ||phi|| - b_kappa

    Coordinates are clipped below at a small positive floor so the map is
    total on the sample box.
    """
    geom = seed.geom

    def evaluate(t: float, x: np.ndarray) -> np.ndarray:
        return deformed_T_apply(t, np.maximum(x, POSITIVITY_FLOOR), anchors, seed, mode)

    def F1(t: float, x: np.ndarray) -> float:
        phi = np.maximum(x, POSITIVITY_FLOOR)
        psi = evaluate(t, x)
        return float(np.max(psi)) / max(float(np.max(phi)), 1.0) - kappa

    def F2(t: float, x: np.ndarray) -> float:
        return float(np.max(np.abs(x))) - b_kappa

    radius = box_radius if box_radius is not None else 2.0 * b_kappa
    return TAssociation(
        map=ParamMap(dimension=geom.grid.num_points, evaluator=evaluate, name=f"deformed-{mode}"),
        constraints=[F1, F2],
        box_radius=radius,
        budget=budget,
        name=f"deformed-{mode}",
    )
