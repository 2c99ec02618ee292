"""
Admissibility service.
Measures the constant c of |L(d tau / tau)| <= c |d tau / tau|^2, builds
plateau-transition mean curvatures, and evaluates the smallness
functional and the blow-up limit equation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import interpolate, optimize

from models.geometry import Grid, ReducedGeometry
from models.reports import AdmissibilityReport, LimitEquationReport
from models.seed import SeedData
from services.errors import InvalidLayout
from services.geometry import (
    apply_L,
    covector_norm,
    covector_to_vector,
    derivative,
    half_vector_laplacian,
    integrate,
    norms_and_integrals,
    tensor_norm_sq,
)

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF = 1e-6
DEFAULT_LEVEL = 0.2
# Below-cutoff points with |L(omega#)| above this fraction of its maximum mark the report violated.
VIOLATION_FRACTION = 1e-3


def _periodic_spline(grid: Grid, values: np.ndarray) -> interpolate.CubicSpline:
    nodes = np.append(grid.x, grid.x[0] + grid.period)
    return interpolate.CubicSpline(nodes, np.append(values, values[0]), bc_type="periodic")


def _crossing_ratios(grid: Grid, omega: np.ndarray, L_omega: np.ndarray, threshold: float) -> List[float]:
    """|L(omega#)| / threshold^2 where the interpolated |omega| crosses threshold."""
    omega_s = _periodic_spline(grid, omega)
    L_s = _periodic_spline(grid, L_omega)
    nodes = np.append(grid.x, grid.x[0] + grid.period)
    above = np.append(omega, omega[0]) - threshold
    ratios = []
    for j in np.nonzero(above[:-1] * above[1:] < 0)[0]:
        root = optimize.brentq(lambda s: float(omega_s(s)) - threshold, nodes[j], nodes[j + 1])
        ratios.append(float(L_s(root)) / threshold ** 2)
    return ratios


def compute_c(geom: ReducedGeometry, tau: np.ndarray, cutoff: float = DEFAULT_CUTOFF,
              level: float = DEFAULT_LEVEL) -> AdmissibilityReport:
    """
    Measure c for omega = d tau / tau, using the metric dual of omega.

    c is the largest |L(omega#)| / |omega|^2 over the region where
    |omega| >= level * ||omega||, taken at the grid points inside it and
    at the interpolated points where |omega| crosses the level. The ratio
    is unbounded near the zeros of omega for every periodic tau; the
    level leaves them out.

    Points with |omega| <= cutoff * ||omega|| are excluded. If an excluded
    point still carries |L(omega#)| above 1e-3 ||L(omega#)||, the ratio
    diverges there and the report is flagged violated with c = inf.
    """
    tau = np.asarray(tau, dtype=float)
    omega_x = derivative(geom.grid, np.log(tau))
    omega = covector_norm(geom, omega_x)
    scale = float(np.max(omega))
    if scale <= 1e-14:
        return AdmissibilityReport(c_measured=0.0, n=geom.n, cutoff=0.0, excluded_fraction=1.0, cmc=True,
                                   level=level)

    eps_c = cutoff * scale
    L_omega = np.sqrt(tensor_norm_sq(geom, apply_L(geom, covector_to_vector(geom, omega_x))))
    excluded = omega <= eps_c
    violated = bool(np.any(L_omega[excluded] > VIOLATION_FRACTION * np.max(L_omega)))
    if violated:
        c = math.inf
        logger.warning("Condition on d tau / tau violated near critical points of tau")
    else:
        threshold = level * scale
        inside = omega >= threshold
        ratios = list(L_omega[inside] / omega[inside] ** 2)
        ratios += _crossing_ratios(geom.grid, omega, L_omega, threshold)
        c = float(max(ratios))
    report = AdmissibilityReport(
        c_measured=c,
        n=geom.n,
        cutoff=eps_c,
        excluded_fraction=float(np.mean(excluded)),
        violated=violated,
        level=level,
    )
    logger.info(f"Measured c={c:.6g}, a_min={report.a_min:.6g}, excluded {report.excluded_fraction:.3f}")
    return report


# -------------------------------------------------------------------------
# Plateau design
# -------------------------------------------------------------------------

@dataclass
class PlateauLayout:
    """
    Piecewise-constant tau levels joined by smooth transitions.

    Transition i starts at starts[i] and moves ln tau from levels[i] to
    levels[i + 1] (cyclically) over `width`.
    """

    levels: List[float]
    starts: List[float] = field(default_factory=list)
    width: float = 1.0


def smooth_step(s: np.ndarray) -> np.ndarray:
    """exp(-1/s) / (exp(-1/s) + exp(-1/(1-s))) on (0,1), 0 below and 1 above."""
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    out = np.where(s >= 1, 1.0, 0.0)
    si = s[inside]
    left = np.exp(-1.0 / si)
    right = np.exp(-1.0 / (1.0 - si))
    out[inside] = left / (left + right)
    return out


def design_admissible_tau(grid: Grid, layout: PlateauLayout) -> np.ndarray:
    """
    Build tau from a plateau layout.

    Raises:
        InvalidLayout: non-positive levels, mismatched transitions, widths
            below four grid spacings or overlapping transitions
    """
    levels = [float(v) for v in layout.levels]
    if not levels or min(levels) <= 0:
        raise InvalidLayout("plateau levels must be positive")
    if len(levels) == 1:
        return np.full(grid.num_points, levels[0])
    if len(layout.starts) != len(levels):
        raise InvalidLayout(f"{len(levels)} plateaus need {len(levels)} transitions, got {len(layout.starts)}")
    if layout.width < 4.0 * grid.spacing:
        raise InvalidLayout(f"transition width {layout.width} is below four grid spacings")

    order = np.argsort(layout.starts)
    starts = [float(layout.starts[i]) % grid.period for i in order]
    if list(order) != list(range(len(levels))):
        raise InvalidLayout("transition starts must be given in increasing order")
    offsets = [s - starts[0] for s in starts]
    for a, b in zip(offsets, offsets[1:] + [grid.period]):
        if a + layout.width > b + 1e-12:
            raise InvalidLayout("transitions overlap")

    y = (grid.x - starts[0]) % grid.period
    log_tau = np.full(grid.num_points, math.log(levels[0]))
    for i, offset in enumerate(offsets):
        jump = math.log(levels[(i + 1) % len(levels)]) - math.log(levels[i])
        log_tau += jump * smooth_step((y - offset) / layout.width)
    return np.exp(log_tau)


# -------------------------------------------------------------------------
# Functionals
# -------------------------------------------------------------------------

def smallness_functional(seed: SeedData) -> float:
    """||d(t tau^a)||_{L^p}^(N+2) ||sigma||_{L^2}^(N-2) with p = p_sobolev."""
    geom = seed.geom
    N = geom.N_exp
    d_tau = covector_norm(geom, derivative(geom.grid, seed.tau_eff))
    lp = norms_and_integrals(geom, d_tau, p=seed.p_sobolev).Lp_norm
    sigma_l2 = math.sqrt(integrate(geom, tensor_norm_sq(geom, seed.sigma)))
    return lp ** (N + 2) * sigma_l2 ** (N - 2)


def inequality_chain(geom: ReducedGeometry, tau: np.ndarray, a: float, W: np.ndarray, k: float) -> Tuple[float, float]:
    """
    Both sides of the contraction estimate for the limit equation:
    int <-(1/2) L*L W, omega> dv and a sqrt(c') int (|LW| + k) |omega|^2 dv.
    """
    omega_x = derivative(geom.grid, np.log(tau))
    lhs = integrate(geom, -half_vector_laplacian(geom, W) * omega_x)
    LW = np.sqrt(tensor_norm_sq(geom, apply_L(geom, W)))
    rhs = a * math.sqrt(geom.kinetic_factor) * integrate(geom, (LW + k) * covector_norm(geom, omega_x) ** 2)
    return lhs, rhs


def limit_equation_residual(geom: ReducedGeometry, tau: np.ndarray, a: float, W: np.ndarray, k: float) -> LimitEquationReport:
    """
    Sup g-norm of -(1/2) L*L W - a sqrt(c') (|LW| + k) (d tau / tau)#.
    """
    omega_x = derivative(geom.grid, np.log(tau))
    LW = np.sqrt(tensor_norm_sq(geom, apply_L(geom, W)))
    field_ = -half_vector_laplacian(geom, W) - a * math.sqrt(geom.kinetic_factor) * (LW + k) * covector_to_vector(geom, omega_x)
    residual = float(np.max(np.abs(field_) * geom.profile_A))
    pairing, bound = inequality_chain(geom, tau, a, W, k)
    return LimitEquationReport(residual=residual, pairing=pairing, bound=bound)
