"""
Coupled conformal system.

    c_n Delta phi + R phi + ((n-1)/n) tau_e^2 phi^(N-1) = (|sigma + LW|^2 + k^2) phi^(-N-1)
    -(1/2) L*L W = ((n-1)/n) phi^N d tau_e

with tau_e = t * tau^a. Holds the vector solve with its conformal Killing
kernel check, the Picard map, full Newton on (phi, W), the blow-up
profile and the independent residual certification.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from models.geometry import ReducedGeometry
from models.reports import BRANCH_SMALL, SolveReport
from models.seed import LichProblem, SeedData
from services import lichnerowicz
from services.elliptic import stiffness_matrix, vector_laplacian_operator, vector_mass
from services.errors import ConformalKillingKernel, InvalidState, SingularOperator, SolveFailure
from services.geometry import (
    CENTERED_D1,
    apply_L,
    derivative,
    half_vector_laplacian,
    laplacian_apply,
    node_L_matrices,
    stencil_matrix,
    tensor_norm_sq,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_KERNEL_TOL = 1e-8
DEFAULT_DAMPING = 0.7
DEFAULT_NEWTON_MAX_ITER = 60
BLOWUP_FLOOR = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and iteration caps shared by the coupled solves of one run."""

    tol: float = DEFAULT_TOL
    kernel_tol: float = DEFAULT_KERNEL_TOL
    lich_tol: float = lichnerowicz.DEFAULT_TOL
    max_iter: int = DEFAULT_NEWTON_MAX_ITER
    picard_max_iter: int = 100
    damping: float = DEFAULT_DAMPING


# -------------------------------------------------------------------------
# Vector equation
# -------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _vector_factorization(geom: ReducedGeometry, kernel_tol: float):
    """Kernel check and Cholesky factor of K, cached per geometry."""
    K = vector_laplacian_operator(geom).matrix
    mass = vector_mass(geom)
    scale = float(np.max(np.sum(np.abs(K), axis=1) / mass))
    values, vectors = linalg.eigh(K, np.diag(mass), subset_by_index=[0, 0])
    smallest = float(values[0])
    threshold = kernel_tol * scale
    if smallest < threshold:
        direction = vectors[:, 0]
        direction = direction / direction[np.argmax(np.abs(direction))]
        logger.error(f"Conformal Killing kernel: smallest eigenvalue {smallest:.3e} < {threshold:.3e}")
        raise ConformalKillingKernel(smallest, threshold, direction)
    logger.debug(f"Vector Laplacian smallest eigenvalue {smallest:.6g} (threshold {threshold:.3e})")
    return linalg.cho_factor(K), smallest


def kernel_check(geom: ReducedGeometry, kernel_tol: float = DEFAULT_KERNEL_TOL) -> float:
    """
    Smallest eigenvalue of (1/2) L*L in the g(W, V) dv inner product.

    Raises:
        ConformalKillingKernel: eigenvalue below kernel_tol times the
            Gershgorin bound of the operator
    """
    return _vector_factorization(geom, kernel_tol)[1]


def vector_solve(geom: ReducedGeometry, rhs: np.ndarray, kernel_tol: float = DEFAULT_KERNEL_TOL) -> np.ndarray:
    """
    Solve -(1/2) L*L W = rhs.

    Args:
        geom: Kernel-free geometry
        rhs: x component of the covector source

    Returns:
        The component W(x) of W = W(x) d/dx

    Raises:
        ConformalKillingKernel: the discrete operator has a kernel
    """
    factor, _ = _vector_factorization(geom, kernel_tol)
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    return linalg.cho_solve(factor, -geom.vol * rhs)


def vector_source(seed: SeedData, phi: np.ndarray) -> np.ndarray:
    """((n-1)/n) phi^N d tau_e as a covector component."""
    geom = seed.geom
    return geom.kinetic_factor * phi ** geom.N_exp * derivative(geom.grid, seed.tau_eff)


def w_squared(seed: SeedData, W: np.ndarray) -> np.ndarray:
    """|sigma + LW|^2 + k^2."""
    return tensor_norm_sq(seed.geom, seed.sigma + apply_L(seed.geom, W)) + seed.k ** 2


def _lich_problem(seed: SeedData, W: np.ndarray) -> LichProblem:
    return LichProblem(geom=seed.geom, tau=seed.tau_eff, w=np.sqrt(w_squared(seed, W)), t=1.0)


# -------------------------------------------------------------------------
# Assembled system
# -------------------------------------------------------------------------

class CoupledSystem:
    """
    Assembled residual and Jacobian of the coupled system for one geometry.

    The unknown is u = [phi, W]. Residuals are vol-weighted:
    F1 = c_n S phi + vol (R phi + c' tau_e^2 phi^(N-1) - w^2 phi^(-N-1)),
    F2 = K W + vol c' phi^N tau_e'.
    """

    def __init__(self, geom: ReducedGeometry):
        self.geom = geom
        grid = geom.grid
        self.num_points = grid.num_points
        self.S = geom.c_n * stiffness_matrix(geom)
        self.K = vector_laplacian_operator(geom).matrix
        self.D = stencil_matrix(grid.num_points, CENTERED_D1[grid.derivative_order], 1.0 / grid.spacing)
        self.L = node_L_matrices(geom)
        self.weights = [1.0] + [float(b.dim) for b in geom.blocks]

    def split(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return u[:self.num_points], u[self.num_points:]

    def _tensor(self, seed: SeedData, W: np.ndarray) -> List[np.ndarray]:
        """Diagonal components of sigma + LW, node matrices."""
        sigma = seed.sigma
        comps = [sigma.xx] + list(sigma.blocks)
        return [c + P @ W for c, P in zip(comps, self.L)]

    def w_squared(self, seed: SeedData, W: np.ndarray) -> np.ndarray:
        geom = self.geom
        total = np.zeros(self.num_points)
        for m, T in zip(self.weights, self._tensor(seed, W)):
            total += m * T ** 2
        for block, s in zip(geom.blocks, seed.sigma.shear):
            if block.is_circle:
                total += 2.0 * s ** 2 / (geom.profile_A ** 2 * block.profile ** 2)
        return total + seed.k ** 2

    def residual(self, seed: SeedData, u: np.ndarray) -> np.ndarray:
        geom = self.geom
        N = geom.N_exp
        phi, W = self.split(u)
        tau_e = seed.tau_eff
        w2 = self.w_squared(seed, W)
        F1 = self.S @ phi + geom.vol * (
            geom.R * phi + geom.kinetic_factor * tau_e ** 2 * phi ** (N - 1) - w2 * phi ** (-N - 1)
        )
        F2 = self.K @ W + geom.vol * geom.kinetic_factor * phi ** N * (self.D @ tau_e)
        return np.concatenate([F1, F2])

    def jacobian(self, seed: SeedData, u: np.ndarray) -> np.ndarray:
        geom = self.geom
        N = geom.N_exp
        c = geom.kinetic_factor
        phi, W = self.split(u)
        tau_e = seed.tau_eff
        w2 = self.w_squared(seed, W)

        J11 = self.S + np.diag(geom.vol * (
            geom.R + (N - 1) * c * tau_e ** 2 * phi ** (N - 2) + (N + 1) * w2 * phi ** (-N - 2)
        ))
        dw2 = np.zeros((self.num_points, self.num_points))
        for m, T, P in zip(self.weights, self._tensor(seed, W), self.L):
            dw2 += 2.0 * m * T[:, None] * P
        J12 = -(geom.vol * phi ** (-N - 1))[:, None] * dw2
        J21 = np.diag(geom.vol * c * N * phi ** (N - 1) * (self.D @ tau_e))
        return np.block([[J11, J12], [J21, self.K]])

    def scales(self, seed: SeedData, u: np.ndarray) -> Tuple[float, float]:
        """Magnitudes of the terms of each equation, used to make residuals relative."""
        geom = self.geom
        N = geom.N_exp
        phi, W = self.split(u)
        tau_e = seed.tau_eff
        lich = (
            np.max(np.abs(geom.R * phi))
            + np.max(geom.kinetic_factor * tau_e ** 2 * phi ** (N - 1))
            + np.max(self.w_squared(seed, W) * phi ** (-N - 1))
        )
        vec = np.max(np.abs(geom.kinetic_factor * phi ** N * (self.D @ tau_e))) / np.min(geom.profile_A ** 2)
        return float(lich), float(vec) if vec > 0 else 1.0

    def relative_residuals(self, seed: SeedData, u: np.ndarray) -> Tuple[float, float]:
        geom = self.geom
        F1, F2 = self.split(self.residual(seed, u))
        s_lich, s_vec = self.scales(seed, u)
        res_lich = float(np.max(np.abs(F1 / geom.vol))) / s_lich
        res_vec = float(np.max(np.abs(F2 / (geom.vol * geom.profile_A ** 2)))) / s_vec
        return res_lich, res_vec


@lru_cache(maxsize=32)
def coupled_system(geom: ReducedGeometry) -> CoupledSystem:
    return CoupledSystem(geom)


# -------------------------------------------------------------------------
# Solvers
# -------------------------------------------------------------------------

def picard_solve(
    seed: SeedData,
    phi_init: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = 100,
    damping: float = DEFAULT_DAMPING,
    kernel_tol: float = DEFAULT_KERNEL_TOL,
    lich_tol: float = lichnerowicz.DEFAULT_TOL,
) -> SolveReport:
    """
    Fixed-point iteration W <- vector_solve(phi), phi <- Lichnerowicz(W).

    The update is geometrically damped, phi <- phi^(1-d) phi_new^d.

    Raises:
        SolveFailure: no convergence in max_iter, history attached
        ConformalKillingKernel: propagated from the vector solve
    """
    geom = seed.geom
    system = coupled_system(geom)
    phi = np.ones(geom.grid.num_points) if phi_init is None else np.asarray(phi_init, dtype=float).copy()
    W = vector_solve(geom, vector_source(seed, phi), kernel_tol)
    history = []

    for iteration in range(1, max_iter + 1):
        sol = lichnerowicz.solve(_lich_problem(seed, W), init=phi, rel_tol=lich_tol)
        phi = phi ** (1.0 - damping) * sol.phi ** damping
        W = vector_solve(geom, vector_source(seed, phi), kernel_tol)
        res_lich, res_vec = system.relative_residuals(seed, np.concatenate([phi, W]))
        history.append(res_lich)
        logger.debug(f"Picard {iteration}: res_lich={res_lich:.3e} res_vector={res_vec:.3e}")
        if res_lich <= tol and res_vec <= tol:
            return SolveReport(
                phi=phi, W=W, res_lich=res_lich, res_vector=res_vec, iterations=iteration,
                branch=BRANCH_SMALL, method="picard", parameter=seed.k, history=history,
            )
        if not np.isfinite(res_lich):
            break
    raise SolveFailure("picard", len(history), history[-1] if history else np.inf, history)


def _deflation(phi: np.ndarray, roots: Sequence[np.ndarray], shift: float = 1.0, power: float = 2.0):
    """Shifted deflation M(phi) = prod (1/||phi - r||^p + shift) and its gradient."""
    factor = 1.0
    grad = np.zeros_like(phi)
    for r in roots:
        diff = phi - r
        dist = float(np.sqrt(np.mean(diff ** 2)))
        term = dist ** (-power) + shift
        d_term = -power * dist ** (-power - 2) * diff / phi.size
        grad = grad * term + factor * d_term
        factor *= term
    return factor, grad


def newton_solve(
    seed: SeedData,
    phi_init: np.ndarray,
    W_init: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_NEWTON_MAX_ITER,
    kernel_tol: float = DEFAULT_KERNEL_TOL,
    deflate: Sequence[np.ndarray] = (),
    branch: str = BRANCH_SMALL,
) -> SolveReport:
    """
    Damped Newton on u = [phi, W] with a dense Jacobian.

    With `deflate`, known solutions phi_r are removed by shifted
    deflation so that Newton converges elsewhere.

    Raises:
        SolveFailure: no convergence or line search breakdown
    """
    geom = seed.geom
    kernel_check(geom, kernel_tol)
    system = coupled_system(geom)
    n_pts = geom.grid.num_points
    phi = np.asarray(phi_init, dtype=float).copy()
    if np.min(phi) <= 0:
        raise InvalidState("initial phi must be strictly positive")
    W = vector_solve(geom, vector_source(seed, phi), kernel_tol) if W_init is None else np.asarray(W_init, dtype=float)
    u = np.concatenate([phi, W])

    s_lich, s_vec = system.scales(seed, u)
    weights = np.concatenate([1.0 / (geom.vol * s_lich), 1.0 / (geom.vol * geom.profile_A ** 2 * s_vec)])

    def merit(v: np.ndarray) -> float:
        value = float(np.linalg.norm(weights * system.residual(seed, v)) / np.sqrt(v.size))
        if deflate:
            value *= _deflation(system.split(v)[0], deflate)[0]
        return value

    history = []
    current = merit(u)
    for iteration in range(1, max_iter + 1):
        res_lich, res_vec = system.relative_residuals(seed, u)
        history.append(max(res_lich, res_vec))
        logger.debug(f"Newton {iteration}: res_lich={res_lich:.3e} res_vector={res_vec:.3e}")
        if res_lich <= tol and res_vec <= tol:
            phi, W = system.split(u)
            return SolveReport(
                phi=phi.copy(), W=W.copy(), res_lich=res_lich, res_vector=res_vec, iterations=iteration - 1,
                branch=branch, method="newton", parameter=seed.k, history=history,
            )
        try:
            lu = linalg.lu_factor(system.jacobian(seed, u))
        except (linalg.LinAlgError, ValueError) as e:
            raise SolveFailure("newton", iteration, history[-1], history) from e
        step = linalg.lu_solve(lu, -system.residual(seed, u))
        if deflate:
            factor, grad = _deflation(system.split(u)[0], deflate)
            denominator = 1.0 - float(grad @ step[:n_pts]) / factor
            if abs(denominator) > 1e-14:
                step = step / denominator

        dphi = step[:n_pts]
        phi_now = u[:n_pts]
        shrink = dphi < 0
        lam = 1.0
        if np.any(shrink):
            lam = min(1.0, 0.8 * float(np.min(phi_now[shrink] / -dphi[shrink])))
        for _ in range(40):
            candidate = u + lam * step
            candidate_merit = merit(candidate)
            if np.isfinite(candidate_merit) and candidate_merit < current:
                break
            lam *= 0.5
        else:
            raise SolveFailure("newton", iteration, history[-1], history)
        u, current = candidate, candidate_merit
    raise SolveFailure("newton", max_iter, history[-1], history)


def blowup_init(seed: SeedData, W_guess: np.ndarray, k: float) -> np.ndarray:
    """
    Blow-up profile phi = (sqrt((n-1)/n) (|sigma + LW| + k) / (t tau^a))^(1/N).

    Floored at 1e-6 where the numerator vanishes.
    """
    geom = seed.geom
    norm = np.sqrt(tensor_norm_sq(geom, seed.sigma + apply_L(geom, W_guess)))
    numerator = np.sqrt(geom.kinetic_factor) * (norm + k)
    phi = np.full(geom.grid.num_points, BLOWUP_FLOOR)
    positive = numerator > 0
    phi[positive] = (numerator[positive] / seed.tau_eff[positive]) ** (1.0 / geom.N_exp)
    return np.maximum(phi, BLOWUP_FLOOR)


def certify_report(seed: SeedData, report: SolveReport) -> Tuple[float, float]:
    """
    Re-evaluate both relative residuals with the matrix-free operators.

    The solvers use assembled matrices; this pass uses laplacian_apply,
    apply_L and half_vector_laplacian instead.
    """
    geom = seed.geom
    N = geom.N_exp
    phi, W = report.phi, report.W
    system = coupled_system(geom)
    s_lich, s_vec = system.scales(seed, np.concatenate([phi, W]))

    w2 = w_squared(seed, W)
    tau_e = seed.tau_eff
    lich = (
        geom.c_n * laplacian_apply(geom, phi)
        + geom.R * phi
        + geom.kinetic_factor * tau_e ** 2 * phi ** (N - 1)
        - w2 * phi ** (-N - 1)
    )
    vec = half_vector_laplacian(geom, W) + vector_source(seed, phi) / geom.profile_A ** 2
    return float(np.max(np.abs(lich))) / s_lich, float(np.max(np.abs(vec))) / s_vec


def solve_coupled(
    seed: SeedData,
    phi_init: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    kernel_tol: float = DEFAULT_KERNEL_TOL,
    damping: float = DEFAULT_DAMPING,
    picard_max_iter: int = 100,
    lich_tol: float = lichnerowicz.DEFAULT_TOL,
    max_iter: int = DEFAULT_NEWTON_MAX_ITER,
) -> SolveReport:
    """Picard from phi_init, finished or rescued by full Newton."""
    try:
        return picard_solve(seed, phi_init, tol=tol, max_iter=picard_max_iter, damping=damping,
                            kernel_tol=kernel_tol, lich_tol=lich_tol)
    except (SolveFailure, SingularOperator) as e:
        logger.info(f"Picard failed ({e}); switching to Newton")
        start = np.ones(seed.geom.grid.num_points) if phi_init is None else phi_init
        return newton_solve(seed, start, tol=tol, max_iter=max_iter, kernel_tol=kernel_tol)


def solve_with(seed: SeedData, options: SolverOptions, phi_init: Optional[np.ndarray] = None) -> SolveReport:
    """solve_coupled with every knob taken from `options`."""
    return solve_coupled(seed, phi_init, tol=options.tol, kernel_tol=options.kernel_tol, damping=options.damping,
                         picard_max_iter=options.picard_max_iter, lich_tol=options.lich_tol,
                         max_iter=options.max_iter)
