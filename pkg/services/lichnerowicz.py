"""
Lichnerowicz service.
Solves c_n Delta phi + R phi + ((n-1)/n) t tau^2 phi^(N-1) = w^2 phi^(-N-1)
with constant brackets, damped Newton, a monotone fallback and the
solution-map diagnostics.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from models.fields import ConformalTransform
from models.reports import Bracket, CovarianceReport, DerivativeCheckReport, EnergyReport, LichSolution
from models.seed import LichProblem
from services.elliptic import (
    LinearOperator1D,
    conformal_geometry,
    conformal_push,
    positivize,
    scalar_bandwidth,
    solve_linear,
    stiffness_matrix,
)
from services.errors import InvalidState, NoBracket, SingularOperator, SolveFailure
from services.geometry import integrate, laplacian_apply

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
DEFAULT_MONOTONE_MAX_ITER = 5000
SUBSOLUTION_SAFETY = 0.9


# -------------------------------------------------------------------------
# Residual and bracket
# -------------------------------------------------------------------------

def _check_phi(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)) or np.min(phi) <= 0:
        raise InvalidState("phi must be finite and strictly positive")
    return phi


def nonlinearity(prob: LichProblem, phi: np.ndarray) -> np.ndarray:
    """R phi + ((n-1)/n) t tau^2 phi^(N-1) - w^2 phi^(-N-1)."""
    N = prob.geom.N_exp
    return prob.geom.R * phi + prob.tau_term * phi ** (N - 1) - prob.w_sq * phi ** (-N - 1)


def nonlinearity_derivative(prob: LichProblem, phi: np.ndarray) -> np.ndarray:
    N = prob.geom.N_exp
    return (
        prob.geom.R
        + (N - 1) * prob.tau_term * phi ** (N - 2)
        + (N + 1) * prob.w_sq * phi ** (-N - 2)
    )


def residual(prob: LichProblem, phi: np.ndarray) -> np.ndarray:
    """
    Pointwise residual of the Lichnerowicz equation.

    Raises:
        InvalidState: phi not strictly positive
    """
    phi = _check_phi(phi)
    return prob.geom.c_n * laplacian_apply(prob.geom, phi) + nonlinearity(prob, phi)


def tolerance(prob: LichProblem, phi: np.ndarray, rel_tol: float = DEFAULT_TOL) -> float:
    """rel_tol * (||R|| ||phi|| + ||w||^2), all sup norms."""
    scale = float(np.max(np.abs(prob.geom.R)) * np.max(np.abs(phi)) + np.max(prob.w_sq))
    return rel_tol * scale


def bracket(prob: LichProblem) -> Bracket:
    """
    Constant sub/supersolution pair.

    phi_plus = max(1, (max w^2 / min R)^(1/(N+2))) and
    phi_minus = 0.9 (min w^2 / (max R + ((n-1)/n) t max tau^2 phi_plus^(N-2)))^(1/(N+2)),
    halved until the pointwise sign check passes.

    Raises:
        NoBracket: min R <= 0, w vanishing somewhere, or no verified phi_minus
    """
    geom = prob.geom
    N = geom.N_exp
    min_R = float(np.min(geom.R))
    if min_R <= 0:
        raise NoBracket(f"scalar curvature is not positive (min R = {min_R:.3e})")
    min_w_sq = float(np.min(prob.w_sq))
    if min_w_sq <= 0:
        raise NoBracket("w vanishes at some grid point, no positive constant subsolution")

    phi_plus = max(1.0, (float(np.max(prob.w_sq)) / min_R) ** (1.0 / (N + 2)))
    denominator = float(np.max(geom.R)) + float(np.max(prob.tau_term)) * phi_plus ** (N - 2)
    phi_minus = min(phi_plus, SUBSOLUTION_SAFETY * (min_w_sq / denominator) ** (1.0 / (N + 2)))

    ones = np.ones(geom.grid.num_points)
    slack = 1e-13 * (float(np.max(np.abs(geom.R))) * phi_plus + float(np.max(prob.w_sq)))
    if np.min(nonlinearity(prob, phi_plus * ones)) < -slack:
        raise NoBracket("supersolution check failed")
    for _ in range(60):
        if np.max(nonlinearity(prob, phi_minus * ones)) <= slack:
            logger.debug(f"Bracket: phi_minus={phi_minus:.6g}, phi_plus={phi_plus:.6g}")
            return Bracket(phi_minus=phi_minus, phi_plus=phi_plus)
        phi_minus *= 0.5
    raise NoBracket("subsolution check failed after shrinking")


# -------------------------------------------------------------------------
# Newton
# -------------------------------------------------------------------------

class _Discretization:
    """Assembled pieces shared by the Newton and monotone solvers."""

    def __init__(self, prob: LichProblem):
        self.prob = prob
        self.geom = prob.geom
        self.S = prob.geom.c_n * stiffness_matrix(prob.geom)
        self.bandwidth = scalar_bandwidth(prob.geom)

    def F(self, phi: np.ndarray) -> np.ndarray:
        """vol-weighted residual."""
        return self.S @ phi + self.geom.vol * nonlinearity(self.prob, phi)

    def jacobian(self, phi: np.ndarray) -> LinearOperator1D:
        diag = self.geom.vol * nonlinearity_derivative(self.prob, phi)
        return LinearOperator1D(matrix=self.S + np.diag(diag), bandwidth=self.bandwidth, symmetric=True)

    def merit(self, phi: np.ndarray) -> float:
        F = self.F(phi)
        return float(np.sqrt(np.sum(F ** 2 / self.geom.vol)))

    def sup_residual(self, phi: np.ndarray) -> float:
        return float(np.max(np.abs(self.F(phi) / self.geom.vol)))


def _newton(
    disc: _Discretization,
    phi: np.ndarray,
    lower: float,
    upper: float,
    tol: float,
    max_iter: int,
) -> LichSolution:
    """Damped Newton with step halving on the vol-weighted L2 merit and clipping to [lower, upper]."""
    phi = np.clip(phi, lower, upper)
    history = []
    merit = disc.merit(phi)
    for iteration in range(1, max_iter + 1):
        res = disc.sup_residual(phi)
        history.append(res)
        if res <= tol:
            step = solve_linear(disc.jacobian(phi), -disc.F(phi), check=False)
            polished = np.clip(phi + step, lower, upper)
            if disc.sup_residual(polished) < res:
                phi = polished
            return LichSolution(phi=phi, iterations=iteration - 1, residual_norm=disc.sup_residual(phi))

        step = solve_linear(disc.jacobian(phi), -disc.F(phi), check=False)
        lam = 1.0
        for _ in range(40):
            candidate = np.clip(phi + lam * step, lower, upper)
            candidate_merit = disc.merit(candidate)
            if candidate_merit < merit:
                break
            lam *= 0.5
        else:
            raise SolveFailure("newton", iteration, res, history)
        phi, merit = candidate, candidate_merit
        logger.debug(f"Newton {iteration}: residual={res:.3e} step={lam:.3g}")

    raise SolveFailure("newton", max_iter, disc.sup_residual(phi), history)


def _default_init(br: Optional[Bracket], num_points: int) -> np.ndarray:
    if br is None:
        return np.ones(num_points)
    return np.full(num_points, np.sqrt(br.phi_minus * br.phi_plus))


def solve(
    prob: LichProblem,
    init: Optional[np.ndarray] = None,
    rel_tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    monotone_max_iter: int = DEFAULT_MONOTONE_MAX_ITER,
) -> LichSolution:
    """
    Solve the Lichnerowicz equation (Yamabe-positive case, w != 0).

    On a geometry with min R <= 0 the problem is first moved to the
    positivized geometry, solved there and mapped back by phi = theta phi_hat,
    then polished on the original grid.

    Args:
        prob: Problem to solve
        init: Optional positive initial guess
        rel_tol: Relative tolerance, scaled by ||R|| ||phi|| + ||w||^2
        max_iter: Newton iteration cap
        monotone_max_iter: Iteration cap of the monotone fallback

    Raises:
        SolveFailure: both Newton and the monotone scheme failed
        NotYamabePositive: positivization impossible
    """
    geom = prob.geom
    if init is not None:
        init = _check_phi(init)

    if np.min(geom.R) <= 0:
        geom_hat, transform = positivize(geom)
        pushed = conformal_push(geom, transform, w=prob.w)
        prob_hat = LichProblem(geom=geom_hat, tau=prob.tau, w=pushed["w"], t=prob.t)
        init_hat = None if init is None else init / transform.theta
        sol_hat = solve(prob_hat, init_hat, rel_tol, max_iter, monotone_max_iter)
        phi = transform.theta * sol_hat.phi
        disc = _Discretization(prob)
        polished = _newton(disc, phi, 1e-3 * float(np.min(phi)), np.inf, tolerance(prob, phi, rel_tol), max_iter)
        polished.method = f"positivized+{sol_hat.method}"
        polished.iterations += sol_hat.iterations
        return polished

    try:
        br = bracket(prob)
        lower, upper = 0.5 * br.phi_minus, 2.0 * br.phi_plus
    except NoBracket as e:
        logger.warning(f"{e}; Newton runs without bracket clipping")
        br = None
        lower, upper = 1e-12, np.inf

    disc = _Discretization(prob)
    phi0 = _default_init(br, geom.grid.num_points) if init is None else init
    tol = tolerance(prob, np.clip(phi0, lower, upper), rel_tol)
    try:
        sol = _newton(disc, phi0, lower, upper, tol, max_iter)
        sol.residual_norm = disc.sup_residual(sol.phi)
        if sol.residual_norm > tolerance(prob, sol.phi, rel_tol):
            sol = _newton(disc, sol.phi, lower, upper, tolerance(prob, sol.phi, rel_tol), max_iter)
        sol.bracket = br
        return sol
    except (SolveFailure, SingularOperator) as e:
        if br is None:
            raise
        logger.info(f"Newton failed ({e}); falling back to monotone iteration")
    sol = monotone_iterate(prob, br, rel_tol=rel_tol, max_iter=monotone_max_iter)
    sol.bracket = br
    return sol


# -------------------------------------------------------------------------
# Monotone iteration
# -------------------------------------------------------------------------

def monotone_iterate(
    prob: LichProblem,
    br: Bracket,
    start: Optional[np.ndarray] = None,
    rel_tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MONOTONE_MAX_ITER,
) -> LichSolution:
    """
    Sub/supersolution iteration (c_n Delta + m) phi_{k+1} = m phi_k - f(phi_k).

    m is the largest derivative of the nonlinearity over the bracket, so
    the sequence started at phi_plus decreases pointwise. Monotonicity is
    guaranteed for derivative_order 2, where the discrete Laplacian has
    the M-matrix sign pattern.

    Raises:
        SolveFailure: non-monotone step or no convergence
    """
    geom = prob.geom
    N = geom.N_exp
    phi = np.full(geom.grid.num_points, br.phi_plus) if start is None else _check_phi(start).copy()
    m = float(np.max(
        geom.R
        + (N - 1) * prob.tau_term * br.phi_plus ** (N - 2)
        + (N + 1) * prob.w_sq * br.phi_minus ** (-N - 2)
    ))
    disc = _Discretization(prob)
    factor = linalg.cho_factor(disc.S + np.diag(geom.vol * m))

    history = []
    for iteration in range(max_iter + 1):
        res = disc.sup_residual(phi)
        history.append(res)
        if res <= tolerance(prob, phi, rel_tol):
            logger.debug(f"Monotone iteration converged in {iteration} steps")
            return LichSolution(phi=phi, iterations=iteration, residual_norm=res, method="monotone")
        if iteration == max_iter:
            break
        rhs = geom.vol * (m * phi - nonlinearity(prob, phi))
        phi_next = linalg.cho_solve(factor, rhs)
        if np.max(phi_next - phi) > 1e-12 * max(1.0, br.phi_plus):
            raise SolveFailure("monotone", iteration + 1, res, history)
        phi = phi_next
    raise SolveFailure("monotone", max_iter, history[-1], history)


# -------------------------------------------------------------------------
# Diagnostics
# -------------------------------------------------------------------------

def linearized_response(prob: LichProblem, phi: np.ndarray, delta_w: np.ndarray) -> np.ndarray:
    """Exact derivative of the discrete solution map w -> phi in direction delta_w."""
    N = prob.geom.N_exp
    disc = _Discretization(prob)
    rhs = prob.geom.vol * 2.0 * prob.w * delta_w * phi ** (-N - 1)
    return solve_linear(disc.jacobian(phi), rhs)


def solution_map_derivative_check(
    prob: LichProblem,
    delta_w: np.ndarray,
    eps: Sequence[float] = (0.1, 0.05, 0.025, 0.0125),
) -> DerivativeCheckReport:
    """
    Central differences of w -> phi against the linearized solve.

    The slope of log(error) against log(eps) should be close to 2; the
    reported limit is the Richardson extrapolation of the two smallest eps.
    """
    delta_w = np.broadcast_to(np.asarray(delta_w, dtype=float), prob.w.shape)
    base = solve(prob)
    reference = linearized_response(prob, base.phi, delta_w)

    estimates = []
    for e in eps:
        phi_plus = solve(prob.with_w(prob.w + e * delta_w), init=base.phi).phi
        phi_minus = solve(prob.with_w(prob.w - e * delta_w), init=base.phi).phi
        estimates.append((phi_plus - phi_minus) / (2.0 * e))
    differences = [float(np.max(np.abs(d - reference))) for d in estimates]

    positive = [(e, d) for e, d in zip(eps, differences) if d > 0]
    if len(positive) >= 2:
        slope = float(np.polyfit(np.log([p[0] for p in positive]), np.log([p[1] for p in positive]), 1)[0])
    else:
        slope = float("nan")

    ratio = (eps[-2] / eps[-1]) ** 2
    limit = (ratio * estimates[-1] - estimates[-2]) / (ratio - 1.0) if len(estimates) > 1 else estimates[-1]
    logger.info(f"Solution-map derivative slope {slope:.3f}")
    return DerivativeCheckReport(eps=list(eps), differences=differences, slope=slope, limit=limit, reference=reference)


def conformal_covariance_check(prob: LichProblem, transform: ConformalTransform) -> CovarianceReport:
    """Solve on g and on theta^(N-2) g and compare phi_hat with phi / theta."""
    sol = solve(prob)
    geom_hat = conformal_geometry(prob.geom, transform)
    pushed = conformal_push(prob.geom, transform, w=prob.w)
    prob_hat = LichProblem(geom=geom_hat, tau=prob.tau, w=pushed["w"], t=prob.t)
    sol_hat = solve(prob_hat)
    expected = sol.phi / transform.theta
    error = float(np.max(np.abs(sol_hat.phi - expected)) / np.max(np.abs(expected)))
    logger.info(f"Conformal covariance relative error {error:.3e}")
    return CovarianceReport(relative_error=error, phi=sol.phi, phi_hat=sol_hat.phi)


def energy_identity(prob: LichProblem, phi: np.ndarray) -> EnergyReport:
    """Integrated equation: int (R phi + c' t tau^2 phi^(N-1)) dv = int w^2 phi^(-N-1) dv."""
    phi = _check_phi(phi)
    N = prob.geom.N_exp
    lhs = integrate(prob.geom, prob.geom.R * phi + prob.tau_term * phi ** (N - 1))
    rhs = integrate(prob.geom, prob.w_sq * phi ** (-N - 1))
    return EnergyReport(lhs=lhs, rhs=rhs)
