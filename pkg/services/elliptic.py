"""
Elliptic service.
Cyclic banded operators and their direct solver, the first eigenpair of
the conformal Laplacian, positivization and conformal transport of data.

Operators are assembled in vol-weighted form: the matrix of
vol * (c_n Delta + V) is symmetric, and M = diag(vol) is the mass matrix.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from models.fields import ConformalTransform, ReducedTensor
from models.geometry import FiberBlock, ReducedGeometry
from models.reports import EigenPair
from services.errors import EigenFailure, InvalidTransform, NotYamabePositive, SingularOperator
from services.geometry import (
    STAGGERED_D1,
    STAGGERED_MEAN,
    kappa_half,
    make_geometry,
    staggered_L_coefficients,
    stencil_matrix,
    vol_half,
)

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-13
RESIDUAL_TOL = 1e-11
YAMABE_TOL = 1e-10


@dataclass
class LinearOperator1D:
    """
    Cyclic banded matrix over a periodic grid.

    Entries are non-zero only within cyclic distance `bandwidth` of the
    diagonal. The symmetric flag is checked on construction.
    """

    matrix: np.ndarray
    bandwidth: int
    symmetric: bool = False
    _pivot_checked: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        n = self.num_points
        if self.matrix.shape != (n, n):
            raise ValueError(f"operator must be square, got {self.matrix.shape}")
        if 2 * self.bandwidth + 1 > n:
            raise ValueError(f"bandwidth {self.bandwidth} too large for {n} points")
        if self.symmetric:
            asym = float(np.max(np.abs(self.matrix - self.matrix.T)))
            if asym > 1e-12 * max(self.scale, 1.0):
                raise ValueError(f"operator flagged symmetric but asymmetry is {asym:.3e}")

    @property
    def num_points(self) -> int:
        return self.matrix.shape[0]

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.matrix)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def banded(self) -> np.ndarray:
        """Non-cyclic band in solve_banded layout: ab[b + i - j, j] = a[i, j]."""
        b = self.bandwidth
        n = self.num_points
        ab = np.zeros((2 * b + 1, n))
        for offset in range(-b, b + 1):
            diagonal = np.diagonal(self.matrix, offset)
            if offset >= 0:
                ab[b - offset, offset:] = diagonal
            else:
                ab[b - offset, :n + offset] = diagonal
        return ab

    def corners(self) -> Tuple[np.ndarray, np.ndarray]:
        """Rows holding wrap-around entries and those rows with the band removed."""
        b = self.bandwidth
        n = self.num_points
        rows = np.concatenate([np.arange(b), np.arange(n - b, n)])
        corner_rows = np.zeros((rows.size, n))
        corner_rows[:b, n - b:] = self.matrix[:b, n - b:]
        corner_rows[b:, :b] = self.matrix[n - b:, :b]
        return rows, corner_rows

    def __add__(self, other: "LinearOperator1D") -> "LinearOperator1D":
        return LinearOperator1D(
            matrix=self.matrix + other.matrix,
            bandwidth=max(self.bandwidth, other.bandwidth),
            symmetric=self.symmetric and other.symmetric,
        )

    @classmethod
    def diagonal(cls, values: np.ndarray) -> "LinearOperator1D":
        return cls(matrix=np.diag(values), bandwidth=0, symmetric=True)


# -------------------------------------------------------------------------
# Direct solver
# -------------------------------------------------------------------------

def _kernel_error(op: LinearOperator1D) -> SingularOperator:
    _, s, vh = linalg.svd(op.matrix)
    direction = vh[-1]
    direction = direction / direction[np.argmax(np.abs(direction))]
    return SingularOperator(float(s[-1]), float(s[0]), direction)


def _check_pivots(op: LinearOperator1D) -> None:
    if op._pivot_checked:
        return
    lu, _ = linalg.lu_factor(op.matrix, check_finite=False)
    smallest = float(np.min(np.abs(np.diag(lu))))
    if smallest < PIVOT_TOL * op.scale * op.num_points:
        logger.debug(f"Pivot {smallest:.3e} below threshold, operator singular")
        raise _kernel_error(op)
    op._pivot_checked = True


def solve_linear(op: LinearOperator1D, rhs: np.ndarray, check: bool = True) -> np.ndarray:
    """
    Solve op x = rhs for a cyclic banded op.

    The band is solved with solve_banded and the wrap-around corners are
    removed with a Woodbury correction of size 2 * bandwidth.

    Args:
        op: Operator assembled on the grid of rhs
        rhs: Right-hand side, one value per node
        check: Verify the LU pivots once per operator before solving

    Raises:
        SingularOperator: small pivot or failed residual check; carries
            the SVD estimate of the kernel direction
    """
    rhs = np.asarray(rhs, dtype=float)
    if check:
        _check_pivots(op)

    b = op.bandwidth
    try:
        if b == 0:
            x = rhs / np.diag(op.matrix)
        else:
            ab = op.banded()
            y = linalg.solve_banded((b, b), ab, rhs)
            rows, corner_rows = op.corners()
            selector = np.zeros((op.num_points, rows.size))
            selector[rows, np.arange(rows.size)] = 1.0
            z = linalg.solve_banded((b, b), ab, selector)
            capacitance = np.eye(rows.size) + corner_rows @ z
            x = y - z @ linalg.solve(capacitance, corner_rows @ y)
    except (linalg.LinAlgError, ValueError) as e:
        logger.debug(f"Banded solve failed: {e}")
        raise _kernel_error(op)

    residual = float(np.max(np.abs(op.apply(x) - rhs)))
    bound = RESIDUAL_TOL * (float(np.max(np.abs(rhs))) + op.scale * float(np.max(np.abs(x))))
    if not np.all(np.isfinite(x)) or residual > bound:
        logger.debug(f"Residual check failed ({residual:.3e} > {bound:.3e})")
        raise _kernel_error(op)
    return x


# -------------------------------------------------------------------------
# Assembly
# -------------------------------------------------------------------------

def stiffness_matrix(geom: ReducedGeometry) -> np.ndarray:
    """G^T diag(kappa_half) G, the matrix of vol * Delta."""
    grid = geom.grid
    G = stencil_matrix(grid.num_points, STAGGERED_D1[grid.derivative_order], 1.0 / grid.spacing)
    S = G.T @ (kappa_half(geom)[:, None] * G)
    return 0.5 * (S + S.T)


def scalar_bandwidth(geom: ReducedGeometry) -> int:
    return 1 if geom.grid.derivative_order == 2 else 3


def conformal_laplacian(geom: ReducedGeometry, potential: Optional[np.ndarray] = None) -> LinearOperator1D:
    """vol * (c_n Delta + potential); the potential defaults to R."""
    V = geom.R if potential is None else potential
    return LinearOperator1D(
        matrix=geom.c_n * stiffness_matrix(geom) + np.diag(geom.vol * V),
        bandwidth=scalar_bandwidth(geom),
        symmetric=True,
    )


def vector_laplacian_operator(geom: ReducedGeometry) -> LinearOperator1D:
    """
    K = (1/2) sum_c m_c P_c^T diag(vol_half) P_c.

    P_c is the staggered discrete L, so K W = vol A^2 (1/2) L*L W and
    W^T K V * spacing is the discrete (1/2) integral of <LW, LV>.
    """
    grid = geom.grid
    n_pts = grid.num_points
    G = stencil_matrix(n_pts, STAGGERED_D1[grid.derivative_order], 1.0 / grid.spacing)
    I = stencil_matrix(n_pts, STAGGERED_MEAN[grid.derivative_order])
    weight = vol_half(geom)
    K = np.zeros((n_pts, n_pts))
    for m, u, v in staggered_L_coefficients(geom):
        P = u[:, None] * G + v[:, None] * I
        K += 0.5 * m * P.T @ (weight[:, None] * P)
    return LinearOperator1D(
        matrix=0.5 * (K + K.T),
        bandwidth=scalar_bandwidth(geom),
        symmetric=True,
    )


def vector_mass(geom: ReducedGeometry) -> np.ndarray:
    """Diagonal of the mass matrix for g(W, V) dv."""
    return geom.vol * geom.profile_A ** 2


# -------------------------------------------------------------------------
# First eigenpair
# -------------------------------------------------------------------------

def conformal_laplacian_eigen(geom: ReducedGeometry, tol: float = 1e-13, max_iter: int = 500) -> EigenPair:
    """
    Smallest eigenvalue of c_n Delta + R with a positive eigenfunction.

    Fixed-shift inverse iteration with shift min R - 1, which keeps the
    shifted operator positive definite. Iterates are projected onto
    u >= 0 and normalized to ||u||_inf = 1.

    Raises:
        EigenFailure: no convergence within max_iter
    """
    op = conformal_laplacian(geom)
    mass = geom.vol
    shift = float(np.min(geom.R)) - 1.0
    shifted = LinearOperator1D(
        matrix=op.matrix - shift * np.diag(mass),
        bandwidth=op.bandwidth,
        symmetric=True,
    )

    u = np.ones(geom.grid.num_points)
    lam = float(u @ op.apply(u) / (u @ (mass * u)))
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        u = np.abs(solve_linear(shifted, mass * u))
        u = u / np.max(u)
        lam_new = float(u @ op.apply(u) / (u @ (mass * u)))
        residual = float(np.max(np.abs(op.apply(u) / mass - lam_new * u)))
        converged = abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)) and residual <= 1e-9
        lam = lam_new
        logger.debug(f"Inverse iteration {iteration}: lambda1={lam:.15g} residual={residual:.3e}")
        if converged:
            return EigenPair(lambda1=lam, u=u, iterations=iteration, residual=residual)
    raise EigenFailure(max_iter, residual)


# -------------------------------------------------------------------------
# Conformal changes
# -------------------------------------------------------------------------

def _check_transform(transform: ConformalTransform) -> np.ndarray:
    theta = np.asarray(transform.theta, dtype=float)
    if not np.all(np.isfinite(theta)) or np.min(theta) <= 0:
        raise InvalidTransform("conformal factor must be finite and strictly positive")
    return theta


def conformal_geometry(geom: ReducedGeometry, transform: ConformalTransform) -> ReducedGeometry:
    """The geometry theta^(N-2) g, with curvature recomputed from the profiles."""
    theta = _check_transform(transform)
    factor = theta ** ((geom.N_exp - 2.0) / 2.0)
    blocks = [FiberBlock(profile=b.profile * factor, dim=b.dim, curvature=b.curvature) for b in geom.blocks]
    return make_geometry(geom.grid, geom.profile_A * factor, blocks)


def positivize(geom: ReducedGeometry) -> Tuple[ReducedGeometry, ConformalTransform]:
    """
    Conformal change to positive scalar curvature.

    With u the first eigenfunction, g_hat = u^(N-2) g has
    R_hat = lambda1 u^(2-N) > 0.

    Raises:
        NotYamabePositive: lambda1 <= 1e-10
    """
    eigen = conformal_laplacian_eigen(geom)
    if eigen.lambda1 <= YAMABE_TOL:
        raise NotYamabePositive(eigen.lambda1)
    transform = ConformalTransform(theta=eigen.u)
    geom_hat = conformal_geometry(geom, transform)
    logger.info(
        f"Positivized geometry: lambda1={eigen.lambda1:.6g}, "
        f"min R {np.min(geom.R):.4g} -> {np.min(geom_hat.R):.4g}"
    )
    return geom_hat, transform


def conformal_push(
    geom: ReducedGeometry,
    transform: ConformalTransform,
    w: Optional[np.ndarray] = None,
    tau: Optional[np.ndarray] = None,
    sigma: Optional[ReducedTensor] = None,
) -> Dict[str, object]:
    """
    Transport data to theta^(N-2) g.

    w -> theta^-N w and tau -> tau. For sigma the lower-index weight is
    theta^-2, so mixed components scale by theta^-N and the lower-index
    shear by theta^-2. Omitted entries come back as None.

    Raises:
        InvalidTransform: non-positive theta
    """
    theta = _check_transform(transform)
    N = geom.N_exp
    pushed = {"w": None, "tau": None, "sigma": None}
    if w is not None:
        pushed["w"] = theta ** (-N) * w
    if tau is not None:
        pushed["tau"] = np.array(tau, dtype=float, copy=True)
    if sigma is not None:
        pushed["sigma"] = sigma.scaled(theta ** (-N), theta ** (-2.0))
    return pushed
