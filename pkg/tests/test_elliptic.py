"""
Tests for the cyclic banded solver, the first eigenpair and conformal changes.
"""

import numpy as np
import pytest

from models.fields import ConformalTransform, ReducedTensor
from models.geometry import FiberBlock
from services.elliptic import (
    LinearOperator1D,
    conformal_geometry,
    conformal_laplacian,
    conformal_laplacian_eigen,
    conformal_push,
    positivize,
    solve_linear,
    stiffness_matrix,
)
from services.errors import InvalidTransform, NotYamabePositive, SingularOperator
from services.geometry import make_geometry, make_grid, profile_family


def _cyclic_operator(num_points: int, bandwidth: int, rng) -> LinearOperator1D:
    matrix = np.zeros((num_points, num_points))
    rows = np.arange(num_points)
    for offset in range(-bandwidth, bandwidth + 1):
        matrix[rows, (rows + offset) % num_points] = rng.normal(size=num_points)
    matrix += np.diag(np.full(num_points, 4.0 * bandwidth + 4.0))
    return LinearOperator1D(matrix=matrix, bandwidth=bandwidth)


# -------------------------------------------------------------------------
# Linear solves
# -------------------------------------------------------------------------

@pytest.mark.parametrize("bandwidth", [0, 1, 3])
def test_solve_linear_matches_dense(bandwidth, rng):
    op = _cyclic_operator(40, bandwidth, rng)
    rhs = rng.normal(size=40)
    assert np.allclose(solve_linear(op, rhs), np.linalg.solve(op.matrix, rhs), atol=1e-10)


def test_solve_linear_on_conformal_laplacian(round_product, rng):
    op = conformal_laplacian(round_product)
    rhs = rng.normal(size=round_product.grid.num_points)
    x = solve_linear(op, rhs)
    assert np.max(np.abs(op.apply(x) - rhs)) < 1e-9


def test_solve_linear_flat_cosine(flat3):
    # (c_n Delta + 1) u = cos x on flat T^3: u = cos x / 9, discrete symbol in place of 1
    h = flat3.grid.spacing
    f = np.cos(flat3.grid.x)
    op = conformal_laplacian(flat3, potential=np.ones(flat3.grid.num_points))
    u = solve_linear(op, flat3.vol * f)
    symbol = 4.0 * np.sin(h / 2) ** 2 / h ** 2
    assert np.allclose(u, f / (8.0 * symbol + 1.0), atol=1e-12)
    assert np.allclose(u, f / 9.0, atol=1e-3)


def test_singular_operator_reports_kernel(flat3):
    op = LinearOperator1D(matrix=stiffness_matrix(flat3), bandwidth=1, symmetric=True)
    with pytest.raises(SingularOperator) as info:
        solve_linear(op, np.ones(flat3.grid.num_points))
    direction = info.value.kernel_direction
    assert np.allclose(direction, direction[0])


def test_asymmetric_operator_flagged_symmetric():
    matrix = np.eye(20)
    matrix[0, 1] = 1.0
    with pytest.raises(ValueError):
        LinearOperator1D(matrix=matrix, bandwidth=1, symmetric=True)


# -------------------------------------------------------------------------
# Eigenpair
# -------------------------------------------------------------------------

def test_eigen_on_round_product(round_product):
    eigen = conformal_laplacian_eigen(round_product)
    assert eigen.lambda1 == pytest.approx(2.0, rel=1e-10)
    assert np.allclose(eigen.u, 1.0)


def test_eigen_flat_is_zero(flat3):
    eigen = conformal_laplacian_eigen(flat3)
    assert abs(eigen.lambda1) < 1e-10


def test_eigenfunction_positive_on_warped(warped):
    eigen = conformal_laplacian_eigen(warped)
    assert np.min(eigen.u) > 0
    assert np.max(eigen.u) == pytest.approx(1.0)
    op = conformal_laplacian(warped)
    residual = op.apply(eigen.u) / warped.vol - eigen.lambda1 * eigen.u
    assert np.max(np.abs(residual)) < 1e-8


# -------------------------------------------------------------------------
# Conformal changes
# -------------------------------------------------------------------------

def test_positivize_flat_fails(flat3):
    with pytest.raises(NotYamabePositive):
        positivize(flat3)


def test_positivize_gives_positive_curvature(grid):
    # strongly warped circle: R changes sign
    ones = np.ones(grid.num_points)
    blocks = [
        FiberBlock(profile=profile_family(grid, "cosine_exp", amplitude=1.2), dim=1),
        FiberBlock(profile=ones, dim=2, curvature=1),
    ]
    geom = make_geometry(grid, ones, blocks)
    assert np.min(geom.R) < 0
    geom_hat, transform = positivize(geom)
    assert np.min(geom_hat.R) > 0
    assert transform.min_theta > 0


def _positivize_identity_error(num_points: int) -> float:
    grid = make_grid(num_points)
    ones = np.ones(num_points)
    blocks = [
        FiberBlock(profile=profile_family(grid, "cosine_exp", amplitude=1.2), dim=1),
        FiberBlock(profile=ones, dim=2, curvature=1),
    ]
    geom = make_geometry(grid, ones, blocks)
    geom_hat, transform = positivize(geom)
    lambda1 = conformal_laplacian_eigen(geom).lambda1
    closed_form = lambda1 * transform.theta ** (2.0 - geom.N_exp)
    return float(np.max(np.abs(geom_hat.R - closed_form)) / np.max(closed_form))


def test_positivized_curvature_matches_eigen_identity():
    errors = [_positivize_identity_error(n) for n in (128, 256, 512)]
    assert errors[-1] < 1e-2
    assert errors[1] / errors[2] > 3.0


def test_conformal_geometry_round_trip(warped):
    theta = profile_family(warped.grid, "cosine", amplitude=0.2)
    transform = ConformalTransform(theta=theta)
    back = conformal_geometry(conformal_geometry(warped, transform), transform.inverse())
    assert np.allclose(back.profile_A, warped.profile_A)
    assert np.allclose(back.R, warped.R, atol=1e-10)


def test_conformal_push_weights(warped):
    theta = profile_family(warped.grid, "cosine", amplitude=0.2)
    transform = ConformalTransform(theta=theta)
    num_points = warped.grid.num_points
    sigma = ReducedTensor(xx=np.ones(num_points), blocks=[np.ones(num_points), -np.ones(num_points)],
                          shear=[np.ones(num_points), np.zeros(num_points)])
    pushed = conformal_push(warped, transform, w=np.ones(num_points), tau=np.full(num_points, 2.0), sigma=sigma)
    N = warped.N_exp
    assert np.allclose(pushed["w"], theta ** (-N))
    assert np.allclose(pushed["tau"], 2.0)
    assert np.allclose(pushed["sigma"].xx, theta ** (-N))
    assert np.allclose(pushed["sigma"].shear[0], theta ** -2.0)


def test_conformal_push_rejects_non_positive(warped):
    theta = profile_family(warped.grid, "harmonic")
    with pytest.raises(InvalidTransform):
        conformal_push(warped, ConformalTransform(theta=theta), w=np.ones(warped.grid.num_points))
