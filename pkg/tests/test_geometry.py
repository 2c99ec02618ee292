"""
Tests for grids, curvature and the discrete operators of services.geometry.
"""

import numpy as np
import pytest
import sympy as sp

from models.fields import TTSpec
from models.geometry import FiberBlock
from services.elliptic import stiffness_matrix, vector_laplacian_operator
from services.errors import InvalidExponent, InvalidGrid, InvalidMetric, InvalidTT
from services.geometry import (
    apply_L,
    circle_geometry,
    conformal_killing_energy,
    derivative,
    half_vector_laplacian,
    laplacian_apply,
    make_geometry,
    make_grid,
    make_tt_tensor,
    norms_and_integrals,
    profile_family,
    scalar_curvature,
    spectral_derivative,
    tensor_norm_sq,
    tt_residual,
    vector_inner,
)


def _conformally_flat_curvature(n: int, amplitude: float):
    """Exact R of u^(4/(n-2)) times the flat metric, u = exp(amplitude cos x)."""
    x = sp.symbols("x")
    u = sp.exp(amplitude * sp.cos(x))
    c_n = sp.Rational(4 * (n - 1), n - 2)
    R = -c_n * sp.diff(u, x, 2) * u ** sp.Rational(-(n + 2), n - 2)
    profile = u ** sp.Rational(2, n - 2)
    return sp.lambdify(x, R, "numpy"), sp.lambdify(x, profile, "numpy")


# -------------------------------------------------------------------------
# Grids and stencils
# -------------------------------------------------------------------------

def test_make_grid_rejects_bad_input():
    with pytest.raises(InvalidGrid):
        make_grid(8)
    with pytest.raises(InvalidGrid):
        make_grid(64, period=0.0)
    with pytest.raises(InvalidGrid):
        make_grid(64, derivative_order=3)


def test_grid_coordinates():
    grid = make_grid(64, period=3.0)
    assert grid.spacing == pytest.approx(3.0 / 64)
    assert grid.x[0] == 0.0
    assert grid.x_half[0] == pytest.approx(grid.spacing / 2)


def test_centered_derivative_orders():
    errors = {}
    for order in (2, 4):
        grid = make_grid(64, derivative_order=order)
        errors[order] = np.max(np.abs(derivative(grid, np.sin(grid.x)) - np.cos(grid.x)))
    assert errors[2] < 5e-3
    assert errors[4] < 1e-5
    assert errors[4] < errors[2]


def test_spectral_derivative_is_exact_for_trig(grid):
    f = np.sin(3 * grid.x) + 0.5 * np.cos(grid.x)
    expected = 3 * np.cos(3 * grid.x) - 0.5 * np.sin(grid.x)
    assert np.allclose(spectral_derivative(grid, f), expected, atol=1e-10)


# -------------------------------------------------------------------------
# Curvature
# -------------------------------------------------------------------------

def test_flat_torus_has_zero_curvature(flat3):
    assert np.max(np.abs(flat3.R)) == 0.0
    assert flat3.n == 3
    assert flat3.N_exp == pytest.approx(6.0)
    assert flat3.c_n == pytest.approx(8.0)


def test_round_sphere_block_curvature(grid):
    ones = np.ones(grid.num_points)
    geom = make_geometry(grid, ones, [FiberBlock(profile=2.0 * ones, dim=2, curvature=1)])
    assert np.allclose(geom.R, 0.5)


@pytest.mark.parametrize("n", [3, 4])
def test_curvature_matches_conformally_flat_formula(n):
    grid = make_grid(256)
    R_exact, profile = _conformally_flat_curvature(n, 0.2)
    B = profile(grid.x)
    geom = circle_geometry(grid, B, [B.copy() for _ in range(n - 1)])
    assert np.max(np.abs(geom.R - R_exact(grid.x))) < 1e-3


def test_curved_block_needs_two_dimensions(grid):
    ones = np.ones(grid.num_points)
    with pytest.raises(InvalidMetric):
        make_geometry(grid, ones, [FiberBlock(profile=ones, dim=1, curvature=1), FiberBlock(profile=ones)])


def test_non_positive_profile_rejected(grid):
    ones = np.ones(grid.num_points)
    with pytest.raises(InvalidMetric):
        circle_geometry(grid, ones, [ones, profile_family(grid, "harmonic")])


def test_scalar_curvature_agrees_with_geometry(warped):
    R = scalar_curvature(warped.grid, warped.profile_A, warped.blocks)
    assert np.array_equal(R, warped.R)


# -------------------------------------------------------------------------
# Laplacian
# -------------------------------------------------------------------------

def test_laplacian_discrete_eigenvalue_on_flat(flat3):
    h = flat3.grid.spacing
    f = np.cos(flat3.grid.x)
    expected = 4.0 * np.sin(h / 2) ** 2 / h ** 2
    assert np.allclose(laplacian_apply(flat3, f), expected * f, atol=1e-12)


def test_laplacian_symmetric_and_kills_constants(warped, rng):
    S = stiffness_matrix(warped)
    assert np.max(np.abs(S - S.T)) == 0.0
    assert np.max(np.abs(S @ np.ones(warped.grid.num_points))) < 1e-10
    assert np.max(np.abs(laplacian_apply(warped, np.full(warped.grid.num_points, 3.0)))) < 1e-10

    f, g = rng.normal(size=(2, warped.grid.num_points))
    lhs = np.sum(warped.vol * laplacian_apply(warped, f) * g)
    rhs = np.sum(warped.vol * f * laplacian_apply(warped, g))
    assert lhs == pytest.approx(rhs, rel=1e-10)


# -------------------------------------------------------------------------
# Conformal Killing operator
# -------------------------------------------------------------------------

def test_L_is_trace_free(warped, rng):
    LW = apply_L(warped, rng.normal(size=warped.grid.num_points))
    assert np.max(np.abs(LW.trace(warped.multiplicities))) < 1e-10


def test_flat_L_norm_closed_form(flat4):
    W = np.sin(2 * flat4.grid.x)
    norm_sq = tensor_norm_sq(flat4, apply_L(flat4, W))
    expected = 4.0 * (1.0 - 1.0 / flat4.n) * derivative(flat4.grid, W) ** 2
    assert np.allclose(norm_sq, expected, atol=1e-12)


def test_constants_are_killing_on_flat(flat3):
    W = np.full(flat3.grid.num_points, 2.0)
    assert np.max(np.abs(half_vector_laplacian(flat3, W))) < 1e-12
    assert conformal_killing_energy(flat3, W, W) < 1e-20


def test_flat_energy_of_cosine(flat4):
    W = np.cos(flat4.grid.x)
    energy = conformal_killing_energy(flat4, W, W)
    assert energy == pytest.approx(2.0 * (1.0 - 1.0 / flat4.n) * np.pi, rel=1e-3)


def test_half_vector_laplacian_is_adjoint(warped, rng):
    W, V = rng.normal(size=(2, warped.grid.num_points))
    energy = conformal_killing_energy(warped, W, V)
    assert vector_inner(warped, half_vector_laplacian(warped, W), V) == pytest.approx(energy, rel=1e-10)
    assert conformal_killing_energy(warped, V, W) == pytest.approx(energy, rel=1e-10)


def test_vector_operator_matches_half_laplacian(warped, rng):
    W = rng.normal(size=warped.grid.num_points)
    K = vector_laplacian_operator(warped)
    expected = warped.vol * warped.profile_A ** 2 * half_vector_laplacian(warped, W)
    assert np.allclose(K.apply(W), expected, atol=1e-9 * np.max(np.abs(expected)))


# -------------------------------------------------------------------------
# TT tensors
# -------------------------------------------------------------------------

def test_tt_tensor_residuals(warped):
    spec = TTSpec(
        s0=0.5,
        profiles=[0.2 * np.sin(warped.grid.x)],
        shear=[0.3],
        project=True,
    )
    sigma = make_tt_tensor(warped, spec)
    residuals = tt_residual(warped, sigma)
    assert residuals["trace"] < 1e-12
    assert residuals["divergence"] < 1e-8
    assert np.max(tensor_norm_sq(warped, sigma)) > 0


def test_tt_rejects_forced_trace(warped):
    spec = TTSpec(profiles=[np.zeros(warped.grid.num_points)], forced_trace=np.ones(warped.grid.num_points))
    with pytest.raises(InvalidTT):
        make_tt_tensor(warped, spec)


def test_tt_rejects_shear_on_sphere_block(warped):
    spec = TTSpec(profiles=[np.zeros(warped.grid.num_points)], shear=[0.0, 1.0])
    with pytest.raises(InvalidTT):
        make_tt_tensor(warped, spec)


def test_tt_obstruction_without_projection(warped):
    spec = TTSpec(profiles=[0.2 * np.sin(warped.grid.x)], project=False)
    with pytest.raises(InvalidTT):
        make_tt_tensor(warped, spec)


# -------------------------------------------------------------------------
# Norms
# -------------------------------------------------------------------------

def test_norms_of_constant(flat3):
    norms = norms_and_integrals(flat3, np.full(flat3.grid.num_points, -2.0), p=4)
    assert norms.sup_norm == 2.0
    assert norms.integral == pytest.approx(-4.0 * np.pi)
    assert norms.L2_norm == pytest.approx(2.0 * np.sqrt(2.0 * np.pi))
    assert norms.Lp_norm == pytest.approx(2.0 * (2.0 * np.pi) ** 0.25)


def test_norms_reject_small_exponent(flat3):
    with pytest.raises(InvalidExponent):
        norms_and_integrals(flat3, np.ones(flat3.grid.num_points), p=0.5)


# -------------------------------------------------------------------------
# Convergence orders
# -------------------------------------------------------------------------

SIZES = [64, 128, 256]


def _slope(errors) -> float:
    return -np.polyfit(np.log(SIZES), np.log(errors), 1)[0]


def _exact_warped_L(x: np.ndarray):
    """Mixed components of L(sin x d/dx) for dx^2 + exp(0.6 cos x) dy^2 + round S^2, n = 4."""
    beta_p = -0.3 * np.sin(x)
    div = np.cos(x) + beta_p * np.sin(x)
    return [2.0 * np.cos(x) - 0.5 * div, 2.0 * beta_p * np.sin(x) - 0.5 * div, -0.5 * div]


def _warped(num_points: int, order: int):
    grid = make_grid(num_points, derivative_order=order)
    ones = np.ones(num_points)
    blocks = [
        FiberBlock(profile=profile_family(grid, "cosine_exp", amplitude=0.3), dim=1),
        FiberBlock(profile=ones, dim=2, curvature=1),
    ]
    return make_geometry(grid, ones, blocks)


@pytest.mark.parametrize("order", [2, 4])
def test_apply_L_converges_at_grid_order(order):
    errors = []
    for num_points in SIZES:
        geom = _warped(num_points, order)
        LW = apply_L(geom, np.sin(geom.grid.x))
        exact = _exact_warped_L(geom.grid.x)
        errors.append(max(np.max(np.abs(c - e)) for c, e in zip([LW.xx] + list(LW.blocks), exact)))
    assert _slope(errors) >= order - 0.2


@pytest.mark.parametrize("order", [2, 4])
def test_scalar_curvature_converges_at_grid_order(order):
    R_exact, profile = _conformally_flat_curvature(3, 0.2)
    errors = []
    for num_points in SIZES:
        grid = make_grid(num_points, derivative_order=order)
        B = profile(grid.x)
        geom = circle_geometry(grid, B, [B.copy(), B.copy()])
        errors.append(np.max(np.abs(geom.R - R_exact(grid.x))))
    assert _slope(errors) >= order - 0.2


def test_flat_half_vector_laplacian_of_sine(flat3):
    h = flat3.grid.spacing
    W = np.sin(flat3.grid.x)
    symbol = 4.0 * np.sin(h / 2) ** 2 / h ** 2
    result = half_vector_laplacian(flat3, W)
    assert np.allclose(result, (4.0 / 3.0) * symbol * W, atol=1e-12)
    assert np.allclose(result, (4.0 / 3.0) * W, atol=1e-3)
