"""
Tests for the coupled solver: vector solve, Picard, Newton and k continuation.
"""

from pathlib import Path

import numpy as np
import pytest

from config.run_config import parse_config
from config.settings import LabSettings
from models.fields import ReducedTensor, TTSpec
from models.seed import LichProblem, SeedData
from services import continuation, coupled, lichnerowicz
from services.coupled import SolverOptions
from services.errors import ConformalKillingKernel, PreconditionViolation, SolveFailure
from services.experiments import build_seed, solver_options
from services.geometry import apply_L, half_vector_laplacian, make_tt_tensor, profile_family, tensor_norm_sq


def _sigma(geom):
    spec = TTSpec(s0=0.5, profiles=[0.2 * np.sin(geom.grid.x)], shear=[0.3], project=True)
    return make_tt_tensor(geom, spec)


def _seed(geom, amplitude: float = 0.2, **kwargs) -> SeedData:
    tau = profile_family(geom.grid, "cosine_exp", amplitude=amplitude)
    return SeedData(geom=geom, tau=tau, sigma=_sigma(geom), **kwargs)


# -------------------------------------------------------------------------
# Vector equation
# -------------------------------------------------------------------------

def test_flat_geometry_has_killing_kernel(flat3):
    with pytest.raises(ConformalKillingKernel) as info:
        coupled.kernel_check(flat3)
    direction = info.value.kernel_direction
    assert np.allclose(direction, direction[0])


def test_picard_on_flat_geometry_reports_kernel(flat3):
    seed = SeedData(geom=flat3, tau=profile_family(flat3.grid, "cosine_exp", amplitude=0.3),
                    sigma=ReducedTensor.zeros(flat3.grid.num_points, 2), k=1.0)
    with pytest.raises(ConformalKillingKernel):
        coupled.picard_solve(seed)


def test_vector_solve_inverts_half_laplacian(warped, rng):
    rhs = rng.normal(size=warped.grid.num_points)
    W = coupled.vector_solve(warped, rhs)
    lhs = -half_vector_laplacian(warped, W) * warped.profile_A ** 2
    assert np.allclose(lhs, rhs, atol=1e-8 * np.max(np.abs(rhs)))


def test_vector_solve_zero_source(warped):
    W = coupled.vector_solve(warped, np.zeros(warped.grid.num_points))
    assert not np.any(W)


def test_w_squared_matches_assembled_system(warped, rng):
    seed = _seed(warped, k=0.7)
    W = 0.1 * rng.normal(size=warped.grid.num_points)
    system = coupled.coupled_system(warped)
    assert np.allclose(coupled.w_squared(seed, W), system.w_squared(seed, W), rtol=1e-12)
    expected = tensor_norm_sq(warped, seed.sigma + apply_L(warped, W)) + 0.49
    assert np.allclose(coupled.w_squared(seed, W), expected)


# -------------------------------------------------------------------------
# Solvers
# -------------------------------------------------------------------------

def test_cmc_reduces_to_lichnerowicz(warped):
    seed = SeedData(geom=warped, tau=1.3, sigma=_sigma(warped), k=0.5)
    report = coupled.solve_coupled(seed)
    assert not np.any(report.W)
    w = np.sqrt(tensor_norm_sq(warped, seed.sigma) + seed.k ** 2)
    expected = lichnerowicz.solve(LichProblem(geom=warped, tau=1.3, w=w)).phi
    assert np.allclose(report.phi, expected, rtol=1e-7)


def test_coupled_solve_certifies(warped):
    seed = _seed(warped)
    report = coupled.solve_coupled(seed)
    assert report.res_lich <= 1e-8
    assert report.res_vector <= 1e-8
    res_lich, res_vec = coupled.certify_report(seed, report)
    assert res_lich < 1e-7
    assert res_vec < 1e-7
    assert np.min(report.phi) > 0


def test_newton_agrees_with_picard(warped):
    seed = _seed(warped)
    picard = coupled.picard_solve(seed)
    newton = coupled.newton_solve(seed, 1.05 * picard.phi)
    assert newton.method == "newton"
    assert np.allclose(newton.phi, picard.phi, rtol=1e-6)


def test_jacobian_matches_finite_differences(warped, rng):
    seed = _seed(warped, k=0.3)
    system = coupled.coupled_system(warped)
    n = warped.grid.num_points
    u = np.concatenate([1.0 + 0.1 * rng.random(n), 0.05 * rng.normal(size=n)])
    direction = rng.normal(size=2 * n)
    eps = 1e-6
    fd = (system.residual(seed, u + eps * direction) - system.residual(seed, u - eps * direction)) / (2 * eps)
    exact = system.jacobian(seed, u) @ direction
    assert np.max(np.abs(fd - exact)) < 1e-5 * np.max(np.abs(exact))


def test_blowup_init_is_floored(warped):
    seed = SeedData(geom=warped, tau=1.0, sigma=ReducedTensor.zeros(warped.grid.num_points, 2))
    phi = coupled.blowup_init(seed, np.zeros(warped.grid.num_points), 0.0)
    assert np.all(phi == coupled.BLOWUP_FLOOR)
    phi = coupled.blowup_init(seed, np.zeros(warped.grid.num_points), 2.0)
    expected = (np.sqrt(warped.kinetic_factor) * 2.0) ** (1.0 / warped.N_exp)
    assert np.allclose(phi, expected)


# -------------------------------------------------------------------------
# Continuation
# -------------------------------------------------------------------------

def test_k_sweep_small_branch_grows(warped):
    seed = _seed(warped)
    trace = continuation.k_sweep(seed, [0.0, 0.25, 0.5])
    assert len(trace.converged_points) == 3
    assert not trace.fold
    sup = trace.sup_phis()
    assert np.all(np.diff(sup) > 0)
    assert [row["branch"] for row in trace.rows()][0] == "small"


def test_estimate_A_reads_the_trace(warped):
    seed = _seed(warped)
    trace = continuation.k_sweep(seed, [0.0, 0.5])
    assert continuation.estimate_A(seed, mode="t", trace=trace) == pytest.approx(trace.max_sup_phi)
    with pytest.raises(PreconditionViolation):
        continuation.estimate_A(seed, mode="x", trace=trace)


def test_parameter_sweep_rejects_k(warped):
    with pytest.raises(PreconditionViolation):
        continuation.parameter_sweep(_seed(warped), "k", [0.0, 1.0])


def test_two_solutions_need_nonzero_sigma(warped):
    seed = SeedData(geom=warped, tau=1.0, sigma=ReducedTensor.zeros(warped.grid.num_points, 2))
    with pytest.raises(PreconditionViolation):
        continuation.find_two_solutions(seed, [0.0, 1.0])


def test_cmc_k_sweep_is_monotone(warped):
    seed = SeedData(geom=warped, tau=1.3, sigma=_sigma(warped))
    trace = continuation.k_sweep(seed, [0.0, 0.5, 1.0, 2.0, 4.0])
    assert len(trace.converged_points) == 5
    assert not trace.fold
    assert np.all(np.diff(trace.sup_phis()) > 0)
    assert all(not np.any(p.report.W) for p in trace.converged_points)


# -------------------------------------------------------------------------
# Solver options
# -------------------------------------------------------------------------

def test_solve_with_honours_iteration_caps(warped):
    with pytest.raises(SolveFailure):
        coupled.solve_with(_seed(warped), SolverOptions(picard_max_iter=1, max_iter=1))


def test_picard_passes_lichnerowicz_tolerance(warped, monkeypatch):
    seen = []
    solve = lichnerowicz.solve

    def spy(*args, **kwargs):
        seen.append(kwargs.get("rel_tol"))
        return solve(*args, **kwargs)

    monkeypatch.setattr(lichnerowicz, "solve", spy)
    coupled.solve_with(_seed(warped), SolverOptions(lich_tol=1e-11))
    # positivization re-enters solve positionally
    passed = [tol for tol in seen if tol is not None]
    assert passed
    assert set(passed) == {1e-11}


def test_k_sweep_passes_solver_options(warped, monkeypatch):
    caps = []
    newton = continuation.newton_solve

    def spy(*args, **kwargs):
        caps.append(kwargs.get("max_iter"))
        return newton(*args, **kwargs)

    monkeypatch.setattr(continuation, "newton_solve", spy)
    options = SolverOptions(max_iter=37, picard_max_iter=150)
    trace = continuation.k_sweep(_seed(warped), [0.0, 0.25, 0.5], options=options)
    assert len(trace.converged_points) == 3
    assert caps
    assert set(caps) == {37}


# -------------------------------------------------------------------------
# Fold and second solution on the bundled seed
# -------------------------------------------------------------------------

NONUNIQUENESS_CFG = Path(__file__).resolve().parent.parent / "configs" / "nonuniqueness.cfg"


def _coarse_nonuniqueness_config():
    text = NONUNIQUENESS_CFG.read_text(encoding="utf-8").replace("num_points = 256", "num_points = 64")
    return parse_config(text, settings=LabSettings(_env_file=None))


def test_fold_return_gives_certified_second_solution():
    config = _coarse_nonuniqueness_config()
    seed = build_seed(config)
    options = solver_options(config)
    pair = continuation.find_two_solutions(seed, config.experiment.k_grid(), options=options)

    trace = pair.trace
    assert trace.fold
    assert 1e3 < trace.fold_parameter < 2e4
    assert trace.fold_point().parameter <= trace.fold_parameter + 1e-9
    assert pair.method == "fold_return"
    assert pair.gap >= continuation.MIN_GAP
    assert pair.large.sup_phi > pair.small.sup_phi
    for report in (pair.small, pair.large):
        res_lich, res_vec = coupled.certify_report(seed, report)
        assert res_lich <= 2.0 * options.tol
        assert res_vec <= 2.0 * options.tol
