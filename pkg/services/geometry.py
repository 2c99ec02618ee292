"""
Reduced-geometry service.
Grids, warped metrics with x-only dependence and every discrete
differential operator the solvers need: Laplacian, conformal Killing
operator, its adjoint, TT construction, norms and integrals.

Sign convention: laplacian_apply returns the NEGATIVE Laplacian, so
cos(x) on the flat circle has eigenvalue +1.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from models.geometry import FiberBlock, Grid, ReducedGeometry
from models.fields import Norms, ReducedTensor, TTSpec
from services.errors import InvalidExponent, InvalidGrid, InvalidMetric, InvalidTT, MissingFile

logger = logging.getLogger(__name__)

MIN_POINTS = 16

# Stencils map an offset k to the coefficient of f[j + k].
CENTERED_D1: Dict[int, Dict[int, float]] = {
    2: {-1: -0.5, 1: 0.5},
    4: {-2: 1.0 / 12.0, -1: -2.0 / 3.0, 1: 2.0 / 3.0, 2: -1.0 / 12.0},
}
CENTERED_D2: Dict[int, Dict[int, float]] = {
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    4: {-2: -1.0 / 12.0, -1: 4.0 / 3.0, 0: -2.5, 1: 4.0 / 3.0, 2: -1.0 / 12.0},
}
# Node values -> value at x_{j+1/2}.
STAGGERED_D1: Dict[int, Dict[int, float]] = {
    2: {0: -1.0, 1: 1.0},
    4: {-1: 1.0 / 24.0, 0: -27.0 / 24.0, 1: 27.0 / 24.0, 2: -1.0 / 24.0},
}
STAGGERED_MEAN: Dict[int, Dict[int, float]] = {
    2: {0: 0.5, 1: 0.5},
    4: {-1: -1.0 / 16.0, 0: 9.0 / 16.0, 1: 9.0 / 16.0, 2: -1.0 / 16.0},
}


# -------------------------------------------------------------------------
# Stencil plumbing
# -------------------------------------------------------------------------

def apply_stencil(f: np.ndarray, stencil: Dict[int, float], scale: float = 1.0) -> np.ndarray:
    """Cyclic application: out[j] = scale * sum_k c_k f[j + k]."""
    out = np.zeros_like(f, dtype=float)
    for k, c in stencil.items():
        out += c * np.roll(f, -k)
    return scale * out


def apply_stencil_transpose(f: np.ndarray, stencil: Dict[int, float], scale: float = 1.0) -> np.ndarray:
    """Transpose of apply_stencil: out[j] = scale * sum_k c_k f[j - k]."""
    out = np.zeros_like(f, dtype=float)
    for k, c in stencil.items():
        out += c * np.roll(f, k)
    return scale * out


def stencil_matrix(num_points: int, stencil: Dict[int, float], scale: float = 1.0) -> np.ndarray:
    """Dense cyclic matrix of a stencil."""
    mat = np.zeros((num_points, num_points))
    rows = np.arange(num_points)
    for k, c in stencil.items():
        mat[rows, (rows + k) % num_points] += scale * c
    return mat


def derivative(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Centered first derivative at the nodes."""
    return apply_stencil(f, CENTERED_D1[grid.derivative_order], 1.0 / grid.spacing)


def second_derivative(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Centered second derivative at the nodes."""
    return apply_stencil(f, CENTERED_D2[grid.derivative_order], 1.0 / grid.spacing ** 2)


def staggered_derivative(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Derivative of node data evaluated at x_{j+1/2}."""
    return apply_stencil(f, STAGGERED_D1[grid.derivative_order], 1.0 / grid.spacing)


def to_half(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Interpolate node data to x_{j+1/2}."""
    return apply_stencil(f, STAGGERED_MEAN[grid.derivative_order])


def spectral_derivative(grid: Grid, f: np.ndarray) -> np.ndarray:
    """FFT derivative; the Nyquist mode is dropped."""
    n = grid.num_points
    k = np.fft.rfftfreq(n, d=grid.spacing / (2.0 * np.pi))
    f_hat = np.fft.rfft(f) * 1j * k
    if n % 2 == 0:
        f_hat[-1] = 0.0
    return np.fft.irfft(f_hat, n=n)


def spectral_antiderivative(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Zero-mean periodic antiderivative of the non-constant part of f."""
    n = grid.num_points
    k = np.fft.rfftfreq(n, d=grid.spacing / (2.0 * np.pi))
    f_hat = np.fft.rfft(f)
    out = np.zeros_like(f_hat)
    out[1:] = f_hat[1:] / (1j * k[1:])
    if n % 2 == 0:
        out[-1] = 0.0
    return np.fft.irfft(out, n=n)


# -------------------------------------------------------------------------
# Construction
# -------------------------------------------------------------------------

def make_grid(num_points: int, period: float = 2.0 * np.pi, derivative_order: int = 2) -> Grid:
    """
    Build a validated periodic grid.

    Raises:
        InvalidGrid: fewer than 16 points, non-positive period or
            unsupported derivative order
    """
    if num_points < MIN_POINTS:
        raise InvalidGrid(f"num_points must be >= {MIN_POINTS}, got {num_points}")
    if period <= 0:
        raise InvalidGrid(f"period must be positive, got {period}")
    if derivative_order not in CENTERED_D1:
        raise InvalidGrid(f"derivative_order must be 2 or 4, got {derivative_order}")
    return Grid(num_points=num_points, period=float(period), derivative_order=derivative_order)


def _check_profile(grid: Grid, values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.num_points,):
        raise InvalidMetric(f"profile {name} has shape {values.shape}, expected ({grid.num_points},)")
    if not np.all(np.isfinite(values)):
        raise InvalidMetric(f"profile {name} has non-finite values")
    if np.min(values) <= 0:
        raise InvalidMetric(f"profile {name} is not strictly positive (min {np.min(values):.3e})")
    return values


def make_geometry(grid: Grid, profile_A: np.ndarray, blocks: Sequence[FiberBlock]) -> ReducedGeometry:
    """
    Validate profiles and derive curvature and volume weight.

    Raises:
        InvalidMetric: non-positive or malformed profiles, or a curved
            block of dimension one
    """
    A = _check_profile(grid, profile_A, "A")
    checked = []
    for i, block in enumerate(blocks):
        profile = _check_profile(grid, block.profile, f"B{i + 1}")
        if block.dim < 1:
            raise InvalidMetric(f"block {i + 1} has dimension {block.dim}")
        if block.curvature not in (0, 1):
            raise InvalidMetric(f"block {i + 1} curvature must be 0 or 1")
        if block.curvature == 1 and block.dim < 2:
            raise InvalidMetric(f"block {i + 1}: a round fiber needs dimension >= 2")
        checked.append(FiberBlock(profile=profile, dim=block.dim, curvature=block.curvature))
    if 1 + sum(b.dim for b in checked) < 3:
        raise InvalidMetric("dimension n must be >= 3")

    R = scalar_curvature(grid, A, checked)
    vol = A.copy()
    for block in checked:
        vol = vol * block.profile ** block.dim
    return ReducedGeometry(grid=grid, profile_A=A, blocks=tuple(checked), R=R, vol=vol)


def circle_geometry(grid: Grid, profile_A: np.ndarray, profiles_B: Sequence[np.ndarray]) -> ReducedGeometry:
    """Geometry on a torus: every fiber block is a flat circle."""
    return make_geometry(grid, profile_A, [FiberBlock(profile=b) for b in profiles_B])


def flat_geometry(grid: Grid, n: int) -> ReducedGeometry:
    """Flat torus T^n with unit profiles."""
    ones = np.ones(grid.num_points)
    return circle_geometry(grid, ones, [ones.copy() for _ in range(n - 1)])


def profile_family(grid: Grid, family: str, amplitude: float = 0.0, frequency: int = 1,
                   phase: float = 0.0, scale: float = 1.0) -> np.ndarray:
    """
    Named analytic profile families.

    flat:        scale
    cosine_exp:  scale * exp(amplitude * cos(frequency * x + phase))
    sine_exp:    scale * exp(amplitude * sin(frequency * x + phase))
    cosine:      scale * (1 + amplitude * cos(frequency * x + phase))
    harmonic:    scale * cos(frequency * x + phase), sign-changing (TT data only)
    """
    x = grid.x * (2.0 * np.pi / grid.period)
    if family in ("flat", "constant"):
        return np.full(grid.num_points, float(scale))
    if family == "cosine_exp":
        return scale * np.exp(amplitude * np.cos(frequency * x + phase))
    if family == "sine_exp":
        return scale * np.exp(amplitude * np.sin(frequency * x + phase))
    if family == "cosine":
        return scale * (1.0 + amplitude * np.cos(frequency * x + phase))
    if family == "harmonic":
        return scale * np.cos(frequency * x + phase)
    raise InvalidMetric(f"unknown profile family '{family}'")


def load_profile_csv(grid: Grid, path: str) -> np.ndarray:
    """Read a two-column (x, value) CSV and resample it periodically onto the grid."""
    csv_path = Path(path)
    if not csv_path.exists():
        raise MissingFile(str(csv_path))
    data = np.loadtxt(csv_path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise InvalidMetric(f"{csv_path}: expected two columns, found {data.shape[1]}")
    return np.interp(grid.x, data[:, 0], data[:, 1], period=grid.period)


# -------------------------------------------------------------------------
# Curvature
# -------------------------------------------------------------------------

def scalar_curvature(grid: Grid, profile_A: np.ndarray, blocks: Sequence[FiberBlock]) -> np.ndarray:
    """
    Scalar curvature of A^2 dx^2 + sum B_i^2 h_i from finite differences.

    With alpha = ln A, beta_i = ln B_i and S1 = sum m_i beta_i':
    R = A^-2 (-2 sum m_i beta_i'' - sum m_i beta_i'^2 - S1^2 + 2 alpha' S1)
        + sum R(h_i) / B_i^2
    """
    alpha_p = derivative(grid, np.log(profile_A))
    bracket = np.zeros(grid.num_points)
    s1 = np.zeros(grid.num_points)
    fiber = np.zeros(grid.num_points)
    for block in blocks:
        beta = np.log(block.profile)
        beta_p = derivative(grid, beta)
        bracket -= block.dim * (2.0 * second_derivative(grid, beta) + beta_p ** 2)
        s1 += block.dim * beta_p
        if block.curvature:
            fiber += block.fiber_scalar_curvature / block.profile ** 2
    bracket += -s1 ** 2 + 2.0 * alpha_p * s1
    return bracket / profile_A ** 2 + fiber


# -------------------------------------------------------------------------
# Scalar operators
# -------------------------------------------------------------------------

def _log_half(grid: Grid, f: np.ndarray) -> np.ndarray:
    return np.exp(to_half(grid, np.log(f)))


def kappa_half(geom: ReducedGeometry) -> np.ndarray:
    """vol * g^{xx} at the staggered points."""
    return _log_half(geom.grid, geom.vol / geom.profile_A ** 2)


def vol_half(geom: ReducedGeometry) -> np.ndarray:
    """Volume weight at the staggered points."""
    return _log_half(geom.grid, geom.vol)


def laplacian_apply(geom: ReducedGeometry, f: np.ndarray) -> np.ndarray:
    """
    Negative Laplacian -div grad f in conservative form.

    vol * Delta f = G^T (kappa_half * G f), so Delta is symmetric in the
    vol-weighted inner product and annihilates constants.
    """
    grid = geom.grid
    order = grid.derivative_order
    flux = kappa_half(geom) * staggered_derivative(grid, f)
    return apply_stencil_transpose(flux, STAGGERED_D1[order], 1.0 / grid.spacing) / geom.vol


# -------------------------------------------------------------------------
# Conformal Killing operator
# -------------------------------------------------------------------------

def apply_L(geom: ReducedGeometry, W: np.ndarray) -> ReducedTensor:
    """
    (LW)_ij = nabla_i W_j + nabla_j W_i - (2/n) div W g_ij for W = W(x) d/dx.

    Returned in mixed form at the nodes; the result is diagonal and its
    trace cancels algebraically.
    """
    grid = geom.grid
    n = geom.n
    e_x = derivative(grid, W) + derivative(grid, np.log(geom.profile_A)) * W
    e_blocks = [derivative(grid, np.log(b.profile)) * W for b in geom.blocks]
    div = e_x + sum(b.dim * e for b, e in zip(geom.blocks, e_blocks))
    return ReducedTensor(
        xx=2.0 * e_x - (2.0 / n) * div,
        blocks=[2.0 * e - (2.0 / n) * div for e in e_blocks],
    )


def node_L_matrices(geom: ReducedGeometry) -> List[np.ndarray]:
    """Dense matrices of the x component and every block component of apply_L."""
    grid = geom.grid
    n = geom.n
    D = stencil_matrix(grid.num_points, CENTERED_D1[grid.derivative_order], 1.0 / grid.spacing)
    e_x = D + np.diag(derivative(grid, np.log(geom.profile_A)))
    e_blocks = [np.diag(derivative(grid, np.log(b.profile))) for b in geom.blocks]
    div = e_x + sum(b.dim * e for b, e in zip(geom.blocks, e_blocks))
    return [2.0 * e_x - (2.0 / n) * div] + [2.0 * e - (2.0 / n) * div for e in e_blocks]


def staggered_L_coefficients(geom: ReducedGeometry) -> List[tuple]:
    """
    Components of the staggered discrete L.

    Each component c of LW at x_{j+1/2} equals u_c * (G W) + v_c * (I W)
    with G the staggered derivative and I the staggered mean. Returns
    (multiplicity, u_c, v_c) for the x component then every block.
    """
    grid = geom.grid
    n = geom.n
    a_p = staggered_derivative(grid, np.log(geom.profile_A))
    b_p = [staggered_derivative(grid, np.log(b.profile)) for b in geom.blocks]
    weighted = sum(b.dim * bp for b, bp in zip(geom.blocks, b_p))
    ones = np.ones(grid.num_points)
    coefficients = [(1.0, (2.0 - 2.0 / n) * ones, (2.0 - 2.0 / n) * a_p - (2.0 / n) * weighted)]
    for b, bp in zip(geom.blocks, b_p):
        coefficients.append((float(b.dim), (-2.0 / n) * ones, 2.0 * bp - (2.0 / n) * (a_p + weighted)))
    return coefficients


def _staggered_L(geom: ReducedGeometry, W: np.ndarray) -> List[np.ndarray]:
    grid = geom.grid
    gw = staggered_derivative(grid, W)
    iw = to_half(grid, W)
    return [u * gw + v * iw for _, u, v in staggered_L_coefficients(geom)]


def conformal_killing_energy(geom: ReducedGeometry, W: np.ndarray, V: np.ndarray) -> float:
    """Discrete (1/2) integral of <LW, LV> on the staggered points."""
    weight = vol_half(geom)
    coefficients = staggered_L_coefficients(geom)
    total = 0.0
    for (m, _, _), lw, lv in zip(coefficients, _staggered_L(geom, W), _staggered_L(geom, V)):
        total += m * np.sum(weight * lw * lv)
    return 0.5 * geom.grid.spacing * total


def half_vector_laplacian(geom: ReducedGeometry, W: np.ndarray) -> np.ndarray:
    """
    (1/2) L*L W, the contravariant component.

    Built as the vol-weighted transpose of the staggered L, so that
    <(1/2) L*L W, V> = conformal_killing_energy(W, V) exactly.
    """
    grid = geom.grid
    order = grid.derivative_order
    weight = vol_half(geom)
    total = np.zeros(grid.num_points)
    for (m, u, v), lw in zip(staggered_L_coefficients(geom), _staggered_L(geom, W)):
        flux = m * weight * lw
        total += apply_stencil_transpose(u * flux, STAGGERED_D1[order], 1.0 / grid.spacing)
        total += apply_stencil_transpose(v * flux, STAGGERED_MEAN[order])
    return 0.5 * total / (geom.vol * geom.profile_A ** 2)


def vector_inner(geom: ReducedGeometry, W: np.ndarray, V: np.ndarray) -> float:
    """Integral of g(W, V) dv."""
    return float(geom.grid.spacing * np.sum(geom.vol * geom.profile_A ** 2 * W * V))


def covector_to_vector(geom: ReducedGeometry, omega_x: np.ndarray) -> np.ndarray:
    """Raise the index of omega = omega_x dx."""
    return omega_x / geom.profile_A ** 2


def covector_norm(geom: ReducedGeometry, omega_x: np.ndarray) -> np.ndarray:
    """Pointwise |omega_x dx|_g."""
    return np.abs(omega_x) / geom.profile_A


# -------------------------------------------------------------------------
# Tensors
# -------------------------------------------------------------------------

def tensor_norm_sq(geom: ReducedGeometry, T: ReducedTensor) -> np.ndarray:
    """Pointwise |T|_g^2 including the shear components."""
    total = T.xx ** 2
    for block, q, s in zip(geom.blocks, T.blocks, T.shear):
        total = total + block.dim * q ** 2
        if block.is_circle:
            total = total + 2.0 * s ** 2 / (geom.profile_A ** 2 * block.profile ** 2)
    return total


def make_tt_tensor(geom: ReducedGeometry, spec: TTSpec) -> ReducedTensor:
    """
    Trace-free, divergence-free symmetric tensor from free data.

    The last block is fixed by the trace. The x-divergence reduces to
    (mu sigma^x_x)' = mu r with mu = B_K prod B_i^{m_i}, which has a
    periodic solution iff the mean of mu r vanishes; project=True removes
    that obstruction through the first free profile.

    Raises:
        InvalidTT: forced trace, wrong number of profiles, shear on a
            non-circle block or an unremovable periodicity obstruction
    """
    grid = geom.grid
    blocks = geom.blocks
    K = len(blocks)
    if spec.forced_trace is not None and np.any(np.asarray(spec.forced_trace) != 0):
        raise InvalidTT("a TT tensor cannot carry a prescribed non-zero trace")
    if len(spec.profiles) != K - 1:
        raise InvalidTT(f"expected {K - 1} free block profiles, got {len(spec.profiles)}")
    shear_constants = list(spec.shear) + [0.0] * (K - len(spec.shear))
    if len(shear_constants) > K:
        raise InvalidTT(f"expected at most {K} shear constants, got {len(spec.shear)}")
    for block, c in zip(blocks, shear_constants):
        if c != 0.0 and not block.is_circle:
            raise InvalidTT("shear components are only allowed on one-dimensional flat blocks")

    V = geom.vol / geom.profile_A
    last = blocks[-1]
    mu = V * last.profile
    beta_p = [spectral_derivative(grid, np.log(b.profile)) for b in blocks]
    q = [np.asarray(p, dtype=float).copy() for p in spec.profiles]

    def source() -> np.ndarray:
        r = np.zeros(grid.num_points)
        for i in range(K - 1):
            r += blocks[i].dim * (beta_p[i] - beta_p[-1]) * q[i]
        return mu * r

    flux = source()
    obstruction = float(np.mean(flux))
    scale = float(np.mean(np.abs(flux))) + 1e-300
    if abs(obstruction) > 1e-12 * scale:
        if not spec.project:
            raise InvalidTT(f"divergence ODE has no periodic solution (mean flux {obstruction:.3e})")
        d = beta_p[0] - beta_p[-1]
        denominator = float(np.mean(mu * blocks[0].dim * d ** 2))
        if denominator <= 1e-300:
            raise InvalidTT("periodicity obstruction cannot be projected out")
        q[0] = q[0] - (obstruction / denominator) * d
        flux = source()
        logger.debug(f"Projected TT data, removed mean flux {obstruction:.3e}")

    xx = (spec.s0 + spectral_antiderivative(grid, flux)) / mu
    trace_rest = xx + sum(b.dim * qi for b, qi in zip(blocks[:-1], q))
    q.append(-trace_rest / last.dim)
    shear = [c * geom.profile_A / V for c in shear_constants]
    return ReducedTensor(xx=xx, blocks=q, shear=shear)


def tt_residual(geom: ReducedGeometry, sigma: ReducedTensor) -> Dict[str, float]:
    """Sup norms of the trace and of the spectral divergence of sigma."""
    grid = geom.grid
    trace = sigma.trace(geom.multiplicities)
    s1 = np.zeros(grid.num_points)
    coupling = np.zeros(grid.num_points)
    for block, q in zip(geom.blocks, sigma.blocks):
        beta_p = spectral_derivative(grid, np.log(block.profile))
        s1 += block.dim * beta_p
        coupling += block.dim * beta_p * q
    div_x = spectral_derivative(grid, sigma.xx) + s1 * sigma.xx - coupling
    div_sup = float(np.max(np.abs(div_x)))
    V = geom.vol / geom.profile_A
    for block, s in zip(geom.blocks, sigma.shear):
        if block.is_circle:
            div_y = spectral_derivative(grid, V * s / geom.profile_A) / geom.vol
            div_sup = max(div_sup, float(np.max(np.abs(div_y))))
    return {"trace": float(np.max(np.abs(trace))), "divergence": div_sup}


# -------------------------------------------------------------------------
# Norms and integrals
# -------------------------------------------------------------------------

def integrate(geom: ReducedGeometry, f: np.ndarray) -> float:
    """Vol-weighted midpoint rule."""
    return float(geom.grid.spacing * np.sum(f * geom.vol))


def norms_and_integrals(geom: ReducedGeometry, f: np.ndarray, p: float = 2.0,
                        weight: Optional[np.ndarray] = None) -> Norms:
    """
    Sup, L2 and Lp norms and the integral of a scalar field.

    Raises:
        InvalidExponent: p < 1
    """
    if p < 1:
        raise InvalidExponent(p)
    f = np.asarray(f, dtype=float)
    vol = geom.vol if weight is None else weight
    h = geom.grid.spacing
    absf = np.abs(f)
    return Norms(
        sup_norm=float(np.max(absf)),
        L2_norm=float(np.sqrt(h * np.sum(absf ** 2 * vol))),
        Lp_norm=float((h * np.sum(absf ** p * vol)) ** (1.0 / p)),
        p=float(p),
        integral=float(h * np.sum(f * vol)),
    )
