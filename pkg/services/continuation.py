"""
Continuation service.
Natural and pseudo-arclength continuation of the coupled system in k, t
or a, fold detection, the A estimate and the two-solution search.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from models.reports import (
    BRANCH_LARGE,
    BRANCH_SMALL,
    ContinuationPoint,
    ContinuationTrace,
    SolveReport,
    TwoSolutions,
    deformed_branch,
)
from models.seed import SeedData
from services.coupled import (
    DEFAULT_KERNEL_TOL,
    DEFAULT_TOL,
    SolverOptions,
    blowup_init,
    certify_report,
    coupled_system,
    newton_solve,
    solve_with,
)
from services.errors import InvalidState, NotFound, PreconditionViolation, SingularOperator, SolveFailure

logger = logging.getLogger(__name__)

STEP_ERRORS = (SolveFailure, SingularOperator, InvalidState, linalg.LinAlgError)
MIN_GAP = 0.1
LANDING_WINDOW = 1e-6


def _seed_at(seed: SeedData, name: str, value: float) -> SeedData:
    return seed.with_(**{name: float(value)})


def _branch_tag(name: str, value: float, start: float) -> str:
    if value == start:
        return BRANCH_SMALL
    return deformed_branch(value) if name == "k" else f"{name}={value!r}"


def _report_from_state(seed: SeedData, u: np.ndarray, iterations: int, branch: str, method: str,
                       parameter: float) -> SolveReport:
    system = coupled_system(seed.geom)
    phi, W = system.split(u)
    res_lich, res_vec = system.relative_residuals(seed, u)
    return SolveReport(
        phi=phi.copy(), W=W.copy(), res_lich=res_lich, res_vector=res_vec,
        iterations=iterations, branch=branch, method=method, parameter=parameter,
    )


# -------------------------------------------------------------------------
# Pseudo-arclength
# -------------------------------------------------------------------------

class _Arclength:
    """
    Pseudo-arclength continuation in scaled coordinates
    z = [sqrt(zeta) u / u_scale, mu / mu_scale] with zeta = 1 / len(u).
    """

    def __init__(self, seed: SeedData, name: str, u_scale: float, mu_scale: float, tol: float):
        self.seed = seed
        self.name = name
        self.system = coupled_system(seed.geom)
        self.tol = tol
        n_unknowns = 2 * seed.geom.grid.num_points
        self.a = u_scale / np.sqrt(1.0 / n_unknowns)
        self.b = mu_scale

    def to_z(self, u: np.ndarray, mu: float) -> np.ndarray:
        return np.concatenate([u / self.a, [mu / self.b]])

    def from_z(self, z: np.ndarray) -> Tuple[np.ndarray, float]:
        return z[:-1] * self.a, float(z[-1] * self.b)

    def parameter_derivative(self, u: np.ndarray, mu: float) -> np.ndarray:
        delta = 1e-6 * max(1.0, abs(mu))
        plus = self.system.residual(_seed_at(self.seed, self.name, mu + delta), u)
        minus = self.system.residual(_seed_at(self.seed, self.name, mu - delta), u)
        return (plus - minus) / (2.0 * delta)

    def correct(self, z_pred: np.ndarray, tangent: np.ndarray, max_iter: int = 15) -> Tuple[np.ndarray, int]:
        """Newton on [F(u, mu) = 0, tangent . (z - z_pred) = 0]."""
        z = z_pred.copy()
        for iteration in range(1, max_iter + 1):
            u, mu = self.from_z(z)
            if np.min(self.system.split(u)[0]) <= 0:
                raise SolveFailure("arclength corrector", iteration, np.inf)
            seed_mu = _seed_at(self.seed, self.name, mu)
            res_lich, res_vec = self.system.relative_residuals(seed_mu, u)
            if res_lich <= self.tol and res_vec <= self.tol:
                return z, iteration - 1
            F = self.system.residual(seed_mu, u)
            J = self.system.jacobian(seed_mu, u)
            bordered = np.zeros((z.size, z.size))
            bordered[:-1, :-1] = J * self.a
            bordered[:-1, -1] = self.parameter_derivative(u, mu) * self.b
            bordered[-1, :] = tangent
            rhs = -np.concatenate([F, [tangent @ (z - z_pred)]])
            z = z + linalg.lu_solve(linalg.lu_factor(bordered), rhs)
        raise SolveFailure("arclength corrector", max_iter, max(res_lich, res_vec))


def _refine_fold(s: Sequence[float], mu: Sequence[float]) -> float:
    """Vertex of the parabola mu(s) through three points around the maximum."""
    coeffs = np.polyfit(s, mu, 2)
    if coeffs[0] >= 0:
        return float(max(mu))
    s_star = -coeffs[1] / (2.0 * coeffs[0])
    return float(max(np.polyval(coeffs, s_star), max(mu)))


# -------------------------------------------------------------------------
# Engine
# -------------------------------------------------------------------------

def _options(options: Optional[SolverOptions], tol: float, kernel_tol: float) -> SolverOptions:
    return options if options is not None else SolverOptions(tol=tol, kernel_tol=kernel_tol)


def continuation(
    seed: SeedData,
    name: str,
    grid: Sequence[float],
    tol: float = DEFAULT_TOL,
    kernel_tol: float = DEFAULT_KERNEL_TOL,
    return_to_start: bool = True,
    max_arclength_steps: int = 400,
    max_bisections: int = 8,
    options: Optional[SolverOptions] = None,
) -> ContinuationTrace:
    """
    Follow the solution branch of the coupled system in parameter `name`.

    Natural continuation with the previous solution as predictor; a
    failed step is bisected, and after two failures in a row the branch
    is followed by pseudo-arclength with a secant predictor. A fold is the
    largest parameter value reached before the branch turns back; with
    return_to_start the post-fold branch is followed back to grid[0].
    `options` overrides tol and kernel_tol when given.
    """
    options = _options(options, tol, kernel_tol)
    values = sorted(float(v) for v in grid)
    start = values[0]
    trace = ContinuationTrace(parameter_name=name)

    first = solve_with(_seed_at(seed, name, start), options)
    first.parameter = start
    first.branch = BRANCH_SMALL
    trace.append(ContinuationPoint(parameter=start, report=first, stage="natural"))
    states: List[Tuple[np.ndarray, float]] = [(np.concatenate([first.phi, first.W]), start)]

    failures_in_row = 0
    bisections = 0
    i = 1
    while i < len(values):
        target = values[i]
        u_prev, mu_prev = states[-1]
        system = coupled_system(seed.geom)
        phi_prev, W_prev = system.split(u_prev)
        try:
            report = newton_solve(_seed_at(seed, name, target), phi_prev, W_prev, tol=options.tol,
                                  max_iter=options.max_iter, kernel_tol=options.kernel_tol,
                                  branch=_branch_tag(name, target, start))
        except STEP_ERRORS as e:
            logger.debug(f"Natural step {name}={target!r} failed: {e}")
            trace.append(ContinuationPoint(parameter=target, stage="natural", failure=str(e)))
            failures_in_row += 1
            if failures_in_row >= 2 or bisections >= max_bisections:
                break
            values.insert(i, 0.5 * (mu_prev + target))
            bisections += 1
            continue
        report.parameter = target
        trace.append(ContinuationPoint(parameter=target, report=report, stage="natural"))
        states.append((np.concatenate([report.phi, report.W]), target))
        failures_in_row = 0
        i += 1

    if i >= len(values):
        logger.info(f"Natural continuation in {name} reached {values[-1]!r} without a fold")
        return trace
    if len(states) < 2:
        logger.warning(f"Continuation in {name} failed before two points converged")
        return trace

    logger.info(f"Natural continuation stalled near {name}={states[-1][1]!r}; switching to pseudo-arclength")
    _follow_arclength(seed, name, states, trace, start, values[-1], options, return_to_start, max_arclength_steps)
    return trace


def _follow_arclength(
    seed: SeedData,
    name: str,
    states: List[Tuple[np.ndarray, float]],
    trace: ContinuationTrace,
    start: float,
    end: float,
    options: SolverOptions,
    return_to_start: bool,
    max_steps: int,
) -> None:
    (u0, mu0), (u1, mu1) = states[-2], states[-1]
    u_scale = max(1.0, float(np.max(np.abs(u1))))
    mu_scale = max(1.0, abs(end - start))
    arc = _Arclength(seed, name, u_scale, mu_scale, options.tol)
    # a post-fold step ending this close to start lands on it
    window = LANDING_WINDOW * mu_scale

    z_prev, z = arc.to_z(u0, mu0), arc.to_z(u1, mu1)
    ds = float(np.linalg.norm(z - z_prev))
    ds_max = 8.0 * ds
    s_path = [0.0, ds]
    mu_path = [mu0, mu1]
    increasing = mu1 >= mu0

    small = trace.points[0].report

    def land(z_from: np.ndarray, z_to: np.ndarray, final: bool) -> bool:
        """Record a landing at start; a non-final attempt only counts off the small branch."""
        if not return_to_start:
            return True
        report, error = _land_on_start(seed, name, z_from, z_to, arc, start, options)
        if report is not None and (final or _gap(small, report) >= MIN_GAP):
            trace.append(ContinuationPoint(parameter=start, report=report, stage="return"))
            logger.info(f"Post-fold branch reached {name}={start!r} with sup phi {report.sup_phi:.6g}")
            return True
        if final:
            trace.append(ContinuationPoint(parameter=start, stage="return", failure=str(error)))
            logger.warning(f"Post-fold branch did not land at {name}={start!r}: {error}")
        return False

    for _ in range(max_steps):
        tangent = (z - z_prev) / np.linalg.norm(z - z_prev)
        z_pred = z + ds * tangent
        if trace.fold and arc.from_z(z_pred)[1] <= start + window:
            # clamp the step to start; retry shorter if the landing misses the large branch
            final = arc.from_z(z)[1] <= start + window or ds < 1e-8
            if land(z, z_pred, final):
                return
            ds *= 0.5
            continue
        try:
            z_new, iterations = arc.correct(z_pred, tangent)
        except STEP_ERRORS as e:
            ds *= 0.5
            logger.debug(f"Arclength step failed ({e}); ds -> {ds:.3e}")
            if ds < 1e-8:
                trace.append(ContinuationPoint(parameter=mu_path[-1], stage="arclength", failure=str(e)))
                if trace.fold:
                    land(z_prev, z, final=True)
                return
            continue

        u_new, mu_new = arc.from_z(z_new)
        seed_mu = _seed_at(seed, name, mu_new)
        report = _report_from_state(seed_mu, u_new, iterations, _branch_tag(name, mu_new, start),
                                    "arclength", mu_new)
        trace.append(ContinuationPoint(parameter=mu_new, report=report, stage="arclength"))
        s_path.append(s_path[-1] + float(np.linalg.norm(z_new - z)))
        mu_path.append(mu_new)

        if increasing and mu_new < mu_path[-2] and not trace.fold:
            trace.fold = True
            converged = [j for j, p in enumerate(trace.points) if p.converged]
            trace.fold_index = max(converged, key=lambda j: trace.points[j].parameter)
            trace.fold_parameter = _refine_fold(s_path[-3:], mu_path[-3:])
            logger.info(f"Fold detected at {name}* ~ {trace.fold_parameter:.6g}")
        increasing = mu_new >= mu_path[-2]

        if not trace.fold and mu_new > end:
            logger.info(f"Arclength passed {name}={end!r} without a fold")
            return
        if trace.fold and mu_new <= start + window:
            land(z, z_new, final=True)
            return

        z_prev, z = z, z_new
        if iterations <= 3:
            ds = min(1.5 * ds, ds_max)
    logger.warning(f"Arclength budget exhausted in {name}")
    if trace.fold:
        land(z_prev, z, final=True)


def _land_on_start(seed: SeedData, name: str, z_from: np.ndarray, z_to: np.ndarray, arc: _Arclength,
                   start: float, options: SolverOptions) -> Tuple[Optional[SolveReport], Optional[Exception]]:
    """
    Fixed-parameter Newton at start from the segment z_from -> z_to.

    The first guess is the segment point at mu = start (clamped to the
    segment), the second is z_from itself.
    """
    (u_a, mu_a), (u_b, mu_b) = arc.from_z(z_from), arc.from_z(z_to)
    weight = float(np.clip((start - mu_a) / (mu_b - mu_a), 0.0, 1.0)) if mu_b != mu_a else 0.0
    guesses = [u_a + weight * (u_b - u_a)]
    if weight > 0.0:
        guesses.append(u_a)
    system = coupled_system(seed.geom)
    error: Optional[Exception] = None
    for u in guesses:
        phi, W = system.split(u)
        phi = np.maximum(phi, 1e-3 * float(np.max(np.abs(phi))))
        try:
            report = newton_solve(_seed_at(seed, name, start), phi, W, tol=options.tol, max_iter=options.max_iter,
                                  kernel_tol=options.kernel_tol, branch=BRANCH_LARGE)
        except STEP_ERRORS as e:
            error = e
            continue
        report.parameter = start
        return report, None
    return None, error


# -------------------------------------------------------------------------
# Public sweeps
# -------------------------------------------------------------------------

def k_sweep(seed: SeedData, k_grid: Sequence[float], tol: float = DEFAULT_TOL,
            kernel_tol: float = DEFAULT_KERNEL_TOL, max_arclength_steps: int = 400,
            options: Optional[SolverOptions] = None) -> ContinuationTrace:
    """Continuation of the (a,k)- or (t,k)-system in k, following the fold back toward k_grid[0]."""
    return continuation(seed, "k", k_grid, tol=tol, kernel_tol=kernel_tol,
                        max_arclength_steps=max_arclength_steps, options=options)


def parameter_sweep(seed: SeedData, name: str, grid: Sequence[float], tol: float = DEFAULT_TOL,
                    kernel_tol: float = DEFAULT_KERNEL_TOL,
                    options: Optional[SolverOptions] = None) -> ContinuationTrace:
    """
    Continuation in t (mode 1) or a (mode 2) at the seed's fixed k.

    Raises:
        PreconditionViolation: name is not t or a
    """
    if name not in ("t", "a"):
        raise PreconditionViolation(f"parameter sweeps run in t or a, got {name!r}")
    return continuation(seed, name, grid, tol=tol, kernel_tol=kernel_tol, return_to_start=False,
                        options=options)


def estimate_A(
    seed: SeedData,
    mode: str = "a",
    k_grid: Optional[Sequence[float]] = None,
    trace: Optional[ContinuationTrace] = None,
    a_min: Optional[float] = None,
    options: Optional[SolverOptions] = None,
) -> float:
    """
    Largest sup phi over the k-family, fold neighbourhood included.

    mode "a" reads the value as A(a) for the (a,k)-system, mode "t" as
    A(t) for the (t,k)-system; the computation is the same sweep.
    """
    if mode not in ("a", "t"):
        raise PreconditionViolation(f"mode must be 'a' or 't', got {mode!r}")
    if a_min is not None and seed.a <= a_min:
        logger.warning(f"a = {seed.a} does not exceed the threshold {a_min:.6g}; A({mode}) may be infinite")
    if trace is None:
        if k_grid is None:
            raise PreconditionViolation("estimate_A needs a k grid or a finished trace")
        trace = k_sweep(seed, k_grid, options=options)
    value = trace.max_sup_phi
    logger.info(f"A({mode}) estimate {value:.6g} from {len(trace.converged_points)} points")
    return value


def _gap(small: SolveReport, large: SolveReport) -> float:
    return float(np.max(np.abs(large.phi - small.phi)) / small.sup_phi)


def _certified(seed: SeedData, report: SolveReport, tol: float) -> bool:
    res_lich, res_vec = certify_report(seed, report)
    return res_lich <= 2.0 * tol and res_vec <= 2.0 * tol


def _post_fold_starts(trace: ContinuationTrace, limit: int) -> List[SolveReport]:
    """Converged points past the fold, nearest to the start parameter first."""
    if not trace.fold or trace.fold_index is None:
        return []
    tail = [p for p in trace.points[trace.fold_index + 1:] if p.converged and p.stage == "arclength"]
    tail.sort(key=lambda p: p.parameter)
    return [p.report for p in tail[:limit]]


def find_two_solutions(
    seed: SeedData,
    k_grid: Sequence[float],
    tol: float = DEFAULT_TOL,
    kernel_tol: float = DEFAULT_KERNEL_TOL,
    a_min: Optional[float] = None,
    mode: str = "t",
    blowup_scales: Sequence[float] = (1.0, 2.0, 4.0, 8.0, 16.0),
    options: Optional[SolverOptions] = None,
    post_fold_starts: int = 3,
) -> TwoSolutions:
    """
    Two distinct solutions of the coupled system for one seed.

    The small solution comes from Picard at the seed's k; the large one
    from the fold return of a k sweep, then from fixed-k Newton started
    at the post-fold points nearest the seed's k, and failing both from
    deflated Newton started at scaled blow-up profiles. Both solutions
    are certified by certify_report.

    Raises:
        PreconditionViolation: sigma vanishes identically
        NotFound: no certified second solution within budget; the trace is attached
    """
    options = _options(options, tol, kernel_tol)
    if seed.sigma_is_zero:
        raise PreconditionViolation("sigma must not vanish identically")
    if a_min is not None and seed.a <= a_min:
        logger.warning(f"a = {seed.a} does not exceed the threshold {a_min:.6g}")
    if mode == "a" and np.max(seed.tau) >= 1.0:
        logger.warning(f"max tau = {np.max(seed.tau):.6g} is not below 1")

    grid = sorted(set([seed.k] + [float(k) for k in k_grid if k >= seed.k]))
    trace = k_sweep(seed, grid, options=options)
    small = trace.points[0].report
    small.branch = BRANCH_SMALL
    if not _certified(seed, small, options.tol):
        logger.info("Small solution failed certification; polishing with Newton")
        try:
            small = newton_solve(seed, small.phi, small.W, tol=options.tol, max_iter=options.max_iter,
                                 kernel_tol=options.kernel_tol)
        except STEP_ERRORS as e:
            raise NotFound("a certified small solution", trace) from e
        if not _certified(seed, small, options.tol):
            raise NotFound("a certified small solution", trace)
        small.parameter = seed.k

    def accept(large: SolveReport) -> bool:
        return _gap(small, large) >= MIN_GAP and _certified(seed, large, options.tol)

    for large in (p.report for p in trace.points if p.stage == "return" and p.report is not None):
        if accept(large):
            logger.info(f"Two solutions by fold return, gap {_gap(small, large):.4g}")
            return TwoSolutions(small=small, large=large, trace=trace, method="fold_return")

    for point in _post_fold_starts(trace, post_fold_starts):
        try:
            large = newton_solve(seed, np.maximum(point.phi, 1e-3 * point.sup_phi), point.W, tol=options.tol,
                                 max_iter=options.max_iter, kernel_tol=options.kernel_tol, branch=BRANCH_LARGE)
        except STEP_ERRORS as e:
            logger.debug(f"Newton from the post-fold point at k={point.parameter!r} failed: {e}")
            continue
        if accept(large):
            large.parameter = seed.k
            logger.info(f"Two solutions from the post-fold point at k={point.parameter:.4g}, "
                        f"gap {_gap(small, large):.4g}")
            return TwoSolutions(small=small, large=large, trace=trace, method="fold_return")

    logger.info("Fold return gave no second solution; trying deflated Newton")
    base = blowup_init(seed, small.W, seed.k)
    for scale in blowup_scales:
        start = np.maximum(scale * np.maximum(base, small.phi), 1e-3)
        try:
            large = newton_solve(seed, start, tol=options.tol, max_iter=options.max_iter,
                                 kernel_tol=options.kernel_tol, deflate=[small.phi], branch=BRANCH_LARGE)
        except STEP_ERRORS as e:
            logger.debug(f"Deflated Newton from scale {scale} failed: {e}")
            continue
        if accept(large):
            large.parameter = seed.k
            logger.info(f"Two solutions by deflation, gap {_gap(small, large):.4g}")
            return TwoSolutions(small=small, large=large, trace=trace, method="deflation")
    logger.error("No second solution found")
    raise NotFound("a second solution", trace)
