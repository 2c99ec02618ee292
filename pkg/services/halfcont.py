"""
Half-continuity service.
S-map evaluation, association certificates, the two-phase dichotomy
search and half-continuity witnesses, all in finite dimensions.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from models.halfcont import (
    CRITICAL_TUPLE,
    FIXED_POINT,
    INCONCLUSIVE,
    AssociationCertificate,
    DichotomyResult,
    TAssociation,
    Witness,
)
from services.errors import LabError, NotAssociation, NoWitness, PreconditionViolation

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
MIN_BUDGET = 10_000
# Sampled sup growing by more than this factor between nested boxes counts as unbounded.
GROWTH_FACTOR = 1.25
NESTED_BOXES = (0.25, 0.5, 1.0)


def smap_eval(assoc: TAssociation, t: float, x) -> Tuple[float, np.ndarray]:
    """S(t,x) = (1, T(t,x)) when every F_i(t,x) <= 0, else (0, 0)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if assoc.admissible(t, x):
        return 1.0, assoc.map(t, x)
    return 0.0, np.zeros(assoc.dimension)


# -------------------------------------------------------------------------
# Certificates
# -------------------------------------------------------------------------

def _sample_box(rng: np.random.Generator, dimension: int, radius: float, count: int):
    ts = rng.uniform(0.0, 1.0, size=count)
    xs = rng.uniform(-radius, radius, size=(count, dimension))
    return ts, xs


def _polish_sup(assoc: TAssociation, t0: float, x0: np.ndarray, radius: float) -> Tuple[float, np.ndarray]:
    """Maximize ||T|| over the sublevel set with SLSQP, starting at a sampled maximizer."""
    d = assoc.dimension

    def objective(z: np.ndarray) -> float:
        return -float(np.max(np.abs(assoc.map(z[0], z[1:]))))

    constraints = [
        {"type": "ineq", "fun": (lambda z, F=F: -float(F(z[0], z[1:])))}
        for F in assoc.constraints
    ]
    bounds = [(0.0, 1.0)] + [(-radius, radius)] * d
    z0 = np.concatenate([[t0], x0])
    try:
        result = optimize.minimize(objective, z0, method="SLSQP", bounds=bounds, constraints=constraints,
                                   options={"ftol": 1e-12, "maxiter": 200})
    except (LabError, ValueError, FloatingPointError) as e:
        logger.debug(f"Certificate polish failed: {e}")
        return -objective(z0), x0
    z = np.clip(result.x, [b[0] for b in bounds], [b[1] for b in bounds])
    if np.all(assoc.constraint_values(z[0], z[1:]) <= 1e-9):
        return -objective(z), z[1:]
    return -objective(z0), x0


def check_association(assoc: TAssociation, seed: int = 0) -> AssociationCertificate:
    """
    Verify F_i(0,0) < 0 and bound ||T|| over the sampled sublevel set.

    The sample box is sampled at three nested radii. A sampled supremum
    that keeps growing with the box is reported as unbounded.

    Raises:
        NotAssociation: some F_i(0,0) >= 0, or the sampled image grows
            with the sample box
    """
    zero = np.zeros(assoc.dimension)
    at_origin = assoc.constraint_values(0.0, zero)
    for i, value in enumerate(at_origin):
        if not value < 0.0:
            raise NotAssociation(f"F_{i + 1}(0,0) = {value} is not negative", witness={"index": i, "value": float(value)})
    if assoc.budget < MIN_BUDGET:
        logger.warning(f"Association sample budget {assoc.budget} is below {MIN_BUDGET}")

    rng = np.random.default_rng(seed)
    per_box = max(assoc.budget // len(NESTED_BOXES), 1)
    best = (float(np.max(np.abs(assoc.map(0.0, zero)))), 0.0, zero)
    radii, sups = [], []
    for fraction in NESTED_BOXES:
        radius = fraction * assoc.box_radius
        ts, xs = _sample_box(rng, assoc.dimension, radius, per_box)
        for t, x in zip(ts, xs):
            if not assoc.admissible(t, x):
                continue
            value = float(np.max(np.abs(assoc.map(t, x))))
            if value > best[0]:
                best = (value, float(t), x.copy())
        radii.append(radius)
        sups.append(best[0])

    if len(sups) >= 2 and sups[-2] > 0 and sups[-1] > GROWTH_FACTOR * sups[-2]:
        raise NotAssociation(
            f"sampled sup grows with the sample box ({sups})",
            witness={"t": best[1], "x": best[2].tolist(), "value": best[0]},
        )

    polished, argmax = _polish_sup(assoc, best[1], best[2], assoc.box_radius)
    bound = max(best[0], polished)
    logger.info(f"Association '{assoc.name}': C = {bound:.10g} from {per_box * len(NESTED_BOXES)} samples")
    return AssociationCertificate(
        bound=bound,
        samples=per_box * len(NESTED_BOXES),
        box_radii=radii,
        box_sups=sups,
        argmax=argmax if polished >= best[0] else best[2],
    )


# -------------------------------------------------------------------------
# Dichotomy search
# -------------------------------------------------------------------------

def _run_starts(solve_one: Callable[[np.ndarray], Optional[tuple]], starts: Sequence[np.ndarray],
                max_workers: Optional[int]) -> List[tuple]:
    """Run starts concurrently; results sorted by residual, ties by start index."""
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        outcomes = list(pool.map(solve_one, starts))
    found = [(out[0], index, out) for index, out in enumerate(outcomes) if out is not None]
    found.sort(key=lambda item: (item[0], item[1]))
    return [item[2] for item in found]


def _fixed_point_phase(assoc: TAssociation, radius: float, rng: np.random.Generator, num_starts: int,
                       tol: float, max_workers: Optional[int]) -> Optional[DichotomyResult]:
    d = assoc.dimension
    starts = [np.zeros(d)] + [rng.uniform(-radius, radius, size=d) for _ in range(num_starts - 1)]

    def solve_one(x0: np.ndarray):
        try:
            result = optimize.root(lambda x: x - assoc.map(1.0, x), x0, method="hybr", options={"xtol": 1e-13})
            x = result.x
            residual = float(np.max(np.abs(x - assoc.map(1.0, x))))
        except (LabError, ValueError, FloatingPointError):
            return None
        if not np.all(np.isfinite(x)) or residual > tol:
            return None
        return residual, x

    found = _run_starts(solve_one, starts, max_workers)
    if not found:
        return None
    residual, x = found[0]
    return DichotomyResult(
        variant=FIXED_POINT,
        x=x,
        t=1.0,
        residual=residual,
        constraint_values=assoc.constraint_values(1.0, x),
    )


def _critical_phase(assoc: TAssociation, radius: float, rng: np.random.Generator, num_starts: int,
                    tol: float, max_workers: Optional[int]) -> Optional[DichotomyResult]:
    d = assoc.dimension
    candidates = []
    for index, F in enumerate(assoc.constraints):
        def system(z: np.ndarray, F=F) -> np.ndarray:
            t = float(np.clip(z[0], 0.0, 1.0))
            x = z[1:]
            return np.concatenate([x - z[0] * assoc.map(t, x), [F(t, x)]])

        starts = [np.concatenate([[rng.uniform(0.0, 1.0)], rng.uniform(-radius, radius, size=d)])
                  for _ in range(num_starts)]

        def solve_one(z0: np.ndarray, system=system, index=index):
            try:
                result = optimize.root(system, z0, method="hybr", options={"xtol": 1e-13})
                z = result.x
                t, x = float(z[0]), z[1:]
                if not (-tol <= t <= 1.0 + tol) or not np.all(np.isfinite(x)):
                    return None
                t = float(np.clip(t, 0.0, 1.0))
                residual = float(np.max(np.abs(x - t * assoc.map(t, x))))
                values = assoc.constraint_values(t, x)
            except (LabError, ValueError, FloatingPointError):
                return None
            residual = max(residual, abs(float(values[index])))
            if residual > tol or np.any(values > tol):
                return None
            return residual, t, x, index, values

        candidates.extend(_run_starts(solve_one, starts, max_workers))

    if not candidates:
        return None
    residual, t, x, index, values = min(candidates, key=lambda c: (c[0], c[3]))
    return DichotomyResult(
        variant=CRITICAL_TUPLE,
        x=x,
        t=t,
        active_index=index,
        residual=residual,
        constraint_values=values,
    )


def dichotomy_search(
    assoc: TAssociation,
    certificate: Optional[AssociationCertificate] = None,
    tol: float = DEFAULT_TOL,
    num_starts: int = 16,
    seed: int = 0,
    max_workers: Optional[int] = None,
) -> DichotomyResult:
    """
    Either a fixed point of T(1, .) or a critical tuple.

    Phase 1 looks for x = T(1, x) from multistart points in the
    certificate ball. Only when it fails, phase 2 solves
    x = t T(t, x), F_i(t, x) = 0 for each i and keeps solutions with every
    F_j <= tol. Exhausting both phases returns an inconclusive result.

    Raises:
        NotAssociation: no certificate given and the association check fails
    """
    if certificate is None:
        certificate = check_association(assoc, seed=seed)
    radius = max(certificate.bound, 1.0)
    rng = np.random.default_rng(seed)

    result = _fixed_point_phase(assoc, radius, rng, num_starts, tol, max_workers)
    if result is not None:
        logger.info(f"Dichotomy '{assoc.name}': fixed point with residual {result.residual:.3e}")
        return result
    result = _critical_phase(assoc, radius, rng, num_starts, tol, max_workers)
    if result is not None:
        logger.info(f"Dichotomy '{assoc.name}': critical tuple t={result.t:.10g}, index {result.active_index}")
        return result
    logger.warning(f"Dichotomy '{assoc.name}': search exhausted without a result")
    return DichotomyResult(variant=INCONCLUSIVE)


def smap_fixed_points(assoc: TAssociation, samples: int = 64, iterations: int = 200,
                      tol: float = DEFAULT_TOL, seed: int = 0) -> List[np.ndarray]:
    """
    Fixed points of the S-map reached by iterating S from sampled starts.

    Every returned point x satisfies x = T(1, x) and all F_i(1, x) <= 0.
    """
    rng = np.random.default_rng(seed)
    ts, xs = _sample_box(rng, assoc.dimension, assoc.box_radius, samples)
    found: List[np.ndarray] = []
    for t, x in zip(ts, xs):
        for _ in range(iterations):
            t_next, x_next = smap_eval(assoc, t, x)
            if not np.all(np.isfinite(x_next)):
                break
            done = t_next == t and np.max(np.abs(x_next - x)) <= tol
            t, x = t_next, x_next
            if done:
                break
        else:
            continue
        if t != 1.0 or not assoc.admissible(1.0, x):
            continue
        if np.max(np.abs(assoc.map(1.0, x) - x)) > tol:
            continue
        if not any(np.max(np.abs(x - y)) <= 10 * tol for y in found):
            found.append(x)
    return found


# -------------------------------------------------------------------------
# Half-continuity witnesses
# -------------------------------------------------------------------------

def half_continuity_witness(
    f: Callable[[np.ndarray], np.ndarray],
    x,
    budget: int = 5000,
    samples_per_check: int = 64,
    directions: int = 8,
    radii: Sequence[float] = tuple(0.5 ** k for k in range(1, 11)),
    seed: int = 0,
) -> Witness:
    """
    Search p and r with <p, f(y) - y> > 0 for every sampled y in the
    sup-norm ball of radius r around x that is not fixed by f.

    The direction f(x) - x is tried first, then random unit vectors.

    Raises:
        PreconditionViolation: x is a fixed point of f
        NoWitness: budget exhausted (not a disproof)
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    displacement = np.atleast_1d(np.asarray(f(x), dtype=float)) - x
    if np.max(np.abs(displacement)) <= 1e-14:
        raise PreconditionViolation("x is a fixed point of f")

    rng = np.random.default_rng(seed)
    candidates = [displacement / np.linalg.norm(displacement)]
    for _ in range(directions - 1):
        p = rng.normal(size=x.size)
        candidates.append(p / np.linalg.norm(p))

    used = 0
    for radius in radii:
        ys = x + rng.uniform(-radius, radius, size=(samples_per_check, x.size))
        ys = np.vstack([x, x + radius, x - radius, ys])
        moves = np.array([np.atleast_1d(np.asarray(f(y), dtype=float)) - y for y in ys])
        used += len(ys)
        moving = np.any(moves != 0.0, axis=1)
        for p in candidates:
            if np.all(moves[moving] @ p > 0.0):
                logger.debug(f"Witness p={p}, r={radius} after {used} samples")
                return Witness(p=p, radius=radius, samples=used)
        if used >= budget:
            break
    raise NoWitness(budget)
