"""
Experiment runners.
Builds geometry and seed data from a RunConfig and runs one CLI mode,
returning tables and summary lines for the report writer.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from config.run_config import RunConfig, parse_profile_spec
from models.fields import TTSpec
from models.geometry import FiberBlock, Grid, ReducedGeometry
from models.seed import LichProblem, SeedData
from services import continuation, coupled, halfcont, lichnerowicz
from services.admissibility import PlateauLayout, compute_c, design_admissible_tau, smallness_functional
from services.elliptic import conformal_laplacian_eigen, stiffness_matrix
from services.gallery import get_example
from services.geometry import (
    conformal_killing_energy,
    half_vector_laplacian,
    load_profile_csv,
    make_geometry,
    make_grid,
    make_tt_tensor,
    profile_family,
    tensor_norm_sq,
    tt_residual,
    vector_inner,
)
from services.report_writer import ReportWriter

logger = logging.getLogger(__name__)

TRACE_HEADERS = ReportWriter.TRACE_HEADERS


@dataclass
class ExperimentResult:
    """Tables (name -> headers, rows) and summary lines of one run."""

    mode: str
    tables: Dict[str, Tuple[List[str], List[dict]]] = field(default_factory=dict)
    summary: List[str] = field(default_factory=list)

    def add_table(self, name: str, headers: Sequence[str], rows: Sequence[dict]) -> None:
        self.tables[name] = (list(headers), list(rows))


# -------------------------------------------------------------------------
# Builders
# -------------------------------------------------------------------------

def build_profile(grid: Grid, spec: str, config: RunConfig) -> np.ndarray:
    family, params = parse_profile_spec(spec)
    if family == "csv":
        return load_profile_csv(grid, config.resolve_path(params["path"]))
    return profile_family(grid, family, **params)


def build_geometry(config: RunConfig) -> ReducedGeometry:
    section = config.geometry
    grid = make_grid(section.num_points, section.period, section.order)
    blocks = [
        FiberBlock(profile=build_profile(grid, spec, config), dim=dim, curvature=1 if kind == "S" else 0)
        for kind, dim, spec in section.block_list
    ]
    return make_geometry(grid, build_profile(grid, section.A, config), blocks)


def build_tau(config: RunConfig, grid: Grid) -> np.ndarray:
    section = config.tau
    if section.kind == "constant":
        return np.full(grid.num_points, section.value)
    if section.kind == "exp_cos":
        return profile_family(grid, "cosine_exp", amplitude=section.amplitude,
                              frequency=section.frequency, scale=section.value)
    if section.kind == "plateau":
        layout = PlateauLayout(levels=section.levels, starts=section.starts, width=section.width)
        return design_admissible_tau(grid, layout)
    return load_profile_csv(grid, config.resolve_path(section.path))


def build_seed(config: RunConfig) -> SeedData:
    geom = build_geometry(config)
    profiles = [build_profile(geom.grid, p, config) for p in config.sigma.profile_list]
    # unlisted free profiles are zero
    profiles += [np.zeros(geom.grid.num_points) for _ in range(len(geom.blocks) - 1 - len(profiles))]
    spec = TTSpec(
        s0=config.sigma.s0,
        profiles=profiles,
        shear=list(config.sigma.shear),
        project=config.sigma.project,
    )
    sigma = make_tt_tensor(geom, spec)
    experiment = config.experiment
    return SeedData(geom=geom, tau=build_tau(config, geom.grid), sigma=sigma,
                    a=experiment.a, t=experiment.t, k=experiment.k)


def solver_options(config: RunConfig) -> coupled.SolverOptions:
    """Coupled-solver tolerances and caps of a run, LAB_* defaults already filled in."""
    experiment = config.experiment
    return coupled.SolverOptions(
        tol=experiment.tol_coupled,
        kernel_tol=experiment.kernel_tol,
        lich_tol=experiment.tol_lich,
        max_iter=experiment.max_iter,
        picard_max_iter=experiment.picard_max_iter,
        damping=experiment.damping,
    )


# -------------------------------------------------------------------------
# Modes
# -------------------------------------------------------------------------

def _profile_rows(geom: ReducedGeometry, **columns: np.ndarray) -> List[dict]:
    rows = []
    for i, x in enumerate(geom.grid.x):
        row = {"x": float(x)}
        row.update({name: float(values[i]) for name, values in columns.items()})
        rows.append(row)
    return rows


def run_lichnerowicz(config: RunConfig) -> ExperimentResult:
    seed = build_seed(config)
    experiment = config.experiment
    w = np.sqrt(tensor_norm_sq(seed.geom, seed.sigma) + seed.k ** 2)
    prob = LichProblem(geom=seed.geom, tau=seed.tau_eff, w=w)
    sol = lichnerowicz.solve(prob, rel_tol=experiment.tol_lich, max_iter=experiment.max_iter,
                             monotone_max_iter=experiment.monotone_max_iter)
    energy = lichnerowicz.energy_identity(prob, sol.phi)

    result = ExperimentResult(mode="lichnerowicz")
    result.add_table("solution", TRACE_HEADERS, [{
        "parameter": seed.k,
        "sup_phi": float(np.max(sol.phi)),
        "res_lich": sol.residual_norm,
        "res_vector": 0.0,
        "iterations": sol.iterations,
        "branch": "small",
    }])
    result.add_table("profile", ["x", "phi"], _profile_rows(seed.geom, phi=sol.phi))
    result.summary += [
        f"method = {sol.method}",
        f"iterations = {sol.iterations}",
        f"sup_phi = {float(np.max(sol.phi))!r}",
        f"energy_gap = {energy.relative_gap!r}",
    ]
    return result


def run_coupled(config: RunConfig) -> ExperimentResult:
    seed = build_seed(config)
    report = coupled.solve_with(seed, solver_options(config))
    result = ExperimentResult(mode="coupled")
    result.add_table("solution", TRACE_HEADERS, [report.to_row(seed.k)])
    result.add_table("profile", ["x", "phi", "W"], _profile_rows(seed.geom, phi=report.phi, W=report.W))
    result.summary += [
        f"method = {report.method}",
        f"iterations = {report.iterations}",
        f"sup_phi = {report.sup_phi!r}",
        f"res_lich = {report.res_lich!r}",
        f"res_vector = {report.res_vector!r}",
    ]
    return result


def run_k_sweep(config: RunConfig) -> ExperimentResult:
    seed = build_seed(config)
    experiment = config.experiment
    trace = continuation.k_sweep(seed, experiment.k_grid(), options=solver_options(config))
    result = ExperimentResult(mode="k-sweep")
    result.add_table("trace", TRACE_HEADERS, trace.rows())
    result.summary += [
        f"points = {len(trace.converged_points)}",
        f"failures = {len(trace.failures)}",
        f"fold = {trace.fold}",
        f"fold_parameter = {trace.fold_parameter!r}",
        f"A_estimate = {continuation.estimate_A(seed, trace=trace)!r}",
    ]
    return result


def run_two_solutions(config: RunConfig) -> ExperimentResult:
    seed = build_seed(config)
    experiment = config.experiment
    admissibility = compute_c(seed.geom, seed.tau, experiment.cutoff, experiment.c_level)
    pair = continuation.find_two_solutions(seed, experiment.k_grid(), a_min=admissibility.a_min,
                                           options=solver_options(config))
    certified = {branch: max(coupled.certify_report(seed, report))
                 for branch, report in (("small", pair.small), ("large", pair.large))}
    result = ExperimentResult(mode="two-solutions")
    result.add_table("solutions", TRACE_HEADERS, [pair.small.to_row(seed.k), pair.large.to_row(seed.k)])
    result.add_table("trace", TRACE_HEADERS, pair.trace.rows())
    result.summary += [
        f"method = {pair.method}",
        f"gap = {pair.gap!r}",
        f"fold = {pair.trace.fold}",
        f"fold_parameter = {pair.trace.fold_parameter!r}",
        f"sup_phi_small = {pair.small.sup_phi!r}",
        f"sup_phi_large = {pair.large.sup_phi!r}",
        f"certified_residual_small = {certified['small']!r}",
        f"certified_residual_large = {certified['large']!r}",
        f"c_measured = {admissibility.c_measured!r}",
        f"a_min = {admissibility.a_min!r}",
    ]
    return result


def run_tau_admissibility(config: RunConfig) -> ExperimentResult:
    seed = build_seed(config)
    report = compute_c(seed.geom, seed.tau, config.experiment.cutoff, config.experiment.c_level)
    row = {
        "c_measured": report.c_measured,
        "a_min": report.a_min,
        "n": report.n,
        "cutoff": report.cutoff,
        "level": report.level,
        "excluded_fraction": report.excluded_fraction,
        "violated": report.violated,
        "cmc": report.cmc,
    }
    result = ExperimentResult(mode="tau-admissibility")
    result.add_table("admissibility", list(row), [row])
    result.summary += [
        "status = VIOLATED" if report.violated else "status = admissible",
        f"c_measured = {report.c_measured!r}",
        f"a_min = {report.a_min!r}",
        f"smallness = {smallness_functional(seed)!r}",
    ]
    return result


def run_halfcont_demo(config: RunConfig) -> ExperimentResult:
    experiment = config.experiment
    example = get_example(experiment.gallery, experiment.gallery_a)
    result = ExperimentResult(mode="halfcont-demo")
    if example.association is not None:
        certificate = halfcont.check_association(example.association, seed=experiment.seed)
        outcome = halfcont.dichotomy_search(example.association, certificate, tol=experiment.tol_halfcont,
                                            seed=experiment.seed, max_workers=experiment.threads or None)
        row = outcome.to_dict()
        row["x"] = " ".join(repr(v) for v in row["x"] or [])
        row["bound"] = certificate.bound
        result.add_table("dichotomy", ["variant", "t", "x", "active_index", "residual", "bound"], [row])
        result.summary += [f"variant = {outcome.variant}", f"bound = {certificate.bound!r}"]
    if example.witness_map is not None:
        witness = halfcont.half_continuity_witness(example.witness_map, example.witness_point, seed=experiment.seed)
        row = {"p": " ".join(repr(float(v)) for v in witness.p), "radius": witness.radius, "samples": witness.samples}
        result.add_table("witness", ["p", "radius", "samples"], [row])
        result.summary += [f"witness_p = {row['p']}", f"witness_radius = {witness.radius!r}"]
    return result


def run_geom_check(config: RunConfig) -> ExperimentResult:
    seed = build_seed(config)
    geom = seed.geom
    rng = np.random.default_rng(config.experiment.seed)
    W, V = rng.normal(size=(2, geom.grid.num_points))
    energy = conformal_killing_energy(geom, W, V)
    adjoint_gap = abs(vector_inner(geom, half_vector_laplacian(geom, W), V) - energy) / max(abs(energy), 1e-300)
    S = stiffness_matrix(geom)
    residuals = tt_residual(geom, seed.sigma)
    checks = {
        "n": float(geom.n),
        "min_R": float(np.min(geom.R)),
        "max_abs_R": float(np.max(np.abs(geom.R))),
        "vector_adjoint_gap": adjoint_gap,
        "laplacian_symmetry_gap": float(np.max(np.abs(S - S.T))),
        "tt_trace": residuals["trace"],
        "tt_divergence": residuals["divergence"],
    }
    if np.min(geom.R) > 0:
        checks["lambda1"] = conformal_laplacian_eigen(geom).lambda1
    result = ExperimentResult(mode="geom-check")
    result.add_table("checks", ["check", "value"], [{"check": k, "value": v} for k, v in checks.items()])
    result.summary += [f"{k} = {v!r}" for k, v in checks.items()]
    return result


RUNNERS: Dict[str, Callable[[RunConfig], ExperimentResult]] = {
    "lichnerowicz": run_lichnerowicz,
    "coupled": run_coupled,
    "k-sweep": run_k_sweep,
    "two-solutions": run_two_solutions,
    "tau-admissibility": run_tau_admissibility,
    "halfcont-demo": run_halfcont_demo,
    "geom-check": run_geom_check,
}


def run_experiment(config: RunConfig) -> ExperimentResult:
    mode = config.experiment.mode
    logger.info(f"Running {mode}")
    return RUNNERS[mode](config)
