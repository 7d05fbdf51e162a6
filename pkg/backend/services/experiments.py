"""
Experiment Service
Validated experiment configurations and the runner that executes them in order,
one ServiceResult per experiment, into a Report.
"""

import logging
import math
import time
from collections.abc import Callable
from functools import partial
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from backend.core.config import settings
from backend.core.errors import config_error
from backend.core.exceptions import ConfigError, CoverGap, LabException, ProximityViolation
from backend.core.models import BellmanParams, GoodnessParams, HierarchyParams
from backend.core.parallel import parallel_map
from backend.core.result import ServiceResult
from backend.core.rng import COEFFICIENT, INPUT, stream
from backend.middleware.logging import ExperimentLogContext
from backend.middleware.performance import timed
from backend.services.bellman import bellman_hessian_check, bellman_tree_check, tau_carleson_experiment
from backend.services.decomposition import (
    averaging_identity_check,
    build_model_operator,
    containment_probability_check,
    decay_check_in,
    decay_check_out,
    extract_shifts,
    leaf_cells,
    representation_identity_check,
    subtract_paraproducts,
)
from backend.services.goodness import bad_probability_sweep, boundary_hit_probability, derive_a
from backend.services.haar_weights import (
    Weight,
    ainfty_inequality_check,
    build_haar_system,
    carleson_embedding_check,
    chain_inequality_check,
    check_decomposition,
    parseval_residual,
    power_weight_family,
)
from backend.services.lattice_combinatorics import verify_injectivity
from backend.services.metric_core import (
    DoublingMeasure,
    FiniteMetricSpace,
    KernelProfile,
    random_euclidean_space,
    uniform_measure,
)
from backend.services.random_lattice import (
    CubeTree,
    build_hierarchy,
    check_grid_laws,
    sampling_frequency_check,
    verify_cover,
)
from backend.services.report_service import (
    ExperimentOutcome,
    ExperimentResult,
    Report,
    build_metadata,
    outcome,
    row,
)
from backend.services.shifts_paraproducts import (
    assemble_shift,
    build_paraproducts,
    norm_checks,
    o_operator_check,
    p_trick_check,
    paraproduct_identities,
    paraproduct_norm_experiment,
    shift_bound_experiment,
    sl_rl_functionals,
    stopping_families,
    tau_tilde_check,
    verify_sbor,
)
from backend.validation.validation import load_space, load_tree, load_weights

logger = logging.getLogger(__name__)

HAAR_TOL = settings.A2LAB_ORTHO_TOL
SPLIT_SLACK_TOL = -1e-12


# ============================================================
# CONFIGURATION MODELS
# ============================================================


class ExperimentBase(BaseModel):
    """Every experiment names only the parameters it consumes"""

    model_config = ConfigDict(extra="forbid")

    label: str = ""


class LatticeSweep(ExperimentBase):
    spaces: list[str] = Field(min_length=1)
    deltas: list[float] = [0.25]
    levels: int = Field(3, ge=1, le=40)
    samples: int = Field(100, ge=1)

    @field_validator("deltas")
    @classmethod
    def _deltas_in_range(cls, v: list[float]) -> list[float]:
        if not v or any(not 0.0 < d <= 0.25 for d in v):
            raise ValueError("every delta must lie in (0, 1/4]")
        return v


class CoverExperiment(LatticeSweep):
    kind: Literal["cover"]


class GridLawsExperiment(LatticeSweep):
    kind: Literal["grid-laws"]
    frequency_trials: int = Field(0, ge=0)


class CensusExperiment(ExperimentBase):
    kind: Literal["census"]
    spaces: list[str] = []
    random_spaces: int = Field(0, ge=0)
    max_points: int = Field(7, ge=2, le=12)


class PbadExperiment(ExperimentBase):
    kind: Literal["pbad"]
    space: str
    delta: float = Field(0.125, gt=0.0, le=0.25)
    levels: int = Field(3, ge=1)
    gamma: float = Field(0.25, gt=0.0, lt=1.0)
    a: float | None = Field(None, gt=0.0, lt=1.0)
    r_values: list[int] = Field([1, 2, 3, 4, 5, 6], min_length=1)
    trials: int = Field(10_000, ge=1)
    point: int | None = Field(None, ge=0)
    generation: int | None = Field(None, ge=0)
    exact: bool = False


class BoundaryExperiment(ExperimentBase):
    kind: Literal["boundary"]
    space: str
    delta: float = Field(0.25, gt=0.0, le=0.25)
    levels: int = Field(3, ge=1)
    a: float | None = Field(None, gt=0.0, lt=1.0)
    eps_values: list[float] = Field([0.01, 0.02, 0.05, 0.1, 0.2], min_length=1)
    trials: int = Field(2000, ge=1)
    point: int | None = Field(None, ge=0)
    generation: int = Field(1, ge=0)


class HaarExperiment(ExperimentBase):
    kind: Literal["haar"]
    tree: str = "dyadic:levels=6"
    functions: int = Field(100, ge=1)
    instances: int = Field(1000, ge=1)


class EmbeddingExperiment(ExperimentBase):
    kind: Literal["embedding"]
    tree: str = "dyadic:levels=6"
    instances: int = Field(1000, ge=1)
    sigma_spread: float = Field(4.0, ge=1.0)


class BellmanExperiment(ExperimentBase):
    kind: Literal["bellman"]
    alphas: list[float] = [0.1, 0.25, 0.4]
    Qs: list[float] = [2.0, 10.0, 100.0]
    samples: int = Field(100_000, ge=1)


class WeightFamily(ExperimentBase):
    weights: str | None = None
    targets: list[float] | None = None

    def build(self, space: FiniteMetricSpace, measure: DoublingMeasure) -> list[Weight]:
        if self.weights is not None:
            return load_weights(space, measure, self.weights)
        targets = self.targets if self.targets is not None else np.logspace(0.0, 3.0, 25).tolist()
        return power_weight_family(space, measure, targets=targets)


class TauExperimentConfig(WeightFamily):
    kind: Literal["tau"]
    tree: str = "dyadic:levels=10"
    alpha: float = Field(0.25, gt=0.0, lt=0.5)
    targets: list[float] | None = [2.0, 10.0, 100.0, 1000.0]


class ShiftBenchExperiment(WeightFamily):
    kind: Literal["shift-bench"]
    tree: str = "dyadic:levels=9"
    complexities: list[tuple[int, int]] = [(0, 0), (1, 0), (1, 1), (2, 2)]
    draws: int = Field(20, ge=1)
    source: Literal["random", "sign_pattern"] = "random"
    alpha: float = Field(0.25, gt=0.0, lt=0.5)
    stopping: bool = True


class ParaproductExperimentConfig(WeightFamily):
    kind: Literal["paraproduct"]
    tree: str = "dyadic:levels=8"
    kernel: Literal["inv-dist", "hilbert"] = "inv-dist"
    profile: Literal["distance", "measure"] = "distance"


class DecayExperiment(ExperimentBase):
    kind: Literal["decay"]
    spaces: list[str] = ["net1d:n=64", "net1d:n=256"]
    kernel: Literal["inv-dist", "hilbert", "zero"] = "inv-dist"
    profile: Literal["distance", "measure"] = "distance"
    holder_eps: float = Field(1.0, gt=0.0, le=1.0)
    delta: float = Field(0.25, gt=0.0, le=0.25)
    levels: int | None = Field(None, ge=1)
    gamma: float = Field(0.25, gt=0.0, lt=1.0)
    r: int = Field(2, ge=1)
    stability_factor: float = Field(2.0, ge=1.0)
    s0: int = Field(0, ge=0)
    ancestor_offset: int = Field(10, ge=0)


class AvgIdentityExperiment(ExperimentBase):
    kind: Literal["avg-identity"]
    spaces: list[str] = ["random:n=4:seed=1"]
    delta: float = Field(0.25, gt=0.0, le=0.25)
    levels: int = Field(2, ge=1)
    gamma: float = Field(0.25, gt=0.0, lt=1.0)
    r: int = Field(1, ge=1)
    a: float | None = Field(None, ge=0.0, le=1.0)
    operators: int = Field(5, ge=1)
    pairs: int = Field(5, ge=1)


class ContainmentExperiment(ExperimentBase):
    kind: Literal["containment"]
    space: str
    delta: float = Field(0.25, gt=0.0, le=0.25)
    levels: int = Field(3, ge=1)
    s0_values: list[int] = Field([0, 1, 2, 3, 4], min_length=1)
    trials: int = Field(200, ge=1)
    ancestor_offset: int = Field(0, ge=0)
    exact: bool = False
    good_only: bool = False
    gamma: float = Field(0.25, gt=0.0, lt=1.0)
    r: int = Field(1, ge=1)


ExperimentSpec = Annotated[
    CoverExperiment
    | GridLawsExperiment
    | CensusExperiment
    | PbadExperiment
    | BoundaryExperiment
    | HaarExperiment
    | EmbeddingExperiment
    | BellmanExperiment
    | TauExperimentConfig
    | ShiftBenchExperiment
    | ParaproductExperimentConfig
    | DecayExperiment
    | AvgIdentityExperiment
    | ContainmentExperiment,
    Field(discriminator="kind"),
]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int
    experiments: list[ExperimentSpec] = []
    threads: int | None = Field(None, ge=1)
    formats: list[Literal["json", "csv", "xlsx"]] = ["json", "csv"]
    out_dir: str | None = None


# ============================================================
# LATTICE EXPERIMENTS
# ============================================================


def _lattice_trial(trial: int, space: FiniteMetricSpace, hierarchy: HierarchyParams, laws: bool) -> dict:
    sample = build_hierarchy(space, hierarchy, trial=trial)
    result: dict = {"error": None, "chain": 0.0, "cover": 0.0, "approximate": sample.approximate, "laws": None}
    try:
        report = verify_cover(space, sample)
        result.update(chain=report.worst_chain_ratio, cover=report.worst_cover_ratio)
    except (CoverGap, ProximityViolation) as e:
        result["error"] = e.error_code.value
    if laws:
        result["laws"] = check_grid_laws(space, sample).model_dump()
    return result


def run_lattice_sweep(spec: CoverExperiment | GridLawsExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    laws = spec.kind == "grid-laws"
    rows = []
    passed = True
    for space_spec in spec.spaces:
        space = load_space(space_spec)
        for delta in spec.deltas:
            hierarchy = HierarchyParams(delta=delta, levels=spec.levels, seed=seed)
            fn = partial(_lattice_trial, space=space, hierarchy=hierarchy, laws=laws)
            results = parallel_map(fn, range(spec.samples), workers)
            failures = sum(r["error"] is not None for r in results)
            entry = {
                "space": space_spec,
                "delta": delta,
                "samples": spec.samples,
                "cover_failures": failures,
                "worst_chain_ratio": max(r["chain"] for r in results),
                "worst_cover_ratio": max(r["cover"] for r in results),
                "approximate": sum(r["approximate"] for r in results),
            }
            violations = failures
            if laws:
                counts = [r["laws"] for r in results]
                for key in (
                    "separation_violations",
                    "maximality_violations",
                    "nesting_violations",
                    "cover_violations",
                    "chain_separation_violations",
                    "qualifying_chains",
                ):
                    entry[key] = sum(c[key] for c in counts)
                violations += sum(
                    entry[key]
                    for key in (
                        "separation_violations",
                        "maximality_violations",
                        "nesting_violations",
                        "cover_violations",
                        "chain_separation_violations",
                    )
                )
                if spec.frequency_trials:
                    check = sampling_frequency_check(space, hierarchy, spec.frequency_trials, workers)
                    entry.update(
                        frequency_events=check.events,
                        frequency_pvalue=check.pvalue,
                        frequency_unexpected=check.unexpected,
                    )
                    violations += check.unexpected + int(check.pvalue < 1e-3)
            passed &= violations == 0
            rows.append(row(**entry))
    measured = {
        "configurations": len(rows),
        "worst_chain_ratio": max(r["worst_chain_ratio"] for r in rows),
        "cover_failures": sum(r["cover_failures"] for r in rows),
    }
    return outcome(passed, measured, {"lattices": rows})


def run_census(spec: CensusExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    spaces = [(s, load_space(s)) for s in spec.spaces]
    for i in range(spec.random_spaces):
        n = 2 + i % (spec.max_points - 1)
        spaces.append((f"random:n={n}:seed={seed + i}", random_euclidean_space(n, seed + i)))
    rows = []
    for name, space in spaces:
        if space.n > spec.max_points:
            raise config_error(f"census space '{name}' has {space.n} points, above max_points", "spaces")
        for v in range(space.n):
            report = verify_injectivity(space, v)
            rows.append(
                row(
                    space=name,
                    v=v,
                    colorings=report.colorings,
                    card_b=report.card_b,
                    fraction=report.fraction,
                    occupancy=report.occupancy,
                    bound=report.bound,
                    holds=report.bound_holds,
                )
            )
    passed = all(r["holds"] for r in rows)
    worst = min((r["fraction"] / r["bound"] for r in rows), default=math.inf)
    return outcome(passed, {"spaces": len(spaces), "points": len(rows), "worst_fraction_over_bound": worst}, {"census": rows})


def run_pbad(spec: PbadExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    space = load_space(spec.space)
    hierarchy = HierarchyParams(delta=spec.delta, levels=spec.levels, seed=seed)
    a = spec.a if spec.a is not None else derive_a(space, hierarchy)
    params = GoodnessParams(gamma=spec.gamma, a=a)
    point = space.n // 2 if spec.point is None else spec.point
    sweep = bad_probability_sweep(
        space, hierarchy, params, point, spec.r_values, spec.trials, spec.generation, spec.exact, workers
    )
    rows = [row(r=r.r, frequency=r.frequency, stderr=r.stderr, exact=r.exact) for r in sweep.rows]
    measured = {
        "a": a,
        "threshold_r": sweep.threshold_r,
        "decay_exponent": sweep.decay_exponent,
        "expected_exponent": sweep.expected_exponent,
        "fit_points": sweep.fit_points,
    }
    return outcome(sweep.threshold_r is not None and sweep.decay_ok, measured, {"pbad": rows})


def run_boundary(spec: BoundaryExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    space = load_space(spec.space)
    hierarchy = HierarchyParams(delta=spec.delta, levels=spec.levels, seed=seed)
    a = spec.a if spec.a is not None else derive_a(space, hierarchy)
    point = space.n // 2 if spec.point is None else spec.point
    sweep = boundary_hit_probability(
        space, hierarchy, point, spec.eps_values, spec.trials, spec.generation, a=a, workers=workers
    )
    rows = [row(eps=r.eps, frequency=r.frequency, stderr=r.stderr, bound=r.bound) for r in sweep.rows]
    measured = {
        "eta": sweep.eta,
        "slope": sweep.slope,
        "fitted_constant": sweep.fitted_constant,
        "fit_points": sweep.fit_points,
    }
    return outcome(sweep.slope_ok, measured, {"boundary": rows})


# ============================================================
# HAAR & WEIGHT EXPERIMENTS
# ============================================================


def _random_measure(n: int, seed: int) -> DoublingMeasure:
    return DoublingMeasure(mass=stream(seed, 0, INPUT, n).uniform(0.5, 2.0, size=n))


def run_haar(spec: HaarExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    tree, space = load_tree(spec.tree)
    measure = _random_measure(space.n, seed)
    system = build_haar_system(tree, measure)
    gram = (system.vectors * measure.mass[None, :]) @ system.vectors.T
    orthonormality = float(np.max(np.abs(gram - np.eye(system.size)))) if system.size else 0.0
    mean_zero = float(np.max(np.abs(system.vectors @ measure.mass))) if system.size else 0.0

    rng = stream(seed, 1, INPUT, space.n)
    parseval = max(parseval_residual(system, measure, rng.normal(size=space.n)) for _ in range(spec.functions))

    rows = []
    weights = max(1, math.ceil(spec.instances / max(system.size, 1)))
    for i in range(weights):
        w = np.exp(stream(seed, i, INPUT, space.n, 1).normal(0.0, 1.5, size=space.n))
        checks = check_decomposition(system, w, measure)
        chain = chain_inequality_check(tree, w, measure, space)
        rows.append(
            row(
                weight=i,
                **checks.model_dump(),
                chain_slack=chain.cube_slack,
                chain_ball_ratio=chain.ball_ratio,
                chain_passed=chain.passed,
            )
        )

    worst = {
        "residual": max(r["worst_residual"] for r in rows),
        "alpha_slack": min(r["alpha_slack"] for r in rows),
        "beta_slack": min(r["beta_slack"] for r in rows),
        "delta_slack": min(r["delta_slack"] for r in rows),
        "orthogonality": max(r["orthogonality"] for r in rows),
        "normalization": max(r["normalization"] for r in rows),
    }
    passed = (
        orthonormality <= HAAR_TOL
        and mean_zero <= HAAR_TOL
        and parseval <= HAAR_TOL
        and worst["residual"] <= HAAR_TOL
        and worst["orthogonality"] <= HAAR_TOL
        and worst["normalization"] <= HAAR_TOL
        and min(worst["alpha_slack"], worst["beta_slack"], worst["delta_slack"]) >= SPLIT_SLACK_TOL
        and all(r["chain_passed"] for r in rows)
    )
    measured = {
        "rows": system.size,
        "instances": system.size * weights,
        "sup_constant": system.sup_constant,
        "orthonormality": orthonormality,
        "mean_zero": mean_zero,
        "parseval": parseval,
        "alpha_literal_slack": min(r["alpha_literal_slack"] for r in rows),
        "chain_slack": min(r["chain_slack"] for r in rows),
        "chain_ball_ratio": max(r["chain_ball_ratio"] for r in rows),
        **{f"worst_{k}": v for k, v in worst.items()},
    }
    return outcome(passed, measured, {"decomposition": rows})


def _embedding_instance(i: int, tree: CubeTree, measure: DoublingMeasure, seed: int, sigma_spread: float) -> dict:
    rng = stream(seed, i, INPUT, tree.n_points)
    node_mass = tree.indicator.astype(float) @ measure.mass
    alpha = rng.exponential(size=tree.n_nodes) * node_mass * rng.uniform(0.05, 1.0)
    F = rng.lognormal(0.0, 1.0, size=tree.n_points)
    sigma = rng.uniform(1.0, sigma_spread, size=tree.n_points)
    report = carleson_embedding_check(tree, measure, alpha, F, sigma, raise_on_violation=False)
    return report.model_dump()


def run_embedding(spec: EmbeddingExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    tree, space = load_tree(spec.tree)
    measure = uniform_measure(space.n)
    fn = partial(_embedding_instance, tree=tree, measure=measure, seed=seed, sigma_spread=spec.sigma_spread)
    reports = parallel_map(fn, range(spec.instances), workers)
    violations = sum(not r["passed"] for r in reports)
    unit_failures = sum(r["unit_bound_holds"] is False for r in reports)
    worst_fitted = max(r["fitted_constant"] or 0.0 for r in reports)
    # sigma in [1, spread] keeps sup sigma / <sigma> below spread on every cube
    fitted_cap = 2.0 * spec.sigma_spread
    measured = {
        "instances": len(reports),
        "violations": violations,
        "unit_bound_failures": unit_failures,
        "worst_ratio": max(r["ratio"] for r in reports),
        "worst_fitted_constant": worst_fitted,
        "fitted_constant_cap": fitted_cap,
        "worst_sigma_oscillation": max(r["sigma_oscillation"] or 0.0 for r in reports),
    }
    return outcome(violations == 0 and unit_failures == 0 and worst_fitted <= fitted_cap, measured)


def run_bellman(spec: BellmanExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    rows = []
    for alpha in spec.alphas:
        for Q in spec.Qs:
            report = bellman_hessian_check(BellmanParams(alpha=alpha, Q=Q), samples=spec.samples, seed=seed)
            rows.append(row(**report.model_dump()))
    passed = all(r["passed"] for r in rows)
    measured = {
        "worst_slack": min(r["worst_slack"] for r in rows),
        "worst_fd_relative_error": max(r["fd_relative_error"] for r in rows),
    }
    return outcome(passed, measured, {"hessian": rows})


def run_tau(spec: TauExperimentConfig, seed: int, workers: int | None) -> ExperimentOutcome:
    tree, space = load_tree(spec.tree)
    measure = uniform_measure(space.n)
    weights = spec.build(space, measure)
    experiment = tau_carleson_experiment(tree, measure, weights, spec.alpha)
    tree_rows = []
    for weight in weights:
        report = bellman_tree_check(tree, weight, measure, spec.alpha)
        tree_rows.append(
            row(
                label=weight.label,
                a2=weight.a2,
                min_difference=report.min_difference,
                min_ratio=report.min_ratio,
                tau_carleson=report.tau_carleson,
                tau_bound=report.tau_bound,
                passed=report.passed,
            )
        )
    rows = [row(**r.model_dump()) for r in experiment.rows]
    passed = experiment.slope_ok and all(r["passed"] for r in tree_rows)
    return outcome(passed, {"slope": experiment.slope}, {"carleson": rows, "midpoint": tree_rows})


# ============================================================
# SHIFTS & PARAPRODUCTS
# ============================================================


def _stopping_rows(spec: ShiftBenchExperiment, system, measure, weight: Weight, seed: int) -> list[dict]:
    tree = system.tree
    rng = stream(seed, 2, INPUT, tree.n_points)
    phi = rng.normal(size=tree.n_points)
    psi = rng.normal(size=tree.n_points)
    rows = []
    for m, n in spec.complexities:
        families = stopping_families(tree, weight.w, measure, m, n)
        sbor = min(
            (verify_sbor(tree, f, phi, weight.w, measure, spec.alpha, raise_on_violation=False).worst_slack for f in families),
            default=math.inf,
        )
        p_trick = p_trick_check(tree, families, phi, weight.w, measure)
        tau_tilde = tau_tilde_check(tree, weight.w, measure, spec.alpha, m, n)
        shift = assemble_shift(system, measure, m, n, spec.source, seed=seed)
        functionals = sl_rl_functionals(system, shift, phi, psi, weight.w, measure)
        rows.append(
            row(
                m=m,
                n=n,
                families=len(families),
                sbor_slack=sbor,
                p_trick_slack=p_trick.worst_slack,
                tau_tilde_carleson=tau_tilde.tau_tilde_carleson,
                tau_tilde_bound=tau_tilde.bound,
                sl_ok=functionals.sl_ok,
                split_ok=functionals.split_ok,
                passed=sbor >= -settings.A2LAB_SLACK_TOL
                and p_trick.passed
                and tau_tilde.passed
                and functionals.sl_ok
                and functionals.split_ok,
            )
        )
    return rows


def run_shift_bench(spec: ShiftBenchExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    tree, space = load_tree(spec.tree)
    measure = uniform_measure(space.n)
    system = build_haar_system(tree, measure)
    weights = spec.build(space, measure)
    report = shift_bound_experiment(
        system, measure, spec.complexities, weights, spec.draws, seed, spec.source, workers=workers
    )
    slopes = {(f.m, f.n): f.slope for f in report.fits}
    rows = [
        row(complexity=r.m + r.n + 1, m=r.m, n=r.n, a2=r.a2, norm=r.norm, slope=slopes[(r.m, r.n)])
        for r in report.rows
    ]
    fits = [row(**f.model_dump()) for f in report.fits]

    heaviest = max(weights, key=lambda wt: wt.a2)
    checks = []
    for m, n in spec.complexities:
        shift = assemble_shift(system, measure, m, n, spec.source, seed=seed)
        checks.append(row(m=m, n=n, **norm_checks(shift.matrix, heaviest.w, measure.mass).model_dump()))
    tables = {"shift": rows, "fits": fits, "norm_checks": checks}
    passed = report.passed and all(c["passed"] for c in checks)
    if spec.stopping:
        tables["stopping"] = _stopping_rows(spec, system, measure, heaviest, seed)
        passed &= all(r["passed"] for r in tables["stopping"])
    measured = {
        "weights": len(weights),
        "complexity_exponent": report.complexity_exponent,
        "worst_slope": max(f.slope for f in report.fits),
    }
    return outcome(passed, measured, tables)


def _node_coefficients(system, b: np.ndarray) -> np.ndarray:
    """Per-cube sqrt of the summed squared row coefficients"""
    return np.sqrt(np.bincount(system.node, weights=np.asarray(b) ** 2, minlength=system.tree.n_nodes))


def run_paraproduct(spec: ParaproductExperimentConfig, seed: int, workers: int | None) -> ExperimentOutcome:
    tree, space = load_tree(spec.tree)
    measure = uniform_measure(space.n)
    operator = build_model_operator(space, measure, spec.kernel, KernelProfile(kind=spec.profile))
    system = build_haar_system(tree, measure)
    pi, pi_star, o = build_paraproducts(system, measure, operator.matrix)
    identities = paraproduct_identities(system, measure, operator.matrix, seed=seed)
    weights = spec.build(space, measure)

    tables = {}
    slopes = {}
    for pp in (pi, pi_star):
        experiment = paraproduct_norm_experiment(system, measure, pp, weights, workers)
        slopes[pp.kind] = experiment
        tables[pp.kind] = [row(**r.model_dump()) for r in experiment.rows]
    b_node = _node_coefficients(system, pi.b)
    ainfty = [ainfty_inequality_check(tree, wt.w, measure, b_node) for wt in weights]
    tables["ainfty"] = [row(label=wt.label, **a.model_dump()) for wt, a in zip(weights, ainfty, strict=True)]
    o_reports = [row(**o_operator_check(o, operator.matrix, measure, wt).model_dump()) for wt in weights]
    tables["o"] = o_reports

    passed = (
        identities.passed
        and all(e.slope_ok for e in slopes.values())
        and all(a.passed for a in ainfty)
        and all(r["passed"] for r in o_reports)
    )
    measured = {
        "carleson": slopes["pi"].carleson,
        "pi_slope": slopes["pi"].slope,
        "pi_star_slope": slopes["pi_star"].slope,
        "constant_residual": identities.constant_residual,
        "adjoint_residual": identities.adjoint_residual,
        "duality_residual": identities.duality_residual,
        "size_constant": operator.size_constant,
        "holder_x": operator.holder_x,
    }
    return outcome(passed, measured, tables)


# ============================================================
# DECOMPOSITION EXPERIMENTS
# ============================================================


def auto_levels(space: FiniteMetricSpace, delta: float) -> int:
    """Least N with delta^N below the minimal spacing, so the finest grid is every point"""
    if space.n < 2:
        return 1
    return max(1, math.ceil(math.log(space.min_spacing) / math.log(delta) - 1e-12))


def _leaf_function(tree: CubeTree, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=tree.n_nodes)[tree.point_node[tree.depth]]


def _stable(values: list[float], factor: float) -> bool:
    positive = [v for v in values if v > 0]
    if any(not math.isfinite(v) for v in values):
        return False
    return len(positive) < 2 or max(positive) <= factor * min(positive)


def run_decay(spec: DecayExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    profile = KernelProfile(kind=spec.profile, holder_eps=spec.holder_eps)
    summary, in_rows, out_rows, families = [], [], [], []
    passed = True
    for space_spec in spec.spaces:
        space = load_space(space_spec)
        measure = uniform_measure(space.n)
        levels = spec.levels or auto_levels(space, spec.delta)
        sample = build_hierarchy(space, HierarchyParams(delta=spec.delta, levels=levels, seed=seed))
        goodness = GoodnessParams(gamma=spec.gamma, r=spec.r, eps_cz=spec.holder_eps)
        operator = build_model_operator(space, measure, spec.kernel, profile)

        report_in = decay_check_in(space, sample, operator, measure, goodness)
        report_out = decay_check_out(space, sample, operator, measure, goodness)
        tree = CubeTree.from_sample(sample)
        system = build_haar_system(tree, measure)
        _, subtraction = subtract_paraproducts(system, measure, operator.matrix, space)

        rng = stream(seed, 0, INPUT, space.n, 7)
        f, g = _leaf_function(tree, rng), _leaf_function(tree, rng)
        extraction = extract_shifts(
            space, sample, operator, measure, goodness, f, g, spec.s0, spec.ancestor_offset
        )
        representation = representation_identity_check(space, sample, operator.matrix, measure, f, g)

        in_rows += [row(space=space_spec, gap=r.key, pairs=r.pairs, max_ratio=r.max_ratio) for r in report_in.rows]
        out_rows += [row(space=space_spec, s=r.key, pairs=r.pairs, max_ratio=r.max_ratio) for r in report_out.rows]
        families += [
            row(space=space_spec, **{k: v for k, v in fam.model_dump().items() if k != "key"}) for fam in extraction.families
        ]
        summary.append(
            row(
                space=space_spec,
                points=space.n,
                levels=levels,
                in_pairs=report_in.pairs,
                in_worst=report_in.worst_ratio,
                comparability=report_in.comparability,
                out_pairs=report_out.pairs,
                out_worst=report_out.worst_ratio,
                subtraction_residual=max(subtraction.disjoint_residual, subtraction.constant_residual),
                representation_residual=representation.residual,
                extracted_shifts=len(extraction.shifts),
                excluded_out=extraction.excluded_out,
                extraction_ok=extraction.passed,
            )
        )
        passed &= subtraction.passed and representation.passed and extraction.passed

    stable_in = _stable([r["in_worst"] for r in summary], spec.stability_factor)
    stable_out = _stable([r["out_worst"] for r in summary], spec.stability_factor)
    measured = {
        "in_worst": max(r["in_worst"] for r in summary),
        "out_worst": max(r["out_worst"] for r in summary),
        "in_stable": stable_in,
        "out_stable": stable_out,
    }
    tables = {"summary": summary, "decay_in": in_rows, "decay_out": out_rows, "families": families}
    return outcome(passed and stable_in and stable_out, measured, tables)


def run_avg_identity(spec: AvgIdentityExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    goodness = GoodnessParams(gamma=spec.gamma, r=spec.r)
    rows = []
    for space_spec in spec.spaces:
        space = load_space(space_spec)
        measure = uniform_measure(space.n)
        hierarchy = HierarchyParams(delta=spec.delta, levels=spec.levels, seed=seed)
        cells = leaf_cells(space, hierarchy)
        for op in range(spec.operators):
            rng = stream(seed, op, COEFFICIENT, space.n)
            T = rng.normal(size=(space.n, space.n))
            functions = [
                (rng.normal(size=space.n)[cells], rng.normal(size=space.n)[cells]) for _ in range(spec.pairs)
            ]
            report = averaging_identity_check(space, hierarchy, goodness, T, measure, functions, a=spec.a)
            rows.append(
                row(
                    space=space_spec,
                    operator=op,
                    events=report.events,
                    a=report.a,
                    worst_residual=report.worst_residual,
                    passed=report.passed,
                )
            )
    passed = all(r["passed"] for r in rows)
    return outcome(passed, {"worst_residual": max(r["worst_residual"] for r in rows)}, {"identity": rows})


def run_containment(spec: ContainmentExperiment, seed: int, workers: int | None) -> ExperimentOutcome:
    space = load_space(spec.space)
    hierarchy = HierarchyParams(delta=spec.delta, levels=spec.levels, seed=seed)
    params = GoodnessParams(gamma=spec.gamma, r=spec.r) if spec.good_only else None
    report = containment_probability_check(
        space, hierarchy, spec.s0_values, spec.trials, spec.ancestor_offset, params, spec.exact, workers
    )
    rows = [row(**r.model_dump()) for r in report.rows]
    exact_ok = True
    if spec.exact:
        for r in report.rows:
            margin = 3.0 * (0.0 if math.isnan(r.stderr) else r.stderr) + 1e-12
            exact_ok &= r.exact is None or math.isnan(r.exact) or abs(r.frequency - r.exact) <= margin
    measured = {"threshold_s0": report.threshold_s0, "monotone": report.monotone, "exact_ok": exact_ok}
    return outcome(report.threshold_s0 is not None and exact_ok, measured, {"containment": rows})


# ============================================================
# ORCHESTRATION
# ============================================================

RUNNERS: dict[str, Callable[..., ExperimentOutcome]] = {
    "cover": run_lattice_sweep,
    "grid-laws": run_lattice_sweep,
    "census": run_census,
    "pbad": run_pbad,
    "boundary": run_boundary,
    "haar": run_haar,
    "embedding": run_embedding,
    "bellman": run_bellman,
    "tau": run_tau,
    "shift-bench": run_shift_bench,
    "paraproduct": run_paraproduct,
    "decay": run_decay,
    "avg-identity": run_avg_identity,
    "containment": run_containment,
}


def _run_one(index: int, spec: ExperimentBase, seed: int, workers: int) -> ExperimentResult:
    start = time.perf_counter()
    try:
        with ExperimentLogContext(spec.kind, seed):
            result = ServiceResult.ok(timed(spec.kind)(RUNNERS[spec.kind])(spec, seed, workers))
    except ConfigError:
        raise
    except LabException as e:
        result = ServiceResult.from_exception(e)
    runtime = time.perf_counter() - start

    if result.success:
        data = result.value
        return ExperimentResult(
            index=index,
            kind=spec.kind,
            label=spec.label,
            passed=data.passed,
            seed=seed,
            runtime_seconds=runtime,
            measured=data.measured,
            tables=data.tables,
        )
    return ExperimentResult(
        index=index,
        kind=spec.kind,
        label=spec.label,
        passed=False,
        seed=seed,
        runtime_seconds=runtime,
        error=result.error_record(),
    )


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> Report:
    """Execute the listed experiments in order; a module error fails its experiment and the run continues"""
    workers = workers or config.threads or settings.A2LAB_THREADS
    payload = config.model_dump(mode="json", exclude={"threads", "formats", "out_dir"})
    report = Report(metadata=build_metadata(payload, config.seed, workers))
    for index, spec in enumerate(config.experiments):
        report.experiments.append(_run_one(index, spec, config.seed, workers))
        logger.info(f"[{index}] {spec.kind}: {'PASS' if report.experiments[-1].passed else 'FAIL'}")
    return report
