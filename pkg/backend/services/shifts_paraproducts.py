"""
Shifts & Paraproducts Service
Dyadic shifts of complexity (m, n) assembled on a Haar system, their exact norms on L2(w dmu),
stopping families with the R_L / S_L functionals, and the paraproducts pi, pi_* and o.
"""

import logging
import math
from functools import partial
from typing import Literal

import numpy as np
from pydantic import field_validator
from scipy import linalg

from backend.core.config import settings
from backend.core.errors import config_error, invariant_violation
from backend.core.exceptions import NoConvergence, TreeTooShallow
from backend.core.models import ArrayModel, CoreModel, frozen_array
from backend.core.number_utils import loglog_slope, slack
from backend.core.parallel import parallel_map
from backend.core.rng import COEFFICIENT, INPUT, stream
from backend.services.bellman import aggregate_tau, tau_sequence
from backend.services.haar_weights import (
    HaarSystem,
    Weight,
    carleson_constant,
    delta_weight,
    node_averages,
    split_coefficients,
)
from backend.services.metric_core import DoublingMeasure
from backend.services.random_lattice import CubeTree

logger = logging.getLogger(__name__)

SLOPE_TOLERANCE = 0.05
BOUND_TOL = 1e-12
CROSS_CHECK_TOL = 1e-6

CoefficientSource = Literal["random", "haar_multiplier", "kernel", "sign_pattern", "zero"]
ParaproductKind = Literal["pi", "pi_star", "o"]


# ============================================================
# DOMAIN TYPES
# ============================================================


class DyadicShift(ArrayModel):
    """
    Coefficients c_{L,I,J} stored by Haar row: L[k] is the top cube, I_rows[k] / J_rows[k]
    the rows of h_I and h_J, bounds[k] = sqrt(mu(I) mu(J)) / mu(L).
    matrix[x, y] = sum c h_J(x) h_I(y) mu(y), so matrix @ f = sum c (f, h_I)_mu h_J.
    """

    m: int
    n: int
    source: str
    L: np.ndarray
    I_rows: np.ndarray
    J_rows: np.ndarray
    coeffs: np.ndarray
    bounds: np.ndarray
    matrix: np.ndarray
    clamped: int = 0

    @field_validator("L", "I_rows", "J_rows", mode="before")
    @classmethod
    def _freeze_int(cls, v):
        return frozen_array(v, dtype=int)

    @field_validator("coeffs", "bounds", "matrix", mode="before")
    @classmethod
    def _freeze_float(cls, v):
        return frozen_array(v)

    @property
    def terms(self) -> int:
        return int(self.coeffs.size)

    @property
    def max_normalized(self) -> float:
        if self.coeffs.size == 0:
            return 0.0
        return float(np.max(np.abs(self.coeffs) / self.bounds))


class StoppingFamily(CoreModel):
    root: int
    m: int
    n: int
    p: float
    members: list[int]
    criteria: list[Literal["ratio", "generation"]]
    worst_path_ratio: float
    covers_root: bool


class SborRow(CoreModel):
    cube: int
    criterion: str
    lhs: float
    rhs: float


class SborReport(CoreModel):
    root: int
    constant: float
    rows: list[SborRow]
    worst_slack: float
    passed: bool


class FunctionalRow(CoreModel):
    root: int
    s_phi: float
    r_phi: float
    s_psi: float
    r_psi: float
    sl_slack: float


class FunctionalReport(CoreModel):
    m: int
    n: int
    rows: list[FunctionalRow]
    form: float
    terms: dict[str, float]
    term_bounds: dict[str, float]
    split_sum: float
    sl_ok: bool
    split_ok: bool


class ShiftNormRow(CoreModel):
    m: int
    n: int
    label: str
    a2: float
    norm: float
    unweighted: float


class ComplexityFit(CoreModel):
    m: int
    n: int
    slope: float
    slope_ok: bool
    constant: float
    unweighted_constant: float


class ShiftBenchReport(CoreModel):
    source: str
    draws: int
    rows: list[ShiftNormRow]
    fits: list[ComplexityFit]
    complexity_exponent: float | None
    passed: bool


class Paraproduct(ArrayModel):
    kind: ParaproductKind
    b: np.ndarray
    matrix: np.ndarray

    @field_validator("b", "matrix", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)


class ParaproductIdentities(CoreModel):
    constant_residual: float
    adjoint_residual: float
    duality_residual: float
    passed: bool


class ParaproductRow(CoreModel):
    label: str
    a2: float
    norm: float
    normalized: float


class ParaproductExperiment(CoreModel):
    kind: str
    carleson: float
    sqrt_carleson: float
    rows: list[ParaproductRow]
    slope: float
    slope_ok: bool


class OBoundReport(CoreModel):
    label: str
    norm: float
    exact: float
    bound: float
    passed: bool


class TauTildeReport(CoreModel):
    m: int
    n: int
    roots: int
    tau_carleson: float
    tau_tilde_carleson: float
    bound: float
    passed: bool


class PTrickReport(CoreModel):
    families: int
    p: float
    worst_slack: float
    passed: bool


class NormChecks(CoreModel):
    dense: float
    power: float
    scaled: float
    cross_check_error: float
    scale_error: float
    passed: bool


# ============================================================
# SHIFT ASSEMBLY
# ============================================================


def _row_ancestors(system: HaarSystem) -> np.ndarray:
    """anc[row, g] = cube of generation g containing the cube of row"""
    tree = system.tree
    firsts = tree.first_member[system.node]
    return tree.point_node[:, firsts].T


def rows_below(system: HaarSystem, ancestors: np.ndarray, L: int, g: int) -> np.ndarray:
    """Haar rows of the cubes of generation g inside L"""
    tree = system.tree
    row_gen = tree.generation[system.node]
    gL = int(tree.generation[L])
    if g > tree.depth:
        return np.empty(0, dtype=int)
    return np.flatnonzero((row_gen == g) & (ancestors[:, gL] == L))


def shift_matrix(system: HaarSystem, measure: DoublingMeasure, J_rows, I_rows, coeffs) -> np.ndarray:
    n_points = system.tree.n_points
    if system.size == 0:
        return np.zeros((n_points, n_points))
    C = np.zeros((system.size, system.size))
    np.add.at(C, (np.asarray(J_rows, dtype=int), np.asarray(I_rows, dtype=int)), np.asarray(coeffs, dtype=float))
    return system.vectors.T @ C @ (system.vectors * measure.mass[None, :])


def assemble_shift(
    system: HaarSystem,
    measure: DoublingMeasure,
    m: int,
    n: int,
    source: CoefficientSource = "random",
    seed: int = 0,
    trial: int = 0,
    operator: np.ndarray | None = None,
    f: np.ndarray | None = None,
    g: np.ndarray | None = None,
) -> DyadicShift:
    """
    Shift of complexity (m, n) with one term per (L, h_I, h_J), g(I) = g(L)+m, g(J) = g(L)+n.
    Coefficients exceeding sqrt(mu(I) mu(J)) / mu(L) are clamped and counted.
    """
    tree = system.tree
    if m < 0 or n < 0:
        raise config_error("complexities must be non-negative", "complexity")
    if tree.depth < max(m, n):
        raise TreeTooShallow(tree.depth, max(m, n))
    if source == "haar_multiplier" and (m, n) != (0, 0):
        raise config_error("Haar multipliers have complexity (0, 0)", "source")
    if source == "kernel" and operator is None:
        raise config_error("kernel coefficients need an operator", "source")

    mass = system.node_mass
    ancestors = _row_ancestors(system)
    if source == "sign_pattern":
        rng = stream(seed, trial, INPUT, m, n)
        f = rng.standard_normal(tree.n_points) if f is None else np.asarray(f, dtype=float)
        g = rng.standard_normal(tree.n_points) if g is None else np.asarray(g, dtype=float)
        f_coef, g_coef = system.coefficients(f, measure), system.coefficients(g, measure)
    if source == "kernel":
        weighted = system.vectors * measure.mass[None, :]
        kernel_coef = weighted @ np.asarray(operator, dtype=float) @ system.vectors.T

    Ls, Is, Js, cs, bs = [], [], [], [], []
    clamped = 0
    for L in range(tree.n_nodes):
        gL = int(tree.generation[L])
        i_rows = rows_below(system, ancestors, L, gL + m)
        j_rows = rows_below(system, ancestors, L, gL + n)
        if i_rows.size == 0 or j_rows.size == 0:
            continue
        bound = np.sqrt(np.outer(mass[system.node[j_rows]], mass[system.node[i_rows]])) / mass[L]
        if source == "random":
            c = bound * stream(seed, trial, COEFFICIENT, m, n, L).uniform(-1.0, 1.0, bound.shape)
        elif source == "haar_multiplier":
            signs = stream(seed, trial, COEFFICIENT, 0, 0, L).choice([-1.0, 1.0], size=i_rows.size)
            c = np.where(j_rows[:, None] == i_rows[None, :], signs[None, :], 0.0)
        elif source == "kernel":
            c = kernel_coef[np.ix_(j_rows, i_rows)]
        elif source == "sign_pattern":
            c = bound * np.sign(np.outer(g_coef[j_rows], f_coef[i_rows]))
        else:
            c = np.zeros(bound.shape)
        over = np.abs(c) > bound * (1.0 + BOUND_TOL)
        clamped += int(over.sum())
        c = np.clip(c, -bound, bound)
        jj, ii = np.meshgrid(j_rows, i_rows, indexing="ij")
        Ls.append(np.full(c.size, L))
        Is.append(ii.ravel())
        Js.append(jj.ravel())
        cs.append(c.ravel())
        bs.append(bound.ravel())

    def _cat(parts, dtype=float):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

    I_rows, J_rows, coeffs = _cat(Is, int), _cat(Js, int), _cat(cs)
    if clamped:
        logger.warning(f"Shift ({m},{n}) from {source}: clamped {clamped} coefficients to the admissible bound")
    return DyadicShift(
        m=m,
        n=n,
        source=source,
        L=_cat(Ls, int),
        I_rows=I_rows,
        J_rows=J_rows,
        coeffs=coeffs,
        bounds=_cat(bs),
        matrix=shift_matrix(system, measure, J_rows, I_rows, coeffs),
        clamped=clamped,
    )


# ============================================================
# WEIGHTED NORMS
# ============================================================


def _similarity(S: np.ndarray, w: np.ndarray, mass: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.asarray(w, dtype=float) * np.asarray(mass, dtype=float))
    return d[:, None] * np.asarray(S, dtype=float) / d[None, :]


def _power_norm(A: np.ndarray, tol: float, max_iter: int) -> float:
    v = stream(0, 0, INPUT, A.shape[1]).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for iteration in range(1, max_iter + 1):
        u = A.T @ (A @ v)
        size = float(np.linalg.norm(u))
        if size == 0.0:
            return 0.0
        v = u / size
        previous, estimate = estimate, math.sqrt(size)
        if abs(estimate - previous) <= tol * estimate:
            logger.debug(f"Power iteration converged after {iteration} steps")
            return estimate
    raise NoConvergence(max_iter, abs(estimate - previous) / max(estimate, 1e-300))


def weighted_operator_norm(
    S: np.ndarray,
    w: np.ndarray,
    mass: np.ndarray,
    mode: Literal["auto", "dense", "power"] = "auto",
) -> float:
    """
    Norm of S on L2(w dmu): the largest singular value of D^(1/2) S D^(-1/2), D = diag(w mu).
    Dense SVD up to A2LAB_DENSE_MAX_DIM, power iteration beyond or on request.
    """
    A = _similarity(S, w, mass)
    if mode == "power" or (mode == "auto" and A.shape[0] > settings.A2LAB_DENSE_MAX_DIM):
        return _power_norm(A, settings.A2LAB_POWER_TOL, settings.A2LAB_POWER_MAX_ITER)
    if not np.any(A):
        return 0.0
    return float(linalg.svdvals(A)[0])


def norm_checks(S: np.ndarray, w: np.ndarray, mass: np.ndarray, scale: float = 7.5) -> NormChecks:
    """Dense against power iteration, and invariance under w -> c w"""
    dense = weighted_operator_norm(S, w, mass, mode="dense")
    power = weighted_operator_norm(S, w, mass, mode="power")
    scaled = weighted_operator_norm(S, scale * np.asarray(w, dtype=float), mass, mode="dense")
    cross = abs(dense - power) / max(dense, 1e-300) if dense > 0 else abs(power)
    scale_error = abs(dense - scaled) / max(dense, 1e-300) if dense > 0 else abs(scaled)
    return NormChecks(
        dense=dense,
        power=power,
        scaled=scaled,
        cross_check_error=cross,
        scale_error=scale_error,
        passed=cross <= CROSS_CHECK_TOL and scale_error <= 1e-10,
    )


def _cell_norm(cell: tuple[list[np.ndarray], np.ndarray], mass: np.ndarray) -> float:
    matrices, w = cell
    return max(weighted_operator_norm(S, w, mass) for S in matrices)


def shift_bound_experiment(
    system: HaarSystem,
    measure: DoublingMeasure,
    complexities: list[tuple[int, int]],
    weights: list[Weight],
    draws: int = 3,
    seed: int = 0,
    source: CoefficientSource = "random",
    operator: np.ndarray | None = None,
    workers: int | None = None,
) -> ShiftBenchReport:
    """
    Worst norm over coefficient draws for every (complexity, weight) cell, the log-log slope
    against [w]_2 per complexity and the fitted exponent of (m+n+1) in max norm / [w]_2.
    """
    mass = measure.mass
    unit = np.ones(system.tree.n_points)
    shifts = {
        (m, n): [
            assemble_shift(system, measure, m, n, source, seed=seed, trial=t, operator=operator).matrix
            for t in range(draws)
        ]
        for m, n in complexities
    }
    cells = [(shifts[mn], weight.w) for mn in complexities for weight in weights]
    norms = parallel_map(partial(_cell_norm, mass=mass), cells, workers)
    unweighted = {mn: _cell_norm((shifts[mn], unit), mass) for mn in complexities}

    rows, fits = [], []
    for k, (m, n) in enumerate(complexities):
        chunk = norms[k * len(weights) : (k + 1) * len(weights)]
        for weight, norm in zip(weights, chunk, strict=True):
            rows.append(ShiftNormRow(m=m, n=n, label=weight.label, a2=weight.a2, norm=norm, unweighted=unweighted[(m, n)]))
        slope = loglog_slope(np.array([w.a2 for w in weights]), np.array(chunk))
        slope = 0.0 if math.isnan(slope) else slope
        fits.append(
            ComplexityFit(
                m=m,
                n=n,
                slope=slope,
                slope_ok=slope <= 1.0 + SLOPE_TOLERANCE,
                constant=max((v / w.a2 for v, w in zip(chunk, weights, strict=True)), default=0.0),
                unweighted_constant=unweighted[(m, n)] / (m + n + 1),
            )
        )

    exponent = loglog_slope(np.array([f.m + f.n + 1 for f in fits]), np.array([f.constant for f in fits]))
    logger.info(f"Shift bench: {len(complexities)} complexities x {len(weights)} weights, exponent {exponent:.3g}")
    return ShiftBenchReport(
        source=source,
        draws=draws,
        rows=rows,
        fits=fits,
        complexity_exponent=None if math.isnan(exponent) else exponent,
        passed=all(f.slope_ok for f in fits),
    )


# ============================================================
# STOPPING FAMILIES
# ============================================================


def build_stopping_family(
    tree: CubeTree,
    L: int,
    w: np.ndarray,
    measure: DoublingMeasure,
    m: int,
    n: int,
) -> StoppingFamily:
    """
    Maximal K inside L with Delta_K w / <w>_K >= 1/(m+n+1) (or the same for sigma),
    or g(K) = g(L) + m. Records the worst |<v>_son / <v>_father - 1| (m+n+1) over the
    father/son pairs strictly above a stopping cube.
    """
    w = np.asarray(w, dtype=float)
    sigma = 1.0 / w
    avg_w, avg_s = node_averages(tree, w, measure), node_averages(tree, sigma, measure)
    ratio_w = delta_weight(tree, w, measure) / avg_w
    ratio_s = delta_weight(tree, sigma, measure) / avg_s
    N = m + n + 1
    target = int(tree.generation[L]) + m

    members, criteria = [], []
    worst = 0.0
    stack = [L]
    while stack:
        K = stack.pop()
        if ratio_w[K] >= 1.0 / N or ratio_s[K] >= 1.0 / N:
            members.append(K)
            criteria.append("ratio")
            continue
        if int(tree.generation[K]) == target:
            members.append(K)
            criteria.append("generation")
            continue
        sons = list(tree.children[K])
        if not sons:
            raise TreeTooShallow(tree.depth, target)
        worst = max(
            worst,
            float(np.max(np.abs(avg_w[sons] / avg_w[K] - 1.0))) * N,
            float(np.max(np.abs(avg_s[sons] / avg_s[K] - 1.0))) * N,
        )
        stack.extend(reversed(sons))

    order = np.argsort(members, kind="stable")
    members = [int(members[i]) for i in order]
    criteria = [criteria[i] for i in order]
    coverage = tree.indicator[members].sum(axis=0)
    covers = bool(np.array_equal(coverage, tree.indicator[L].astype(int)))
    return StoppingFamily(
        root=L,
        m=m,
        n=n,
        p=2.0 - 1.0 / N,
        members=members,
        criteria=criteria,
        worst_path_ratio=worst,
        covers_root=covers,
    )


def delta_ratio_constant(tree: CubeTree, measure: DoublingMeasure) -> float:
    """Largest possible Delta_I v / <v>_I over positive v: max over sons of 1/p_s + M - 2"""
    mass = tree.indicator.astype(float) @ measure.mass
    worst = 1.0
    for node, sons in enumerate(tree.children):
        if len(sons) >= 2:
            share = mass[list(sons)] / mass[node]
            worst = max(worst, float(np.max(1.0 / share)) + len(sons) - 2)
    return worst


def verify_sbor(
    tree: CubeTree,
    family: StoppingFamily,
    phi: np.ndarray,
    w: np.ndarray,
    measure: DoublingMeasure,
    alpha: float,
    raise_on_violation: bool = True,
) -> SborReport:
    """
    For every stopping cube K of L:
    sum over I inside K of generation g(L)+m of |<phi w>_I| Delta_I w / <w>_I mu(I) / sqrt(mu(L))
    <= c <|phi| w>_K sqrt(mu(K) / mu(L)) sqrt(tau_K) (<w>_L <sigma>_L)^(-alpha/2),
    c = sqrt(2) c_Delta e^alpha (m+n+1).
    """
    w = np.asarray(w, dtype=float)
    phi = np.asarray(phi, dtype=float)
    L = family.root
    mass = tree.indicator.astype(float) @ measure.mass
    avg_w = node_averages(tree, w, measure)
    avg_s = node_averages(tree, 1.0 / w, measure)
    avg_phi_w = node_averages(tree, phi * w, measure)
    avg_abs = node_averages(tree, np.abs(phi) * w, measure)
    ratio = delta_weight(tree, w, measure) / avg_w
    tau = tau_sequence(tree, w, measure, alpha)

    constant = math.sqrt(2.0) * delta_ratio_constant(tree, measure) * math.exp(alpha) * (family.m + family.n + 1)
    scale = (avg_w[L] * avg_s[L]) ** (-alpha / 2) / math.sqrt(mass[L])
    target = int(tree.generation[L]) + family.m

    rows = []
    for K, criterion in zip(family.members, family.criteria, strict=True):
        cubes = tree.descendants_at(K, target)
        lhs = float(np.sum(np.abs(avg_phi_w[cubes]) * ratio[cubes] * mass[cubes])) / math.sqrt(mass[L])
        rhs = constant * avg_abs[K] * math.sqrt(mass[K]) * math.sqrt(tau[K]) * scale
        rows.append(SborRow(cube=K, criterion=criterion, lhs=lhs, rhs=rhs))

    worst = slack(np.array([r.rhs for r in rows]), np.array([r.lhs for r in rows]))
    passed = worst >= -settings.A2LAB_SLACK_TOL
    report = SborReport(root=L, constant=constant, rows=rows, worst_slack=worst, passed=passed)
    if not passed and raise_on_violation:
        raise invariant_violation("stopping-cube bound", worst, {"root": L})
    return report


def p_trick_check(
    tree: CubeTree,
    families: list[StoppingFamily],
    phi: np.ndarray,
    w: np.ndarray,
    measure: DoublingMeasure,
) -> PTrickReport:
    """(sum a_K^2 mu(K)/mu(L))^(p/2) <= sum a_K^p (mu(K)/mu(L))^(p/2), a_K = <|phi| w>_K"""
    mass = tree.indicator.astype(float) @ measure.mass
    avg_abs = node_averages(tree, np.abs(np.asarray(phi, dtype=float)) * np.asarray(w, dtype=float), measure)
    worst = math.inf
    p = families[0].p if families else 2.0
    for family in families:
        share = mass[family.members] / mass[family.root]
        a = avg_abs[family.members]
        lhs = float(np.sum(a**2 * share)) ** (family.p / 2)
        rhs = float(np.sum(a**family.p * share ** (family.p / 2)))
        worst = min(worst, slack(rhs, lhs))
    return PTrickReport(families=len(families), p=p, worst_slack=worst, passed=worst >= -settings.A2LAB_SLACK_TOL)


def stopping_families(tree: CubeTree, w: np.ndarray, measure: DoublingMeasure, m: int, n: int) -> list[StoppingFamily]:
    """One family for every cube L with g(L) + m within the tree"""
    roots = np.flatnonzero(tree.generation + m <= tree.depth)
    return [build_stopping_family(tree, int(L), w, measure, m, n) for L in roots]


def tau_tilde_check(
    tree: CubeTree,
    w: np.ndarray,
    measure: DoublingMeasure,
    alpha: float,
    m: int,
    n: int,
) -> TauTildeReport:
    """Carleson constant of tilde tau_L = sum_{K in P_L} tau_K against (m+1) Carleson(tau)"""
    mass = tree.indicator.astype(float) @ measure.mass
    tau = tau_sequence(tree, w, measure, alpha)
    families = stopping_families(tree, w, measure, m, n)
    tilde = aggregate_tau(tau, {f.root: f.members for f in families})
    values = np.zeros(tree.n_nodes)
    for root, value in tilde.items():
        values[root] = value
    tau_c = carleson_constant(tau, tree, mass)
    tilde_c = carleson_constant(values, tree, mass)
    bound = (m + 1) * tau_c
    return TauTildeReport(
        m=m,
        n=n,
        roots=len(families),
        tau_carleson=tau_c,
        tau_tilde_carleson=tilde_c,
        bound=bound,
        passed=tilde_c <= bound * (1 + 1e-12) + 1e-300,
    )


# ============================================================
# S_L AND R_L
# ============================================================


def _functional_terms(
    system: HaarSystem,
    f: np.ndarray,
    v: np.ndarray,
    measure: DoublingMeasure,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Per Haar row for the product f v: the coefficient (f v, h)_mu, the weighted split
    (alpha, beta) of h against v, the weighted pairing (f v, h^v)_mu and <f v>_I.
    """
    tree = system.tree
    fv = np.asarray(f, dtype=float) * np.asarray(v, dtype=float)
    alpha, beta = split_coefficients(system, v, measure)
    coef = system.coefficients(fv, measure)
    mass_rows = system.node_mass[system.node]
    integral = tree.indicator[system.node].astype(float) @ (fv * measure.mass)
    weighted_pairing = (coef - beta * integral) / alpha
    return coef, alpha, beta, weighted_pairing, integral / mass_rows


def sl_rl_functionals(
    system: HaarSystem,
    shift: DyadicShift,
    phi: np.ndarray,
    psi: np.ndarray,
    w: np.ndarray,
    measure: DoublingMeasure,
) -> FunctionalReport:
    """
    S_L and R_L of phi w and psi sigma for every top cube of the shift, the Cauchy-Schwarz
    bound on S_L, and the four-way split of (S phi w, psi sigma)_mu with each piece dominated
    by C_h^2 sum_L of the matching S/R products.
    """
    tree = system.tree
    w = np.asarray(w, dtype=float)
    sigma = 1.0 / w
    ancestors = _row_ancestors(system)
    node_mass = system.node_mass
    mass_rows = node_mass[system.node]
    c_h2 = system.sup_constant**2

    _, alpha_w, beta_w, a_phi, avg_phi = _functional_terms(system, phi, w, measure)
    _, alpha_s, beta_s, a_psi, avg_psi = _functional_terms(system, psi, sigma, measure)
    avg_w = node_averages(tree, w, measure)
    avg_s = node_averages(tree, sigma, measure)
    ratio_w = delta_weight(tree, w, measure) / avg_w
    ratio_s = delta_weight(tree, sigma, measure) / avg_s

    s_row_phi = np.abs(a_phi) * np.sqrt(avg_w[system.node] * mass_rows)
    r_row_phi = np.abs(avg_phi) * ratio_w[system.node] * mass_rows
    s_row_psi = np.abs(a_psi) * np.sqrt(avg_s[system.node] * mass_rows)
    r_row_psi = np.abs(avg_psi) * ratio_s[system.node] * mass_rows

    rows = []
    products = {"ss": 0.0, "sr": 0.0, "rs": 0.0, "rr": 0.0}
    sl_slack = math.inf
    for L in np.unique(shift.L).tolist():
        gL = int(tree.generation[L])
        root_mass = math.sqrt(node_mass[L])
        i_rows = rows_below(system, ancestors, L, gL + shift.m)
        j_rows = rows_below(system, ancestors, L, gL + shift.n)
        s_phi = float(s_row_phi[i_rows].sum()) / root_mass
        r_phi = float(r_row_phi[i_rows].sum()) / root_mass
        s_psi = float(s_row_psi[j_rows].sum()) / root_mass
        r_psi = float(r_row_psi[j_rows].sum()) / root_mass
        multiplicity_i = np.bincount(system.node[i_rows]).max()
        multiplicity_j = np.bincount(system.node[j_rows]).max()
        bound_phi = math.sqrt(multiplicity_i * float(np.sum(a_phi[i_rows] ** 2)) * avg_w[L])
        bound_psi = math.sqrt(multiplicity_j * float(np.sum(a_psi[j_rows] ** 2)) * avg_s[L])
        row_slack = min(slack(bound_phi, s_phi), slack(bound_psi, s_psi))
        sl_slack = min(sl_slack, row_slack)
        products["ss"] += s_phi * s_psi
        products["sr"] += s_phi * r_psi
        products["rs"] += r_phi * s_psi
        products["rr"] += r_phi * r_psi
        rows.append(FunctionalRow(root=L, s_phi=s_phi, r_phi=r_phi, s_psi=s_psi, r_psi=r_psi, sl_slack=row_slack))

    c = np.abs(shift.coeffs)
    I, J = shift.I_rows, shift.J_rows
    phi_s = np.abs(alpha_w[I] * a_phi[I])
    phi_r = np.abs(beta_w[I] * avg_phi[I] * mass_rows[I])
    psi_s = np.abs(alpha_s[J] * a_psi[J])
    psi_r = np.abs(beta_s[J] * avg_psi[J] * mass_rows[J])
    terms = {
        "ss": float(np.sum(c * phi_s * psi_s)),
        "sr": float(np.sum(c * phi_s * psi_r)),
        "rs": float(np.sum(c * phi_r * psi_s)),
        "rr": float(np.sum(c * phi_r * psi_r)),
    }
    term_bounds = {k: c_h2 * v for k, v in products.items()}
    phi_w = np.asarray(phi, dtype=float) * w
    psi_sigma = np.asarray(psi, dtype=float) * sigma
    form = float((psi_sigma * measure.mass) @ (shift.matrix @ phi_w))
    split_sum = sum(terms.values())
    split_ok = abs(form) <= split_sum + 1e-10 * max(1.0, split_sum) and all(
        terms[k] <= term_bounds[k] * (1 + 1e-10) + 1e-300 for k in terms
    )
    return FunctionalReport(
        m=shift.m,
        n=shift.n,
        rows=rows,
        form=form,
        terms=terms,
        term_bounds=term_bounds,
        split_sum=split_sum,
        sl_ok=sl_slack >= -settings.A2LAB_SLACK_TOL,
        split_ok=split_ok,
    )


# ============================================================
# PARAPRODUCTS
# ============================================================


def paraproduct_from_coefficients(
    system: HaarSystem,
    measure: DoublingMeasure,
    b: np.ndarray,
    kind: Literal["pi", "pi_star"] = "pi",
) -> Paraproduct:
    """
    pi f = sum <f>_R b_R h_R and pi_* f = sum (f, h_R)_mu b_R chi_R / mu(R),
    both as dense matrices on the point space.
    """
    b = np.asarray(b, dtype=float)
    n_points = system.tree.n_points
    if system.size == 0:
        return Paraproduct(kind=kind, b=b, matrix=np.zeros((n_points, n_points)))
    inside = system.tree.indicator[system.node].astype(float)
    mass_rows = system.node_mass[system.node][:, None]
    if kind == "pi":
        averaging = inside * measure.mass[None, :] / mass_rows
        matrix = system.vectors.T @ (b[:, None] * averaging)
    else:
        spread = inside / mass_rows
        matrix = spread.T @ (b[:, None] * system.vectors * measure.mass[None, :])
    return Paraproduct(kind=kind, b=b, matrix=matrix)


def adjoint_operator(T: np.ndarray, measure: DoublingMeasure) -> np.ndarray:
    """Adjoint in L2(mu): T*[x, y] = T[y, x] mu(y) / mu(x)"""
    mu = measure.mass
    return np.asarray(T, dtype=float).T * mu[None, :] / mu[:, None]


def build_paraproducts(
    system: HaarSystem,
    measure: DoublingMeasure,
    T: np.ndarray,
) -> tuple[Paraproduct, Paraproduct, Paraproduct]:
    """pi with b_R = (T chi_X, h_R), pi_* with (T* chi_X, h_R), and o f = <f> <T chi_X> chi_X"""
    T = np.asarray(T, dtype=float)
    ones = np.ones(T.shape[0])
    pi = paraproduct_from_coefficients(system, measure, system.coefficients(T @ ones, measure), "pi")
    b_star = system.coefficients(adjoint_operator(T, measure) @ ones, measure)
    pi_star = paraproduct_from_coefficients(system, measure, b_star, "pi_star")
    mean = float((T @ ones) @ measure.mass) / measure.total
    o_matrix = mean * np.outer(ones, measure.mass) / measure.total
    return pi, pi_star, Paraproduct(kind="o", b=np.array([mean]), matrix=o_matrix)


def paraproduct_apply(pp: Paraproduct, f: np.ndarray) -> np.ndarray:
    return pp.matrix @ np.asarray(f, dtype=float)


def paraproduct_identities(
    system: HaarSystem,
    measure: DoublingMeasure,
    T: np.ndarray,
    seed: int = 0,
) -> ParaproductIdentities:
    """
    pi(chi_X) = T chi_X - <T chi_X>, (pi f, g)_mu = (f, pi_* g)_mu with b shared, and
    (pi f, g)_mu = sum <f>_R b_R (g, h_R)_mu, on random f, g.
    """
    pi, _, o = build_paraproducts(system, measure, T)
    ones = np.ones(system.tree.n_points)
    t_chi = np.asarray(T, dtype=float) @ ones
    constant = float(np.max(np.abs(paraproduct_apply(pi, ones) - (t_chi - o.b[0]))))
    constant /= max(1.0, float(np.max(np.abs(t_chi))))

    rng = stream(seed, 0, INPUT, system.tree.n_points)
    f, g = rng.standard_normal(ones.size), rng.standard_normal(ones.size)
    shared_star = paraproduct_from_coefficients(system, measure, pi.b, "pi_star")
    lhs = float((paraproduct_apply(pi, f) * g) @ measure.mass)
    rhs = float((f * paraproduct_apply(shared_star, g)) @ measure.mass)
    adjoint = abs(lhs - rhs) / max(1.0, abs(lhs))

    averages = (system.tree.indicator[system.node].astype(float) @ (f * measure.mass)) / system.node_mass[system.node]
    duality_sum = float(np.sum(averages * pi.b * system.coefficients(g, measure)))
    duality = abs(lhs - duality_sum) / max(1.0, abs(lhs))
    tol = 1e-10
    return ParaproductIdentities(
        constant_residual=constant,
        adjoint_residual=adjoint,
        duality_residual=duality,
        passed=constant <= tol and adjoint <= tol and duality <= tol,
    )


def coefficient_carleson(system: HaarSystem, b: np.ndarray) -> float:
    """B_T: Carleson constant of sum_j |b_R^j|^2 per cube"""
    per_node = np.bincount(system.node, weights=np.asarray(b, dtype=float) ** 2, minlength=system.tree.n_nodes)
    return carleson_constant(per_node, system.tree, system.node_mass)


def paraproduct_norm_experiment(
    system: HaarSystem,
    measure: DoublingMeasure,
    pp: Paraproduct,
    weights: list[Weight],
    workers: int | None = None,
) -> ParaproductExperiment:
    """||pi||_{L2(w)} per weight, its log-log slope against [w]_2 and norm / (sqrt(B_T) [w]_2)"""
    carleson = coefficient_carleson(system, pp.b) if pp.kind != "o" else float(pp.b[0] ** 2)
    root = math.sqrt(carleson)
    norms = parallel_map(partial(_cell_norm, mass=measure.mass), [([pp.matrix], wt.w) for wt in weights], workers)
    rows = [
        ParaproductRow(
            label=wt.label,
            a2=wt.a2,
            norm=norm,
            normalized=norm / (root * wt.a2) if root > 0 else 0.0,
        )
        for wt, norm in zip(weights, norms, strict=True)
    ]
    slope = loglog_slope(np.array([r.a2 for r in rows]), np.array([r.norm for r in rows]))
    slope = 0.0 if math.isnan(slope) else slope
    logger.info(f"Paraproduct {pp.kind}: B_T={carleson:.4g}, slope {slope:.3f} over {len(rows)} weights")
    return ParaproductExperiment(
        kind=pp.kind,
        carleson=carleson,
        sqrt_carleson=root,
        rows=rows,
        slope=slope,
        slope_ok=slope <= 1.0 + SLOPE_TOLERANCE,
    )


def o_operator_check(o: Paraproduct, T: np.ndarray, measure: DoublingMeasure, weight: Weight) -> OBoundReport:
    """||o||_{L2(w)} = |<T chi_X>| sqrt(<w>_X <sigma>_X) <= sqrt(C_0 [w]_2) with C_0 = ||T||^2"""
    norm = weighted_operator_norm(o.matrix, weight.w, measure.mass)
    total = measure.total
    exact = abs(float(o.b[0])) * math.sqrt(
        float(weight.w @ measure.mass) / total * float(weight.sigma @ measure.mass) / total
    )
    c0 = weighted_operator_norm(T, np.ones_like(weight.w), measure.mass) ** 2
    bound = math.sqrt(c0 * weight.a2)
    return OBoundReport(
        label=weight.label,
        norm=norm,
        exact=exact,
        bound=bound,
        passed=abs(norm - exact) <= 1e-10 * max(1.0, exact) and norm <= bound * (1 + 1e-10),
    )
