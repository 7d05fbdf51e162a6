"""
Decomposition Service
Model Calderon-Zygmund operators on a finite space and the good/bad decomposition pipeline:
Haar matrix coefficients, paraproduct subtraction, the two decay lemmas, the averaging
identity over the enumerated lattice space, containment frequencies and the regrouping of
the bilinear form into dyadic shifts.
"""

import logging
import math
from functools import partial
from typing import Literal

import numpy as np
from pydantic import field_validator

from backend.core.config import settings
from backend.core.errors import config_error
from backend.core.exceptions import CoefficientOverflow, EnumerationInfeasible, EnumerationTooLarge, ProfileViolation
from backend.core.models import ArrayModel, CoreModel, GoodnessParams, HierarchyParams, frozen_array
from backend.core.number_utils import ratio_estimate
from backend.core.parallel import parallel_map
from backend.services.goodness import (
    GoodnessVerdict,
    good_probabilities,
    goodness_profile,
    is_good_for,
    really_good_adjust,
)
from backend.services.haar_weights import HaarSystem, build_haar_system
from backend.services.metric_core import DoublingMeasure, FiniteMetricSpace, KernelProfile, lambda_at, pairwise_lambda
from backend.services.random_lattice import CubeTree, LatticeSample, build_hierarchy, fine_grid
from backend.services.shifts_paraproducts import (
    BOUND_TOL,
    DyadicShift,
    build_paraproducts,
    shift_matrix,
)

logger = logging.getLogger(__name__)

PROFILE_CAP = 100.0
IDENTITY_TOL = settings.A2LAB_IDENTITY_TOL
NESTED_FAR, NESTED_NEAR, DISJOINT = 0, 1, 2
BUCKET_NAMES = {NESTED_FAR: "nested-far", NESTED_NEAR: "nested-near", DISJOINT: "disjoint"}

KernelName = Literal["inv-dist", "hilbert", "zero"]


# ============================================================
# DOMAIN TYPES
# ============================================================


class ModelOperator(ArrayModel):
    """T[x, y] = K(x, y) mu(y) off the diagonal, zero on it"""

    kernel: str
    K: np.ndarray
    matrix: np.ndarray
    profile: KernelProfile
    size_constant: float
    holder_x: float
    holder_y: float

    @field_validator("K", "matrix", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)


class FormLedger(ArrayModel):
    """
    One entry per Haar row pair (h_Q^j, h_R^i) with l(Q) >= l(R): the coefficient (T h_Q, h_R)_mu,
    its bucket, D(Q, R) and the generation gap g(R) - g(Q).
    """

    q_rows: np.ndarray
    r_rows: np.ndarray
    coeff: np.ndarray
    bucket: np.ndarray
    D: np.ndarray
    gap: np.ndarray

    @field_validator("q_rows", "r_rows", "bucket", "gap", mode="before")
    @classmethod
    def _freeze_int(cls, v):
        return frozen_array(v, dtype=int)

    @field_validator("coeff", "D", mode="before")
    @classmethod
    def _freeze_float(cls, v):
        return frozen_array(v)

    def counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.bucket == b)) for b, name in BUCKET_NAMES.items()}


class SubtractionReport(CoreModel):
    disjoint_pairs: int
    disjoint_residual: float
    constant_residual: float
    passed: bool


class DecayRow(CoreModel):
    key: int
    pairs: int
    max_ratio: float


class DecayReport(CoreModel):
    kind: Literal["in", "out"]
    pairs: int
    worst_ratio: float
    rows: list[DecayRow]
    comparability: float | None = None


class AveragingRow(CoreModel):
    pair: int
    lhs: float
    rhs: float
    residual: float
    lhs_strict: float
    rhs_strict: float
    residual_strict: float


class AveragingReport(CoreModel):
    events: int
    a: float
    rows: list[AveragingRow]
    worst_residual: float
    passed: bool


class ContainmentRow(CoreModel):
    s0: int
    pairs: float
    frequency: float
    stderr: float
    exact: float | None = None
    passed: bool


class ContainmentReport(CoreModel):
    trials: int
    ancestor_offset: int
    rows: list[ContainmentRow]
    threshold_s0: int | None
    monotone: bool


class ExtractedFamily(CoreModel):
    bucket: str
    m: int
    n: int
    key: tuple[int, ...]
    terms: int
    constant: float
    form: float
    actual: float
    max_normalized: float


class ShiftExtraction(ArrayModel):
    families: list[ExtractedFamily]
    shifts: list[DyadicShift]
    sigma_in: float
    recombination_in: float
    sigma_out: float
    recombination_out: float
    excluded_out: int
    near_families: int
    passed: bool


class RepresentationReport(CoreModel):
    lhs: float
    haar_part: float
    constant_part: float
    pi_part: float
    pi_star_part: float
    residual: float
    passed: bool


# ============================================================
# MODEL OPERATOR
# ============================================================


def kernel_values(space: FiniteMetricSpace, kernel: KernelName) -> np.ndarray:
    off = ~np.eye(space.n, dtype=bool)
    K = np.zeros((space.n, space.n))
    if kernel == "inv-dist":
        K[off] = 1.0 / space.dist[off]
    elif kernel == "hilbert":
        if space.coords is None or space.coords.shape[1] != 1:
            raise config_error("the hilbert kernel needs one-dimensional coordinates", "kernel")
        x = space.coords[:, 0]
        diff = x[:, None] - x[None, :]
        K[off] = 1.0 / diff[off]
    elif kernel != "zero":
        raise config_error(f"Unknown kernel '{kernel}'", "kernel")
    return K


def _holder_constant(K: np.ndarray, space: FiniteMetricSpace, lam: np.ndarray, eps: float) -> float:
    """
    Best C with |K(x, y) - K(x', y)| <= C d(x, x')^eps / (d(x, y)^eps lambda(x, d(x, y)))
    over all triples with 2 d(x, x') <= d(x, y).
    """
    d = space.dist
    worst = 0.0
    for x in range(space.n):
        row = d[x]
        for xp in range(space.n):
            if xp == x:
                continue
            admissible = (2.0 * row[xp] <= row) & (row > 0)
            admissible[[x, xp]] = False
            if not admissible.any():
                continue
            diff = np.abs(K[x, admissible] - K[xp, admissible])
            bound = row[xp] ** eps / (row[admissible] ** eps * lam[x, admissible])
            worst = max(worst, float(np.max(diff / bound)))
    return worst


def build_model_operator(
    space: FiniteMetricSpace,
    measure: DoublingMeasure,
    kernel: KernelName | np.ndarray = "inv-dist",
    profile: KernelProfile | None = None,
    cap: float = PROFILE_CAP,
) -> ModelOperator:
    """
    Dense operator from a kernel with the size constant max |K| max(lambda(x, d), lambda(y, d))
    and the Holder constants in each variable measured exhaustively.
    """
    profile = profile or KernelProfile()
    if isinstance(kernel, np.ndarray):
        K, name = np.array(kernel, dtype=float), "custom"
        if K.shape != (space.n, space.n):
            raise config_error(f"kernel must be {space.n} x {space.n}", "kernel")
        np.fill_diagonal(K, 0.0)
    else:
        K, name = kernel_values(space, kernel), kernel

    lam = pairwise_lambda(space, measure, profile)
    off = ~np.eye(space.n, dtype=bool)
    size = float(np.max(np.abs(K[off]) * np.maximum(lam[off], lam.T[off]))) if space.n > 1 else 0.0
    holder_x = _holder_constant(K, space, lam, profile.holder_eps)
    holder_y = _holder_constant(K.T, space, lam, profile.holder_eps)
    for label, value in (("size", size), ("holder_x", holder_x), ("holder_y", holder_y)):
        if value > cap:
            raise ProfileViolation(label, value, cap)

    logger.info(f"Model operator {name} on {space.n} points: size {size:.4g}, Holder {holder_x:.4g}/{holder_y:.4g}")
    return ModelOperator(
        kernel=name,
        K=K,
        matrix=K * measure.mass[None, :],
        profile=profile,
        size_constant=size,
        holder_x=holder_x,
        holder_y=holder_y,
    )


def haar_coefficients(system: HaarSystem, T: np.ndarray, measure: DoublingMeasure) -> np.ndarray:
    """M[r, q] = (T h_q, h_r)_mu"""
    return (system.vectors * measure.mass[None, :]) @ np.asarray(T, dtype=float) @ system.vectors.T


# ============================================================
# PARAPRODUCT SUBTRACTION
# ============================================================


def subtract_paraproducts(
    system: HaarSystem,
    measure: DoublingMeasure,
    T: np.ndarray,
    space: FiniteMetricSpace,
) -> tuple[np.ndarray, SubtractionReport]:
    """
    T~ = T - pi - pi_*. Disjoint pairs keep their coefficients and (T~ chi_X, h_R) = 0.
    """
    T = np.asarray(T, dtype=float)
    pi, pi_star, _ = build_paraproducts(system, measure, T)
    T_tilde = T - pi.matrix - pi_star.matrix

    before = haar_coefficients(system, T, measure)
    after = haar_coefficients(system, T_tilde, measure)
    node_dist = cube_distances(space, system.tree)
    disjoint = node_dist[np.ix_(system.node, system.node)] > 0
    scale = max(1.0, float(np.max(np.abs(before)))) if before.size else 1.0
    disjoint_residual = float(np.max(np.abs(after - before)[disjoint])) / scale if disjoint.any() else 0.0
    constant = system.coefficients(T_tilde @ np.ones(T.shape[0]), measure)
    constant_residual = float(np.max(np.abs(constant))) / scale if constant.size else 0.0
    report = SubtractionReport(
        disjoint_pairs=int(disjoint.sum()),
        disjoint_residual=disjoint_residual,
        constant_residual=constant_residual,
        passed=disjoint_residual <= 1e-10 and constant_residual <= 1e-10,
    )
    return T_tilde, report


# ============================================================
# FORM LEDGER
# ============================================================


def cube_distances(space: FiniteMetricSpace, tree: CubeTree) -> np.ndarray:
    """dist(Q, R) between the point sets of every pair of nodes"""
    to_points = np.array([space.dist[m].min(axis=0) for m in tree.members])
    return np.array([to_points[:, m].min(axis=1) for m in tree.members]).T


def build_form_ledger(
    space: FiniteMetricSpace,
    system: HaarSystem,
    T: np.ndarray,
    measure: DoublingMeasure,
    r0: int,
) -> FormLedger:
    """Every row pair with g(Q) <= g(R), classified nested-far (gap >= max(r0, 1)), nested-near or disjoint"""
    tree = system.tree
    M = haar_coefficients(system, T, measure)
    gen = tree.generation[system.node]
    r_rows, q_rows = np.nonzero(gen[:, None] >= gen[None, :])
    Q, R = system.node[q_rows], system.node[r_rows]
    gap = gen[r_rows] - gen[q_rows]
    nested = tree.point_node[gen[q_rows], tree.first_member[R]] == Q
    bucket = np.where(nested, np.where(gap >= max(r0, 1), NESTED_FAR, NESTED_NEAR), DISJOINT)
    sides = tree.delta ** tree.generation.astype(float)
    D = sides[Q] + sides[R] + cube_distances(space, tree)[Q, R]
    return FormLedger(q_rows=q_rows, r_rows=r_rows, coeff=M[r_rows, q_rows], bucket=bucket, D=D, gap=gap)


def good_nodes(space: FiniteMetricSpace, sample: LatticeSample, tree: CubeTree, params: GoodnessParams) -> np.ndarray:
    out = np.zeros(tree.n_nodes, dtype=bool)
    for node in range(tree.n_nodes):
        k, label = int(tree.generation[node]), int(tree.label[node])
        out[node] = is_good_for(goodness_profile(space, sample, k, label, params), k, params.r)
    return out


def _prepare(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    operator: ModelOperator,
    measure: DoublingMeasure,
    params: GoodnessParams,
) -> tuple[CubeTree, HaarSystem, np.ndarray, FormLedger, np.ndarray]:
    tree = CubeTree.from_sample(sample)
    system = build_haar_system(tree, measure)
    T_tilde, _ = subtract_paraproducts(system, measure, operator.matrix, space)
    ledger = build_form_ledger(space, system, T_tilde, measure, params.r)
    return tree, system, T_tilde, ledger, good_nodes(space, sample, tree, params)


# ============================================================
# DECAY
# ============================================================


def _binned(keys: np.ndarray, ratios: np.ndarray) -> list[DecayRow]:
    rows = []
    for key in np.unique(keys).tolist():
        mask = keys == key
        rows.append(DecayRow(key=int(key), pairs=int(mask.sum()), max_ratio=float(ratios[mask].max())))
    return rows


def _in_ratios(tree: CubeTree, system: HaarSystem, ledger: FormLedger, good: np.ndarray, eps: float):
    mask = (ledger.bucket == NESTED_FAR) & good[system.node[ledger.r_rows]]
    Q = system.node[ledger.q_rows[mask]]
    R = system.node[ledger.r_rows[mask]]
    gap = ledger.gap[mask]
    Q1 = tree.point_node[tree.generation[Q] + 1, tree.first_member[R]]
    mass = system.node_mass
    bound = tree.delta ** (gap * eps / 2.0) * np.sqrt(mass[R] / mass[Q1])
    ratios = np.abs(ledger.coeff[mask]) / bound
    comparability = float(np.max(mass[Q] / mass[Q1])) if Q.size else 1.0
    return mask, ratios, comparability


def decay_check_in(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    operator: ModelOperator,
    measure: DoublingMeasure,
    params: GoodnessParams,
) -> DecayReport:
    """
    |(T~ h_Q, h_R)| / ((l(R)/l(Q))^(eps/2) (mu(R)/mu(Q_1))^(1/2)) over good R inside Q with
    gap >= r, maxima per gap and the comparability max mu(Q)/mu(Q_1)
    """
    tree, system, _, ledger, good = _prepare(space, sample, operator, measure, params)
    mask, ratios, comparability = _in_ratios(tree, system, ledger, good, operator.profile.holder_eps)
    return DecayReport(
        kind="in",
        pairs=int(mask.sum()),
        worst_ratio=float(ratios.max()) if ratios.size else 0.0,
        rows=_binned(ledger.gap[mask], ratios),
        comparability=comparability,
    )


def distance_bin(D: np.ndarray, side_q: np.ndarray, delta: float) -> np.ndarray:
    """s with delta^-s l(Q) <= D < delta^(-s-1) l(Q)"""
    return np.floor(np.log(D / side_q) / math.log(1.0 / delta) + 1e-12).astype(int)


def _out_ratios(
    space: FiniteMetricSpace,
    tree: CubeTree,
    system: HaarSystem,
    ledger: FormLedger,
    measure: DoublingMeasure,
    profile: KernelProfile,
    mask: np.ndarray,
) -> np.ndarray:
    eps = profile.holder_eps
    Q = system.node[ledger.q_rows[mask]]
    R = system.node[ledger.r_rows[mask]]
    D = ledger.D[mask]
    sides = tree.delta ** tree.generation.astype(float)
    mass = system.node_mass
    sup_lambda = np.empty(R.size)
    for i, (r, d) in enumerate(zip(R.tolist(), D.tolist(), strict=True)):
        members = tree.members[r]
        sup_lambda[i] = float(np.max(lambda_at(space, measure, profile, members, np.full(members.size, d))))
    bound = (sides[Q] * sides[R]) ** (eps / 2.0) / (D**eps * sup_lambda) * np.sqrt(mass[Q] * mass[R])
    return np.abs(ledger.coeff[mask]) / bound


def decay_check_out(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    operator: ModelOperator,
    measure: DoublingMeasure,
    params: GoodnessParams,
    good_only: bool = False,
) -> DecayReport:
    """Disjoint pairs against l(Q)^(eps/2) l(R)^(eps/2) / (D^eps sup_R lambda(z, D)) (mu(Q) mu(R))^(1/2)"""
    tree, system, _, ledger, good = _prepare(space, sample, operator, measure, params)
    mask = ledger.bucket == DISJOINT
    if good_only:
        mask &= good[system.node[ledger.r_rows]]
    ratios = _out_ratios(space, tree, system, ledger, measure, operator.profile, mask)
    sides = tree.delta ** tree.generation.astype(float)
    s = distance_bin(ledger.D[mask], sides[system.node[ledger.q_rows[mask]]], tree.delta)
    return DecayReport(
        kind="out",
        pairs=int(mask.sum()),
        worst_ratio=float(ratios.max()) if ratios.size else 0.0,
        rows=_binned(s, ratios),
    )


# ============================================================
# AVERAGING IDENTITY
# ============================================================


def leaf_cells(space: FiniteMetricSpace, hierarchy: HierarchyParams) -> np.ndarray:
    """Finest cell of every point; the finest grid is the same in every lattice"""
    top = fine_grid(space, hierarchy.delta**hierarchy.levels)
    return top[np.argmin(space.dist[:, top], axis=1)]


def _event_terms(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    params: GoodnessParams,
    p_by_key: dict,
    a: float,
    T: np.ndarray,
    measure: DoublingMeasure,
) -> tuple[HaarSystem, np.ndarray, np.ndarray]:
    """(Haar system, coefficient matrix, analytic really-good weight per row) of one lattice"""
    tree = CubeTree.from_sample(sample)
    system = build_haar_system(tree, measure)
    verdicts = []
    for node in range(tree.n_nodes):
        k, label = int(tree.generation[node]), int(tree.label[node])
        ratios = goodness_profile(space, sample, k, label, params)
        verdicts.append(
            GoodnessVerdict(
                label=label,
                generation=k,
                is_good=is_good_for(ratios, k, params.r),
                p_q=p_by_key[(k, label, sample.history(k))],
            )
        )
    node_weight = np.array([v.really_good_weight for v in really_good_adjust(verdicts, a)])
    return system, haar_coefficients(system, T, measure), node_weight[system.node]


def averaging_identity_check(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    T: np.ndarray,
    measure: DoublingMeasure,
    functions: list[tuple[np.ndarray, np.ndarray]],
    a: float | None = None,
    cap: int | None = None,
) -> AveragingReport:
    """
    a E sum_{l(Q) >= l(R)} (T h_Q, h_R)(f, h_Q)(g, h_R) against
    E sum over the same pairs with R really good, xi integrated as the weight a / p_R,
    and the same with l(Q) > l(R). f and g must be constant on the finest cells.
    """
    try:
        events = build_hierarchy(space, hierarchy, mode="enumerate", cap=cap)
    except EnumerationTooLarge as e:
        raise EnumerationInfeasible(f"averaging identity needs full enumeration: {e.message}") from e
    probabilities = good_probabilities(space, hierarchy, params, events)
    p_by_key = {(c.generation, c.label, c.history): c.p_q for c in probabilities}
    a = min(p_by_key.values()) if a is None else a

    totals = np.zeros((len(functions), 4))
    for sample in events:
        system, M, weight = _event_terms(space, sample, params, p_by_key, a, T, measure)
        gen = system.tree.generation[system.node]
        at_least = gen[:, None] >= gen[None, :]
        strictly = gen[:, None] > gen[None, :]
        for i, (f, g) in enumerate(functions):
            terms = M * np.outer(system.coefficients(g, measure), system.coefficients(f, measure))
            totals[i] += sample.weight * np.array(
                [
                    a * terms[at_least].sum(),
                    (terms * weight[:, None])[at_least].sum(),
                    a * terms[strictly].sum(),
                    (terms * weight[:, None])[strictly].sum(),
                ]
            )

    rows = []
    for i, (lhs, rhs, lhs_s, rhs_s) in enumerate(totals.tolist()):
        rows.append(
            AveragingRow(
                pair=i,
                lhs=lhs,
                rhs=rhs,
                residual=abs(lhs - rhs) / max(1.0, abs(lhs)),
                lhs_strict=lhs_s,
                rhs_strict=rhs_s,
                residual_strict=abs(lhs_s - rhs_s) / max(1.0, abs(lhs_s)),
            )
        )
    worst = max((max(r.residual, r.residual_strict) for r in rows), default=0.0)
    logger.info(f"Averaging identity over {len(events)} lattices, a={a:.6g}: worst residual {worst:.2e}")
    return AveragingReport(events=len(events), a=a, rows=rows, worst_residual=worst, passed=worst <= IDENTITY_TOL)


# ============================================================
# CONTAINMENT
# ============================================================


def _containment_counts(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    s0_values: list[int],
    offset: int,
    params: GoodnessParams | None = None,
) -> tuple[np.ndarray, float]:
    """Per s0: disjoint pairs (Q, R), l(R) <= l(Q), with R inside Q^(s + s0 + offset); and the pair count"""
    tree = CubeTree.from_sample(sample)
    gen = tree.generation
    dist = cube_distances(space, tree)
    sides = tree.delta ** gen.astype(float)
    R, Q = np.nonzero((gen[:, None] >= gen[None, :]) & (dist > 0))
    if params is not None:
        good = good_nodes(space, sample, tree, params)
        keep = good[R]
        R, Q = R[keep], Q[keep]
    if Q.size == 0:
        return np.zeros(len(s0_values)), 0.0
    D = sides[Q] + sides[R] + dist[Q, R]
    s = distance_bin(D, sides[Q], tree.delta)
    contained = np.zeros(len(s0_values))
    for i, s0 in enumerate(s0_values):
        target = gen[Q] - (s + s0 + offset)
        top = target < 0
        anc_q = tree.point_node[np.maximum(target, 0), tree.first_member[Q]]
        anc_r = tree.point_node[np.maximum(target, 0), tree.first_member[R]]
        contained[i] = float(np.sum(top | (anc_q == anc_r)))
    return contained, float(Q.size)


def _containment_trial(
    trial: int,
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    s0_values: list[int],
    offset: int,
    params: GoodnessParams | None,
) -> tuple[np.ndarray, float]:
    return _containment_counts(space, build_hierarchy(space, hierarchy, trial=trial), s0_values, offset, params)


def containment_probability_check(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    s0_values: list[int],
    trials: int,
    ancestor_offset: int = 10,
    params: GoodnessParams | None = None,
    exact: bool = False,
    workers: int | None = None,
) -> ContainmentReport:
    """
    Pooled frequency of R inside Q^(s+s0+offset) over disjoint pairs binned by D ~ delta^-s l(Q),
    with the ratio-estimator stderr; passing rows reach 1/2 - 3 stderr.
    With params only good R count; with exact the enumerated conditional probability is added.
    """
    results = parallel_map(
        partial(
            _containment_trial,
            space=space,
            hierarchy=hierarchy,
            s0_values=s0_values,
            offset=ancestor_offset,
            params=params,
        ),
        range(trials),
        workers,
    )
    contained = np.array([r[0] for r in results])
    pairs = np.array([r[1] for r in results])

    oracle = None
    if exact:
        num = np.zeros(len(s0_values))
        den = 0.0
        for sample in build_hierarchy(space, hierarchy, mode="enumerate"):
            c, n = _containment_counts(space, sample, s0_values, ancestor_offset, params)
            num += sample.weight * c
            den += sample.weight * n
        oracle = num / den if den > 0 else np.full(len(s0_values), math.nan)

    rows = []
    for i, s0 in enumerate(s0_values):
        frequency, stderr = ratio_estimate(contained[:, i], pairs)
        margin = 3.0 * (0.0 if math.isnan(stderr) else stderr)
        rows.append(
            ContainmentRow(
                s0=s0,
                pairs=float(pairs.sum()),
                frequency=frequency,
                stderr=stderr,
                exact=None if oracle is None else float(oracle[i]),
                passed=frequency >= 0.5 - margin,
            )
        )
    threshold = None
    for i in range(len(rows)):
        if all(r.passed for r in rows[i:]):
            threshold = rows[i].s0
            break
    frequencies = [r.frequency for r in rows]
    monotone = all(b >= a - 1e-12 for a, b in zip(frequencies, frequencies[1:], strict=False))
    return ContainmentReport(
        trials=trials,
        ancestor_offset=ancestor_offset,
        rows=rows,
        threshold_s0=threshold,
        monotone=monotone,
    )


# ============================================================
# SHIFT EXTRACTION
# ============================================================


def _family_shift(
    system: HaarSystem,
    measure: DoublingMeasure,
    label: str,
    m: int,
    n: int,
    L: np.ndarray,
    I_rows: np.ndarray,
    J_rows: np.ndarray,
    coeffs: np.ndarray,
) -> DyadicShift:
    mass = system.node_mass
    bounds = np.sqrt(mass[system.node[I_rows]] * mass[system.node[J_rows]]) / mass[L]
    normalized = float(np.max(np.abs(coeffs) / bounds)) if coeffs.size else 0.0
    if normalized > 1.0 + BOUND_TOL:
        raise CoefficientOverflow(label, normalized)
    return DyadicShift(
        m=m,
        n=n,
        source=label,
        L=L,
        I_rows=I_rows,
        J_rows=J_rows,
        coeffs=coeffs,
        bounds=bounds,
        matrix=shift_matrix(system, measure, J_rows, I_rows, coeffs),
    )


def extract_shifts(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    operator: ModelOperator,
    measure: DoublingMeasure,
    params: GoodnessParams,
    f: np.ndarray,
    g: np.ndarray,
    s0: int = 0,
    ancestor_offset: int = 10,
) -> ShiftExtraction:
    """
    Regroup the good part of the form into shifts for fixed f, g.
    Nested-far pairs of gap n: coefficient sign((f, h_Q)(g, h_R)) (mu(R)/mu(Q))^(1/2) on L = Q.
    Nested-near pairs of gap n < r: (T~ h_Q, h_R) scaled into the admissible bound on L = Q.
    Disjoint pairs with R inside A = Q^(s+s0+offset): sign (mu(Q) mu(R))^(1/2) / mu(A) on L = A,
    grouped by complexity (g(Q) - g(A), g(R) - g(A)).
    """
    tree, system, _, ledger, good = _prepare(space, sample, operator, measure, params)
    eps = operator.profile.holder_eps
    f_coef, g_coef = system.coefficients(f, measure), system.coefficients(g, measure)
    mass = system.node_mass
    sides = tree.delta ** tree.generation.astype(float)
    good_r = good[system.node[ledger.r_rows]]
    product = f_coef[ledger.q_rows] * g_coef[ledger.r_rows]
    actual = ledger.coeff * product
    signs = np.where(product >= 0, 1.0, -1.0)

    families: list[ExtractedFamily] = []
    shifts: list[DyadicShift] = []

    def _record(bucket, key, m, n, L, mask, coeffs, constant):
        shift = _family_shift(
            system, measure, bucket, m, n, L, ledger.q_rows[mask], ledger.r_rows[mask], coeffs
        )
        form = float(np.sum(shift.coeffs * product[mask]))
        shifts.append(shift)
        families.append(
            ExtractedFamily(
                bucket=bucket,
                m=m,
                n=n,
                key=key,
                terms=int(mask.sum()),
                constant=constant,
                form=form,
                actual=float(np.sum(actual[mask])),
                max_normalized=shift.max_normalized,
            )
        )
        return form

    in_mask, in_ratios, comparability = _in_ratios(tree, system, ledger, good, eps)
    c_in = float(in_ratios.max()) if in_ratios.size else 0.0
    sigma_in = float(np.sum(actual[in_mask]))
    recombination_in = 0.0
    for gap in np.unique(ledger.gap[in_mask]).tolist():
        mask = in_mask & (ledger.gap == gap)
        Q = system.node[ledger.q_rows[mask]]
        R = system.node[ledger.r_rows[mask]]
        coeffs = signs[mask] * np.sqrt(mass[R] / mass[Q])
        form = _record("in", (gap,), 0, gap, Q, mask, coeffs, c_in)
        recombination_in += c_in * math.sqrt(comparability) * tree.delta ** (gap * eps / 2.0) * form

    near = (ledger.bucket == NESTED_NEAR) & good_r
    for gap in np.unique(ledger.gap[near]).tolist():
        mask = near & (ledger.gap == gap)
        Q = system.node[ledger.q_rows[mask]]
        R = system.node[ledger.r_rows[mask]]
        admissible = np.sqrt(mass[R] / mass[Q])
        constant = float(np.max(np.abs(ledger.coeff[mask]) / admissible))
        coeffs = ledger.coeff[mask] / constant if constant > 0 else np.zeros(int(mask.sum()))
        _record("near", (gap,), 0, gap, Q, mask, coeffs, constant)

    out = (ledger.bucket == DISJOINT) & good_r
    Q = system.node[ledger.q_rows]
    R = system.node[ledger.r_rows]
    s = np.zeros(ledger.q_rows.size, dtype=int)
    s[out] = distance_bin(ledger.D[out], sides[Q[out]], tree.delta)
    target = np.maximum(tree.generation[Q] - (s + s0 + ancestor_offset), 0)
    A = tree.point_node[target, tree.first_member[Q]]
    inside = tree.point_node[target, tree.first_member[R]] == A
    excluded = int(np.sum(out & ~inside))
    out &= inside
    sigma_out = float(np.sum(actual[out]))
    recombination_out = 0.0
    m_all = tree.generation[Q] - tree.generation[A]
    n_all = tree.generation[R] - tree.generation[A]
    for m, n in sorted({(int(a), int(b)) for a, b in zip(m_all[out], n_all[out], strict=True)}):
        mask = out & (m_all == m) & (n_all == n)
        admissible = np.sqrt(mass[Q[mask]] * mass[R[mask]]) / mass[A[mask]]
        constant = float(np.max(np.abs(ledger.coeff[mask]) / admissible))
        form = _record("out", (m, n), m, n, A[mask], mask, signs[mask] * admissible, constant)
        recombination_out += constant * form

    tol = 1e-10
    passed = abs(sigma_in) <= recombination_in * (1 + tol) + tol and abs(sigma_out) <= recombination_out * (
        1 + tol
    ) + tol
    near_families = sum(1 for fam in families if fam.bucket == "near")
    logger.info(
        f"Extracted {len(shifts)} shifts: in {sigma_in:.4g} <= {recombination_in:.4g}, "
        f"out {sigma_out:.4g} <= {recombination_out:.4g}"
    )
    return ShiftExtraction(
        families=families,
        shifts=shifts,
        sigma_in=sigma_in,
        recombination_in=recombination_in,
        sigma_out=sigma_out,
        recombination_out=recombination_out,
        excluded_out=excluded,
        near_families=near_families,
        passed=passed and near_families <= max(params.r, 1),
    )


# ============================================================
# REPRESENTATION IDENTITY
# ============================================================


def representation_identity_check(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    T: np.ndarray,
    measure: DoublingMeasure,
    f: np.ndarray,
    g: np.ndarray,
) -> RepresentationReport:
    """
    (T f, g) = sum over all Haar pairs (T~ h_Q, h_R)(f, h_Q)(g, h_R) + <f><g>(T chi_X, chi_X)
    + (pi f, g) + (pi_* f, g), for f, g constant on the finest cubes.
    """
    T = np.asarray(T, dtype=float)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    tree = CubeTree.from_sample(sample)
    system = build_haar_system(tree, measure)
    pi, pi_star, _ = build_paraproducts(system, measure, T)
    T_tilde = T - pi.matrix - pi_star.matrix
    mu = measure.mass

    def pairing(u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(u * v * mu))

    ones = np.ones(space.n)
    lhs = pairing(T @ f, g)
    M = haar_coefficients(system, T_tilde, measure)
    haar_part = float(system.coefficients(g, measure) @ M @ system.coefficients(f, measure))
    mean_f, mean_g = pairing(f, ones) / measure.total, pairing(g, ones) / measure.total
    constant_part = mean_f * mean_g * pairing(T @ ones, ones)
    pi_part = pairing(pi.matrix @ f, g)
    pi_star_part = pairing(pi_star.matrix @ f, g)
    total = haar_part + constant_part + pi_part + pi_star_part
    residual = abs(lhs - total) / max(1.0, abs(lhs))
    return RepresentationReport(
        lhs=lhs,
        haar_part=haar_part,
        constant_part=constant_part,
        pi_part=pi_part,
        pi_star_part=pi_star_part,
        residual=residual,
        passed=residual <= 1e-10,
    )
