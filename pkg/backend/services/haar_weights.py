"""
Haar & Weights Service
Haar systems on cube trees, the weighted Haar split, A2 / A-infinity characteristics,
maximal functions, Carleson constants and the Carleson embedding checks.
"""

import logging
import math

import numpy as np
from pydantic import field_validator
from scipy import optimize

from backend.core.config import settings
from backend.core.errors import config_error, invariant_violation
from backend.core.exceptions import DegenerateWeight, ZeroMassSon
from backend.core.models import ArrayModel, CoreModel, frozen_array
from backend.core.number_utils import slack
from backend.services.metric_core import DoublingMeasure, FiniteMetricSpace
from backend.services.random_lattice import CubeTree

logger = logging.getLogger(__name__)

BETA_SEARCH_MAX = 40.0
BETA_SEARCH_STEPS = 200


# ============================================================
# DOMAIN TYPES
# ============================================================


class HaarSystem(ArrayModel):
    """
    Rows are Haar functions h_Q^j stored by their per-point values.
    node[i] is the cube of row i and index[i] its j.
    """

    tree: CubeTree
    node: np.ndarray
    index: np.ndarray
    vectors: np.ndarray
    node_mass: np.ndarray
    sup_constant: float

    @field_validator("node", "index", mode="before")
    @classmethod
    def _freeze_int(cls, v):
        return frozen_array(v, dtype=int)

    @field_validator("vectors", "node_mass", mode="before")
    @classmethod
    def _freeze_float(cls, v):
        return frozen_array(v)

    @property
    def size(self) -> int:
        return int(self.node.size)

    def rows_of(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.node == node)

    def coefficients(self, f: np.ndarray, measure: DoublingMeasure) -> np.ndarray:
        """(f, h_Q^j)_mu for every row"""
        if self.size == 0:
            return np.zeros(0)
        return self.vectors @ (np.asarray(f, dtype=float) * measure.mass)

    def son_values(self, row: int) -> np.ndarray:
        node = int(self.node[row])
        return np.array([self.vectors[row, self.tree.first_member[s]] for s in self.tree.children[node]])


class Weight(ArrayModel):
    w: np.ndarray
    sigma: np.ndarray
    a2: float
    ainfty: float
    label: str = ""

    @field_validator("w", "sigma", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v)


class WeightedHaarDecomposition(ArrayModel):
    row: int
    node: int
    alpha: float
    beta: float
    hw: np.ndarray
    pairing: float
    delta_w: float
    residual: float
    hw_mean: float
    hw_norm: float


class DecompositionChecks(CoreModel):
    instances: int
    worst_residual: float
    alpha_slack: float
    alpha_literal_slack: float
    beta_slack: float
    delta_slack: float
    orthogonality: float
    normalization: float


class EmbeddingReport(CoreModel):
    carleson: float
    lhs: float
    integral: float
    ratio: float
    passed: bool
    weighted_lhs: float | None = None
    weighted_integral: float | None = None
    sigma_oscillation: float | None = None
    fitted_constant: float | None = None
    unit_bound_holds: bool | None = None


class ChainReport(CoreModel):
    cube_ainfty: float
    cube_slack: float
    ball_ainfty: float
    ball_ratio: float
    passed: bool


class AInftyReport(CoreModel):
    fujii_wilson: float
    exp_log: float
    carleson: float
    worst_ratio: float
    passed: bool


# ============================================================
# HAAR SYSTEMS
# ============================================================


def haar_son_values(son_mass: np.ndarray) -> np.ndarray:
    """
    (M-1) x M values of the Haar functions on the M sons: orthonormalize
    [1, e_1, ..., e_{M-1}] in L2 of the son masses, keeping R's diagonal positive.
    """
    m = np.asarray(son_mass, dtype=float)
    size = m.size
    basis = np.eye(size)
    basis[:, 0] = 1.0
    root = np.sqrt(m)
    q, r = np.linalg.qr(root[:, None] * basis)
    q = q * np.sign(np.diag(r))[None, :]
    return (q[:, 1:] / root[:, None]).T


def build_haar_system(tree: CubeTree, measure: DoublingMeasure) -> HaarSystem:
    """Haar functions for every cube with two or more sons; leaves and single-son cubes get none"""
    node_mass = tree.indicator.astype(float) @ measure.mass
    nodes, indices, rows = [], [], []
    sup_constant = 0.0
    for node, sons in enumerate(tree.children):
        if len(sons) < 2:
            continue
        son_mass = node_mass[list(sons)]
        if np.any(son_mass <= 0):
            raise ZeroMassSon(node)
        values = haar_son_values(son_mass)
        son_of_point = tree.point_node[tree.generation[node] + 1]
        lookup = {s: i for i, s in enumerate(sons)}
        members = tree.members[node]
        son_idx = np.array([lookup[int(s)] for s in son_of_point[members]])
        for j, vals in enumerate(values):
            vec = np.zeros(tree.n_points)
            vec[members] = vals[son_idx]
            nodes.append(node)
            indices.append(j + 1)
            rows.append(vec)
            sup_constant = max(sup_constant, float(np.abs(vals).max() * math.sqrt(node_mass[node])))
    vectors = np.array(rows) if rows else np.zeros((0, tree.n_points))
    logger.debug(f"Haar system: {len(rows)} functions on {tree.n_nodes} cubes, C={sup_constant:.4g}")
    return HaarSystem(
        tree=tree,
        node=nodes,
        index=indices,
        vectors=vectors,
        node_mass=node_mass,
        sup_constant=sup_constant,
    )


def parseval_residual(system: HaarSystem, measure: DoublingMeasure, f: np.ndarray) -> float:
    """| ||f||^2 - <f>^2 mu(X) - sum (f, h)^2 | relative to ||f||^2, for f constant on leaves"""
    f = np.asarray(f, dtype=float)
    total = measure.total
    energy = float(np.sum(f**2 * measure.mass))
    mean = float(np.sum(f * measure.mass)) / total
    coefficients = system.coefficients(f, measure)
    return abs(energy - mean**2 * total - float(np.sum(coefficients**2))) / max(energy, 1e-300)


def leaf_function(tree: CubeTree, leaf_values: np.ndarray) -> np.ndarray:
    """Per-point function from one value per finest-generation cube"""
    leaves = tree.nodes_at(tree.depth)
    lut = np.zeros(tree.n_nodes)
    lut[leaves] = leaf_values
    return lut[tree.point_node[tree.depth]]


# ============================================================
# WEIGHTED HAAR SPLIT
# ============================================================


def node_averages(tree: CubeTree, values: np.ndarray, measure: DoublingMeasure) -> np.ndarray:
    """<v>_{mu, Q} for every node"""
    mass = tree.indicator.astype(float) @ measure.mass
    return (tree.indicator.astype(float) @ (np.asarray(values, dtype=float) * measure.mass)) / mass


def delta_weight(tree: CubeTree, w: np.ndarray, measure: DoublingMeasure) -> np.ndarray:
    """Delta_I w = sum over sons s of |<w>_s - <w>_I|; zero on leaves"""
    avg = node_averages(tree, w, measure)
    out = np.zeros(tree.n_nodes)
    for node, sons in enumerate(tree.children):
        if sons:
            out[node] = float(np.sum(np.abs(avg[list(sons)] - avg[node])))
    return out


def weighted_haar_decomposition(
    system: HaarSystem,
    row: int,
    w: np.ndarray,
    measure: DoublingMeasure,
) -> WeightedHaarDecomposition:
    """
    h = alpha h^w + beta chi_I on I, where h^w is h minus its L2(w) mean over I,
    normalized in L2(w dmu).
    """
    node = int(system.node[row])
    inside = system.tree.indicator[node]
    w = np.asarray(w, dtype=float)
    wm = w * measure.mass
    w_mass = float(wm[inside].sum())
    if w_mass <= 0:
        raise DegenerateWeight(node)
    h = system.vectors[row]
    pairing = float(h @ wm)
    beta = pairing / w_mass
    centered = np.where(inside, h - beta, 0.0)
    alpha = math.sqrt(float(np.sum(centered**2 * wm)))
    hw = centered / alpha
    rebuilt = alpha * hw + beta * inside
    delta_w = float(delta_weight(system.tree, w, measure)[node])
    return WeightedHaarDecomposition(
        row=row,
        node=node,
        alpha=alpha,
        beta=beta,
        hw=hw,
        pairing=pairing,
        delta_w=delta_w,
        residual=float(np.abs(rebuilt - h).max()),
        hw_mean=float(hw @ wm),
        hw_norm=float(np.sum(hw**2 * wm)),
    )


def split_coefficients(system: HaarSystem, w: np.ndarray, measure: DoublingMeasure) -> tuple[np.ndarray, np.ndarray]:
    """(alpha, beta) of every row at once"""
    wm = np.asarray(w, dtype=float) * measure.mass
    w_mass = system.tree.indicator[system.node].astype(float) @ wm
    pairing = system.vectors @ wm
    beta = pairing / w_mass
    alpha = np.sqrt(np.maximum((system.vectors**2) @ wm - pairing**2 / w_mass, 0.0))
    return alpha, beta


def check_decomposition(system: HaarSystem, w: np.ndarray, measure: DoublingMeasure) -> DecompositionChecks:
    """
    All properties of the split on every row:
    |alpha| <= C_h sqrt<w>_I, the literal |alpha| <= sqrt<w>_I (reported), |beta| = |(h, w)| / w(I),
    h^w mean-zero and normalized in L2(w), |(h, w)| <= C_h Delta_I w mu(I)^(1/2).
    """
    avg = node_averages(system.tree, w, measure)
    c_h = system.sup_constant
    wm = np.asarray(w, dtype=float) * measure.mass
    alpha_slack = literal = beta_slack = delta_slack = math.inf
    residual = ortho = norm = 0.0
    for row in range(system.size):
        dec = weighted_haar_decomposition(system, row, w, measure)
        node = dec.node
        mass = float(system.node_mass[node])
        residual = max(residual, dec.residual)
        alpha_slack = min(alpha_slack, slack(c_h * math.sqrt(avg[node]), abs(dec.alpha)))
        literal = min(literal, slack(math.sqrt(avg[node]), abs(dec.alpha)))
        w_mass = float(wm[system.tree.indicator[node]].sum())
        beta_slack = min(beta_slack, slack(abs(dec.pairing) / w_mass, abs(dec.beta)))
        delta_slack = min(delta_slack, slack(c_h * dec.delta_w * math.sqrt(mass), abs(dec.pairing)))
        ortho = max(ortho, abs(dec.hw_mean))
        norm = max(norm, abs(dec.hw_norm - 1.0))
    return DecompositionChecks(
        instances=system.size,
        worst_residual=residual,
        alpha_slack=alpha_slack,
        alpha_literal_slack=literal,
        beta_slack=beta_slack,
        delta_slack=delta_slack,
        orthogonality=ortho,
        normalization=norm,
    )


# ============================================================
# CHARACTERISTICS & MAXIMAL FUNCTIONS
# ============================================================


def _ball_averages(space: FiniteMetricSpace, values: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """
    Averages of values over every distinct open ball, as an (n, n) array with nan where
    the sorted prefix is not a ball. Row x holds the balls centered at x.
    """
    order, _, last = space.ball_order
    mass = np.cumsum(nu[order], axis=1)
    total = np.cumsum((values * nu)[order], axis=1)
    return np.where(last, total / mass, np.nan)


def a2_characteristic(w: np.ndarray, measure: DoublingMeasure, space: FiniteMetricSpace) -> float:
    """sup over balls of <w>_B <w^-1>_B, the whole space included"""
    w = np.asarray(w, dtype=float)
    product = _ball_averages(space, w, measure.mass) * _ball_averages(space, 1.0 / w, measure.mass)
    return float(np.nanmax(product))


def ainfty_characteristic(w: np.ndarray, measure: DoublingMeasure, space: FiniteMetricSpace) -> float:
    """sup over balls of <w>_B exp(-<log w>_B)"""
    w = np.asarray(w, dtype=float)
    ratio = _ball_averages(space, w, measure.mass) * np.exp(-_ball_averages(space, np.log(w), measure.mass))
    return float(np.nanmax(ratio))


def maximal_function(f: np.ndarray, nu: np.ndarray, space: FiniteMetricSpace) -> np.ndarray:
    """Centered maximal function of |f| with respect to nu, exact over the finite radius set"""
    averages = _ball_averages(space, np.abs(np.asarray(f, dtype=float)), np.asarray(nu, dtype=float))
    return np.nanmax(averages, axis=1)


def maximal_norm_ratio(f: np.ndarray, nu: np.ndarray, space: FiniteMetricSpace, q: float) -> float:
    """||M_nu f||_{L^q(nu)} / ||f||_{L^q(nu)}"""
    nu = np.asarray(nu, dtype=float)
    mf = maximal_function(f, nu, space)
    top = float(np.sum(mf**q * nu)) ** (1.0 / q)
    bottom = float(np.sum(np.abs(f) ** q * nu)) ** (1.0 / q)
    return top / bottom if bottom > 0 else 0.0


def cube_a2(tree: CubeTree, w: np.ndarray, measure: DoublingMeasure) -> float:
    return float(np.max(node_averages(tree, w, measure) * node_averages(tree, 1.0 / np.asarray(w), measure)))


def cube_ainfty(tree: CubeTree, w: np.ndarray, measure: DoublingMeasure) -> float:
    """Exp-log A-infinity characteristic over cubes"""
    w = np.asarray(w, dtype=float)
    return float(np.max(node_averages(tree, w, measure) * np.exp(-node_averages(tree, np.log(w), measure))))


def dyadic_maximal(tree: CubeTree, f: np.ndarray, measure: DoublingMeasure, floor: int = 0) -> np.ndarray:
    """
    out[g, x] = max over cubes R of generation >= g containing x of <|f|>_R.
    Row `floor` is the dyadic maximal function localized to generation-floor cubes.
    """
    avg = node_averages(tree, np.abs(np.asarray(f, dtype=float)), measure)
    out = np.empty(tree.point_node.shape)
    out[tree.depth] = avg[tree.point_node[tree.depth]]
    for g in range(tree.depth - 1, floor - 1, -1):
        out[g] = np.maximum(avg[tree.point_node[g]], out[g + 1])
    return out


def fujii_wilson_ainfty(tree: CubeTree, w: np.ndarray, measure: DoublingMeasure) -> float:
    """sup_Q <M_Q(w chi_Q)>_Q / <w>_Q with the maximal function localized to Q"""
    w = np.asarray(w, dtype=float)
    maximal = dyadic_maximal(tree, w, measure)
    avg = node_averages(tree, w, measure)
    worst = 0.0
    for node in range(tree.n_nodes):
        members = tree.members[node]
        g = int(tree.generation[node])
        local = float(np.sum(maximal[g, members] * measure.mass[members]) / measure.mass[members].sum())
        worst = max(worst, local / avg[node])
    return worst


def make_weight(
    values: np.ndarray,
    space: FiniteMetricSpace,
    measure: DoublingMeasure,
    label: str = "",
) -> Weight:
    values = np.asarray(values, dtype=float)
    if values.shape != (space.n,) or np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise config_error(f"Weight '{label}' must hold {space.n} finite positive values", "weight")
    return Weight(
        w=values,
        sigma=1.0 / values,
        a2=a2_characteristic(values, measure, space),
        ainfty=ainfty_characteristic(values, measure, space),
        label=label,
    )


# ============================================================
# CARLESON SEQUENCES
# ============================================================


def subtree_sums(tree: CubeTree, values: np.ndarray) -> np.ndarray:
    """sum over R inside Q of values[R], for every Q"""
    sums = np.asarray(values, dtype=float).copy()
    for node in np.argsort(-tree.generation, kind="stable"):
        parent = int(tree.parent[node])
        if parent >= 0:
            sums[parent] += sums[node]
    return sums


def carleson_constant(values: np.ndarray, tree: CubeTree, node_mass: np.ndarray) -> float:
    """Best B with sum_{R inside Q} a_R <= B mass(Q) for every Q"""
    values = np.asarray(values, dtype=float)
    if not np.any(values):
        return 0.0
    return float(np.max(subtree_sums(tree, values) / node_mass))


def node_infima(tree: CubeTree, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return np.array([f[m].min() for m in tree.members])


def node_suprema(tree: CubeTree, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return np.array([f[m].max() for m in tree.members])


def carleson_embedding_check(
    tree: CubeTree,
    measure: DoublingMeasure,
    alpha: np.ndarray,
    F: np.ndarray,
    sigma: np.ndarray | None = None,
    raise_on_violation: bool = True,
) -> EmbeddingReport:
    """
    sum_L inf_L F alpha_L <= 2 B int F dmu for a Carleson sequence alpha of intensity B.

    With sigma, the weighted form sum_L inf_L F alpha_L / <sigma>_L <= C B int F / sigma dmu
    is measured against the same B. The fitted C is reported and checked against
    2 max_L sup_L sigma / <sigma>_L, which bounds it for every F.
    """
    alpha = np.asarray(alpha, dtype=float)
    F = np.asarray(F, dtype=float)
    if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
        raise config_error("Carleson sequence must be finite and nonnegative", "alpha")
    if np.any(F <= 0) or not np.all(np.isfinite(F)):
        raise config_error("F must be finite and positive", "F")
    node_mass = tree.indicator.astype(float) @ measure.mass
    carleson = carleson_constant(alpha, tree, node_mass)
    infima = node_infima(tree, F)
    lhs = float(np.sum(infima * alpha))
    integral = float(np.sum(F * measure.mass))
    bound = 2.0 * carleson * integral
    passed = lhs <= bound * (1 + 1e-12) + 1e-300
    worst = slack(bound, lhs)
    report = EmbeddingReport(
        carleson=carleson,
        lhs=lhs,
        integral=integral,
        ratio=lhs / (carleson * integral) if carleson * integral > 0 else 0.0,
        passed=passed,
        unit_bound_holds=(lhs <= integral * (1 + 1e-12)) if carleson <= 1.0 else None,
    )

    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise config_error("sigma must be finite and positive", "sigma")
        avg_sigma = node_averages(tree, sigma, measure)
        oscillation = float(np.max(node_suprema(tree, sigma) / avg_sigma))
        weighted_lhs = float(np.sum(infima * alpha / avg_sigma))
        weighted_integral = float(np.sum(F / sigma * measure.mass))
        scale = carleson * weighted_integral
        fitted = weighted_lhs / scale if scale > 0 else 0.0
        weighted_bound = 2.0 * oscillation * scale
        passed &= weighted_lhs <= weighted_bound * (1 + 1e-12) + 1e-300
        worst = min(worst, slack(weighted_bound, weighted_lhs))
        report = report.model_copy(
            update={
                "weighted_lhs": weighted_lhs,
                "weighted_integral": weighted_integral,
                "sigma_oscillation": oscillation,
                "fitted_constant": fitted,
                "passed": passed,
            }
        )

    if not passed and raise_on_violation:
        raise invariant_violation("carleson embedding", worst, report.model_dump())
    return report


def chain_inequality_check(
    tree: CubeTree,
    w: np.ndarray,
    measure: DoublingMeasure,
    space: FiniteMetricSpace,
) -> ChainReport:
    """
    <w>_R <= [w]_Ainf inf_{x in R} M(w^(1/2) chi_R)^2 on every cube: asserted with the cube
    exp-log characteristic and dyadic maximal function, reported for balls.
    """
    w = np.asarray(w, dtype=float)
    avg = node_averages(tree, w, measure)
    root = np.sqrt(w)
    cube_const = cube_ainfty(tree, w, measure)
    ball_const = ainfty_characteristic(w, measure, space)
    cube_slack = math.inf
    ball_ratio = 0.0
    for node in range(tree.n_nodes):
        members = tree.members[node]
        localized = np.where(tree.indicator[node], root, 0.0)
        dyadic = dyadic_maximal(tree, localized, measure)[0, members].min()
        cube_slack = min(cube_slack, slack(cube_const * dyadic**2, avg[node]))
        ball = maximal_function(localized, measure.mass, space)[members].min()
        ball_ratio = max(ball_ratio, avg[node] / (ball_const * ball**2))
    return ChainReport(
        cube_ainfty=cube_const,
        cube_slack=cube_slack,
        ball_ainfty=ball_const,
        ball_ratio=ball_ratio,
        passed=cube_slack >= -settings.A2LAB_SLACK_TOL,
    )


def ainfty_inequality_check(
    tree: CubeTree,
    w: np.ndarray,
    measure: DoublingMeasure,
    b: np.ndarray,
) -> AInftyReport:
    """sum_{R inside Q} <w>_R b_R^2 <= [w]_FW ||b||_C w(Q) for every Q"""
    w = np.asarray(w, dtype=float)
    node_mass = tree.indicator.astype(float) @ measure.mass
    squares = np.asarray(b, dtype=float) ** 2
    carleson = carleson_constant(squares, tree, node_mass)
    fw = fujii_wilson_ainfty(tree, w, measure)
    avg = node_averages(tree, w, measure)
    lhs = subtree_sums(tree, avg * squares)
    w_mass = tree.indicator.astype(float) @ (w * measure.mass)
    rhs = fw * carleson * w_mass
    positive = rhs > 0
    worst = float(np.max(lhs[positive] / rhs[positive])) if positive.any() else 0.0
    return AInftyReport(
        fujii_wilson=fw,
        exp_log=cube_ainfty(tree, w, measure),
        carleson=carleson,
        worst_ratio=worst,
        passed=bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-300)),
    )


# ============================================================
# POWER WEIGHTS
# ============================================================


def power_weight(space: FiniteMetricSpace, beta: float, center: int = 0, floor: float | None = None) -> np.ndarray:
    """dist(x, center)^beta, the distance clamped below by the net spacing"""
    floor = space.min_spacing if floor is None else floor
    return np.maximum(space.dist[center], floor) ** beta


def parse_power_spec(spec: str) -> tuple[list[float], int]:
    """'power:beta=a..b[:count=k][:center=c]' or 'power:beta=a[:center=c]' -> (betas, center)"""
    kind, *parts = spec.strip().split(":")
    try:
        options = dict(part.split("=", 1) for part in parts)
        bounds = [float(b) for b in options["beta"].split("..")]
        center = int(options.get("center", 0))
        count = int(options.get("count", 5))
    except (KeyError, ValueError) as e:
        raise config_error(f"Unrecognized weight spec '{spec}': {e}", "weight") from e
    if kind != "power" or len(bounds) not in (1, 2) or count < 1:
        raise config_error(f"Unrecognized weight spec '{spec}'", "weight")
    if len(bounds) == 1:
        return bounds, center
    return np.linspace(bounds[0], bounds[1], count).tolist(), center


def power_weight_family(
    space: FiniteMetricSpace,
    measure: DoublingMeasure,
    spec: str | None = None,
    targets: list[float] | None = None,
    center: int = 0,
) -> list[Weight]:
    """Power weights from a beta range, or with beta solved so [w]_2 hits each target"""
    if targets is None:
        if spec is None:
            raise config_error("power weight family needs a spec or a2 targets", "weight")
        betas, center = parse_power_spec(spec)
    else:
        betas = [_beta_for_target(space, measure, t, center) for t in targets]
    return [make_weight(power_weight(space, b, center), space, measure, label=f"power:beta={b:.6g}") for b in betas]


def _beta_for_target(space: FiniteMetricSpace, measure: DoublingMeasure, target: float, center: int) -> float:
    """Root of log [w]_2 - log target over beta in [0, BETA_SEARCH_MAX]"""
    if target <= 1.0:
        return 0.0
    log_target = math.log(target)

    def excess(beta: float) -> float:
        return math.log(a2_characteristic(power_weight(space, beta, center), measure, space)) - log_target

    if excess(BETA_SEARCH_MAX) < 0:
        logger.warning(f"[w]_2 target {target:g} out of reach; using beta={BETA_SEARCH_MAX}")
        return BETA_SEARCH_MAX
    return float(optimize.brentq(excess, 0.0, BETA_SEARCH_MAX, xtol=1e-13, maxiter=BETA_SEARCH_STEPS))
