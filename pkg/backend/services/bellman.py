"""
Bellman Service
B(x, y) = (xy)^alpha on 1 < xy <= Q: Hessian bound, the midpoint (convexity-gap) inequality
per cube, the tau sequence and its Carleson constant.
"""

import logging
import math

import numpy as np
from numpy.polynomial import legendre

from backend.core.exceptions import DomainExit
from backend.core.models import BellmanParams, CoreModel
from backend.core.number_utils import approx_le, loglog_slope, slack
from backend.core.rng import BELLMAN, stream
from backend.services.haar_weights import (
    Weight,
    carleson_constant,
    cube_a2,
    delta_weight,
    node_averages,
)
from backend.services.metric_core import DoublingMeasure
from backend.services.random_lattice import CubeTree

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
DOMAIN_TOL = 1e-9
QUADRATURE_NODES = 16
SLOPE_TOLERANCE = 0.05


class HessianReport(CoreModel):
    alpha: float
    Q: float
    samples: int
    worst_slack: float
    global_min_form: float
    fd_relative_error: float
    passed: bool


class MidpointReport(CoreModel):
    node: int
    difference: float
    tau: float
    segment_lower: float
    ratio: float | None
    gradient_residual: float
    left_half_ok: bool


class BellmanTreeReport(CoreModel):
    alpha: float
    Q: float
    cubes: int
    min_difference: float
    min_ratio: float | None
    worst_gradient_residual: float
    left_half_ok: bool
    telescoped_ratio: float
    tau_carleson: float
    tau_bound: float
    passed: bool


class TauRow(CoreModel):
    label: str
    a2: float
    carleson: float


class TauExperiment(CoreModel):
    alpha: float
    rows: list[TauRow]
    slope: float
    slope_ok: bool


# ============================================================
# BELLMAN FUNCTION
# ============================================================


def bellman_value(x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    return (np.asarray(x) * np.asarray(y)) ** alpha


def bellman_gradient(x: np.ndarray, y: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    b = bellman_value(x, y, alpha)
    return alpha * b / x, alpha * b / y


def bellman_hessian(x: np.ndarray, y: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(B_xx, B_xy, B_yy)"""
    b = bellman_value(x, y, alpha)
    return alpha * (alpha - 1) * b / x**2, alpha**2 * b / (x * y), alpha * (alpha - 1) * b / y**2


def minus_second_differential(x, y, dx, dy, alpha: float) -> np.ndarray:
    """-d^2 B(x, y)[(dx, dy)] = alpha B ((1 - alpha)(u^2 + v^2) - 2 alpha u v), u = dx/x, v = dy/y"""
    u, v = np.asarray(dx) / x, np.asarray(dy) / y
    return alpha * bellman_value(x, y, alpha) * ((1 - alpha) * (u**2 + v**2) - 2 * alpha * u * v)


def hessian_lower_bound(x, y, dx, dy, alpha: float) -> np.ndarray:
    """alpha (1 - 2 alpha) B (dx^2 / x^2 + dy^2 / y^2)"""
    return alpha * (1 - 2 * alpha) * bellman_value(x, y, alpha) * ((np.asarray(dx) / x) ** 2 + (np.asarray(dy) / y) ** 2)


def sample_domain(Q: float, samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """x log-uniform on [Q^-2, Q^2], xy = s log-uniform on (1, Q]"""
    x = np.exp(rng.uniform(-2 * math.log(Q), 2 * math.log(Q), samples))
    s = np.exp(rng.uniform(0.0, math.log(Q), samples))
    s = np.where(s <= 1.0, np.nextafter(1.0, 2.0), s)
    return x, s / x


def bellman_hessian_check(params: BellmanParams, samples: int = 100_000, seed: int = 0) -> HessianReport:
    """
    Quadratic-form inequality on sampled points of the domain and unit directions,
    positivity of -d^2 B on all of x, y > 0, and the analytic Hessian against
    central differences of the analytic gradient.
    """
    alpha, Q = params.alpha, params.Q
    rng = stream(seed, 0, BELLMAN, 0)
    x, y = sample_domain(max(Q, 1.0 + 1e-12), samples, rng)
    theta = rng.uniform(0.0, 2 * math.pi, samples)
    dx, dy = np.cos(theta), np.sin(theta)
    form = minus_second_differential(x, y, dx, dy, alpha)
    bound = hessian_lower_bound(x, y, dx, dy, alpha)
    worst = slack(form, bound)

    gx = np.exp(rng.uniform(-8.0, 8.0, samples))
    gy = np.exp(rng.uniform(-8.0, 8.0, samples))
    global_form = minus_second_differential(gx, gy, dx, dy, alpha) / bellman_value(gx, gy, alpha)

    hx, hy = FD_STEP * x, FD_STEP * y
    bxx, bxy, byy = bellman_hessian(x, y, alpha)
    fd_xx = (bellman_gradient(x + hx, y, alpha)[0] - bellman_gradient(x - hx, y, alpha)[0]) / (2 * hx)
    fd_xy = (bellman_gradient(x, y + hy, alpha)[0] - bellman_gradient(x, y - hy, alpha)[0]) / (2 * hy)
    fd_yy = (bellman_gradient(x, y + hy, alpha)[1] - bellman_gradient(x, y - hy, alpha)[1]) / (2 * hy)
    fd_error = max(
        float(np.max(np.abs(fd_xx - bxx) / np.abs(bxx))),
        float(np.max(np.abs(fd_xy - bxy) / np.abs(bxy))),
        float(np.max(np.abs(fd_yy - byy) / np.abs(byy))),
    )
    global_min = float(global_form.min())
    passed = worst >= -DOMAIN_TOL and global_min >= -DOMAIN_TOL and fd_error <= 1e-6
    logger.info(f"Hessian check alpha={alpha} Q={Q}: slack {worst:.3e}, fd error {fd_error:.2e}")
    return HessianReport(
        alpha=alpha,
        Q=Q,
        samples=samples,
        worst_slack=worst,
        global_min_form=global_min,
        fd_relative_error=fd_error,
        passed=passed,
    )


# ============================================================
# MIDPOINT INEQUALITY
# ============================================================


def tau_sequence(tree: CubeTree, w: np.ndarray, measure: DoublingMeasure, alpha: float) -> np.ndarray:
    """tau_I = <w>^a <s>^a (Delta_I w^2 / <w>^2 + Delta_I s^2 / <s>^2) mu(I)"""
    w = np.asarray(w, dtype=float)
    sigma = 1.0 / w
    avg_w = node_averages(tree, w, measure)
    avg_s = node_averages(tree, sigma, measure)
    mass = tree.indicator.astype(float) @ measure.mass
    dw = delta_weight(tree, w, measure)
    ds = delta_weight(tree, sigma, measure)
    return (avg_w * avg_s) ** alpha * ((dw / avg_w) ** 2 + (ds / avg_s) ** 2) * mass


def cube_statistics(
    tree: CubeTree, w: np.ndarray, measure: DoublingMeasure
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(<w>_I, <sigma>_I, mu(I)) for every cube"""
    w = np.asarray(w, dtype=float)
    mass = tree.indicator.astype(float) @ measure.mass
    return node_averages(tree, w, measure), node_averages(tree, 1.0 / w, measure), mass


def _check_domain(node: int, x: float, y: float, Q: float) -> None:
    product = x * y
    if product < 1.0 - DOMAIN_TOL or product > Q * (1.0 + DOMAIN_TOL):
        raise DomainExit(node, product, Q)


def midpoint_inequality_check(
    tree: CubeTree,
    node: int,
    w: np.ndarray,
    measure: DoublingMeasure,
    alpha: float,
    Q: float,
    tau: np.ndarray | None = None,
    statistics: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> MidpointReport:
    """
    D = mu(I) B(a) - sum_s mu(s) B(b_s) >= 0, with a = (<w>_I, <s>_I), b_s the son averages,
    and D >= sum_s mu(s) int_0^1/2 (1 - t)(-q_s''(t)) dt along each segment [a, b_s].
    """
    avg_w, avg_s, mass = cube_statistics(tree, w, measure) if statistics is None else statistics
    tau = tau_sequence(tree, w, measure, alpha) if tau is None else tau
    sons = list(tree.children[node])

    a = np.array([avg_w[node], avg_s[node]])
    _check_domain(node, a[0], a[1], Q)
    b = np.column_stack([avg_w[sons], avg_s[sons]]) if sons else np.zeros((0, 2))
    for s, (bx, by) in zip(sons, b, strict=True):
        _check_domain(s, bx, by, Q)

    son_mass = mass[sons]
    son_values = bellman_value(b[:, 0], b[:, 1], alpha)
    difference = float(mass[node] * bellman_value(a[0], a[1], alpha) - np.sum(son_mass * son_values))
    gradient_residual = float(np.abs(np.sum((son_mass / mass[node])[:, None] * (a - b), axis=0)).max()) if sons else 0.0

    nodes, weights = legendre.leggauss(QUADRATURE_NODES)
    t = 0.25 * (nodes + 1.0)
    half_weights = 0.25 * weights
    segment_lower = 0.0
    left_half_ok = True
    for m_s, b_s in zip(son_mass, b, strict=True):
        direction = b_s - a
        points = a[None, :] + t[:, None] * direction[None, :]
        left_half_ok &= bool(np.all(points >= 0.5 * a[None, :] * (1 - 1e-12)))
        curvature = minus_second_differential(points[:, 0], points[:, 1], direction[0], direction[1], alpha)
        segment_lower += m_s * float(np.sum(half_weights * (1.0 - t) * curvature))

    tau_i = float(tau[node])
    return MidpointReport(
        node=node,
        difference=difference,
        tau=tau_i,
        segment_lower=segment_lower,
        ratio=difference / tau_i if tau_i > 0 else None,
        gradient_residual=gradient_residual,
        left_half_ok=left_half_ok,
    )


def bellman_tree_check(
    tree: CubeTree,
    weight: Weight,
    measure: DoublingMeasure,
    alpha: float,
) -> BellmanTreeReport:
    """
    Midpoint inequality on every cube, then the telescoped sum
    sum_{J inside I} D_J <= Q^alpha mu(I) and Carleson(tau) <= Q^alpha / c with c = min D_J / tau_J.
    Q is the larger of the ball and cube A2 characteristics.
    """
    w = weight.w
    Q = max(weight.a2, cube_a2(tree, w, measure))
    tau = tau_sequence(tree, w, measure, alpha)
    mass = tree.indicator.astype(float) @ measure.mass
    statistics = cube_statistics(tree, w, measure)
    reports = [
        midpoint_inequality_check(tree, node, w, measure, alpha, Q, tau, statistics) for node in range(tree.n_nodes)
    ]

    differences = np.array([r.difference for r in reports])
    ratios = [r.ratio for r in reports if r.ratio is not None]
    min_ratio = min(ratios) if ratios else None

    telescoped = np.zeros(tree.n_nodes)
    for node in np.argsort(-tree.generation, kind="stable"):
        telescoped[node] += differences[node]
        parent = int(tree.parent[node])
        if parent >= 0:
            telescoped[parent] += telescoped[node]
    telescoped_ratio = float(np.max(telescoped / (Q**alpha * mass)))

    tau_carleson = carleson_constant(tau, tree, mass)
    tau_bound = Q**alpha / min_ratio if min_ratio else math.inf
    min_difference = float(differences.min())
    segment_ok = all(r.difference >= r.segment_lower - DOMAIN_TOL * max(1.0, abs(r.difference)) for r in reports)
    passed = (
        min_difference >= -DOMAIN_TOL
        and segment_ok
        and all(r.left_half_ok for r in reports)
        and max(r.gradient_residual for r in reports) <= 1e-12 * max(1.0, Q)
        and telescoped_ratio <= 1.0 + DOMAIN_TOL
        and approx_le(tau_carleson, tau_bound)
    )
    return BellmanTreeReport(
        alpha=alpha,
        Q=Q,
        cubes=tree.n_nodes,
        min_difference=min_difference,
        min_ratio=min_ratio,
        worst_gradient_residual=max(r.gradient_residual for r in reports),
        left_half_ok=all(r.left_half_ok for r in reports),
        telescoped_ratio=telescoped_ratio,
        tau_carleson=tau_carleson,
        tau_bound=tau_bound,
        passed=passed,
    )


# ============================================================
# TAU CARLESON SCALING
# ============================================================


def tau_carleson_experiment(
    tree: CubeTree,
    measure: DoublingMeasure,
    weights: list[Weight],
    alpha: float,
) -> TauExperiment:
    """Carleson constant of tau per weight and its log-log slope against [w]_2"""
    mass = tree.indicator.astype(float) @ measure.mass
    rows = []
    for weight in weights:
        tau = tau_sequence(tree, weight.w, measure, alpha)
        rows.append(TauRow(label=weight.label, a2=weight.a2, carleson=carleson_constant(tau, tree, mass)))
    slope = loglog_slope(np.array([r.a2 for r in rows]), np.array([r.carleson for r in rows]))
    if math.isnan(slope):
        slope = 0.0
    return TauExperiment(alpha=alpha, rows=rows, slope=slope, slope_ok=slope <= alpha + SLOPE_TOLERANCE)


def aggregate_tau(tau: np.ndarray, families: dict[int, list[int]]) -> dict[int, float]:
    """tilde tau_L = sum of tau_K over the stopping cubes K of L"""
    return {root: float(np.sum(tau[members])) for root, members in families.items()}
