"""
Metric Core Service
Finite metric spaces with doubling measures, balls, and kernel scale functions.
"""

import logging
from functools import cached_property
from typing import Literal

import networkx as nx
import numpy as np
from pydantic import Field, field_validator
from scipy.spatial.distance import cdist

from backend.core.exceptions import NonSymmetric, TriangleViolation
from backend.core.models import ArrayModel, CoreModel, frozen_array
from backend.core.rng import INPUT, stream

logger = logging.getLogger(__name__)

# Doubling packings are O(n^4) in the worst case; the load report skips them above this size
DOUBLING_REPORT_MAX_POINTS = 256


# ============================================================
# DOMAIN TYPES
# ============================================================


class FiniteMetricSpace(ArrayModel):
    """
    n abstract points with a symmetric distance matrix.
    dist holds the normalized metric; scale is the factor the raw input was divided by.
    """

    dist: np.ndarray
    scale: float = 1.0
    coords: np.ndarray | None = None
    name: str = ""

    @field_validator("dist", mode="before")
    @classmethod
    def _freeze_dist(cls, v):
        return frozen_array(v)

    @field_validator("coords", mode="before")
    @classmethod
    def _freeze_coords(cls, v):
        return None if v is None else frozen_array(v)

    @property
    def n(self) -> int:
        return int(self.dist.shape[0])

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n else 0.0

    @cached_property
    def min_spacing(self) -> float:
        if self.n < 2:
            return 0.0
        off = self.dist[~np.eye(self.n, dtype=bool)]
        return float(off.min())

    @cached_property
    def ball_order(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Per center: point indices sorted by distance (stable), the sorted distances,
        and a mask marking the last entry of every tie group. Every distinct ball
        B(x, r) is a prefix of the sorted row ending at a marked entry.
        """
        order = np.argsort(self.dist, axis=1, kind="stable")
        sorted_d = np.take_along_axis(self.dist, order, axis=1)
        last = np.ones_like(sorted_d, dtype=bool)
        last[:, :-1] = sorted_d[:, 1:] > sorted_d[:, :-1]
        return order, sorted_d, last


class DoublingMeasure(ArrayModel):
    mass: np.ndarray

    @field_validator("mass", mode="before")
    @classmethod
    def _positive(cls, v):
        arr = frozen_array(v)
        if arr.ndim != 1 or arr.size == 0 or np.any(~np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("point masses must be finite and positive")
        return arr

    @property
    def total(self) -> float:
        return float(self.mass.sum())


class KernelProfile(CoreModel):
    """
    Scale function lambda(x, r): either r itself ("distance")
    or the ball measure mu(B(x, r)) ("measure").
    """

    kind: Literal["distance", "measure"] = "distance"
    holder_eps: float = Field(1.0, gt=0.0, le=1.0)
    doubling_const: float = Field(2.0, ge=1.0)


class SpaceValidationReport(CoreModel):
    n: int
    raw_diameter: float
    scale: float
    rescaled: bool
    max_asymmetry: float
    worst_triangle_excess: float
    doubling_estimate: float | None = None


class KernelProfileReport(CoreModel):
    kind: str
    monotone: bool
    lambda_doubling: float
    ball_to_lambda: float


# ============================================================
# CONSTRUCTION & VALIDATION
# ============================================================


def validate_space(
    dist: np.ndarray,
    coords: np.ndarray | None = None,
    rescale: bool = True,
    name: str = "",
    tol: float = 1e-12,
) -> tuple[FiniteMetricSpace, SpaceValidationReport]:
    """
    Check metric axioms and normalize the diameter to 1.
    Raises NonSymmetric or TriangleViolation with the offending indices.
    """
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise NonSymmetric(0, 0)
    n = d.shape[0]
    scale_ref = max(float(np.abs(d).max()) if n else 0.0, 1.0)

    asym = np.abs(d - d.T)
    if n and asym.max() > tol * scale_ref:
        i, j = np.unravel_index(int(np.argmax(asym)), asym.shape)
        raise NonSymmetric(int(i), int(j))
    if n and np.abs(np.diag(d)).max() > 0:
        i = int(np.argmax(np.abs(np.diag(d))))
        raise NonSymmetric(i, i)
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        i, j = np.argwhere((d <= 0) & off)[0]
        raise NonSymmetric(int(i), int(j))
    d = (d + d.T) / 2.0

    worst = 0.0
    for j in range(n):
        # d(i,k) - d(i,j) - d(j,k) over all (i,k) through the midpoint j
        excess = d - d[:, j, None] - d[None, j, :]
        k = int(np.argmax(excess))
        if excess.flat[k] > worst:
            worst = float(excess.flat[k])
        if excess.flat[k] > tol * scale_ref:
            i, kk = np.unravel_index(k, excess.shape)
            raise TriangleViolation(int(i), j, int(kk), float(excess.flat[k]))

    raw_diameter = float(d.max()) if n else 0.0
    scale = raw_diameter if (rescale and raw_diameter > 0) else 1.0
    if scale != 1.0:
        logger.info(f"Rescaling space '{name}' by 1/{scale:.6g} to unit diameter")
    space = FiniteMetricSpace(
        dist=d / scale,
        scale=scale,
        coords=None if coords is None else np.asarray(coords, dtype=float) / scale,
        name=name,
    )
    report = SpaceValidationReport(
        n=n,
        raw_diameter=raw_diameter,
        scale=scale,
        rescaled=scale != 1.0,
        max_asymmetry=float(asym.max()) if n else 0.0,
        worst_triangle_excess=worst,
        doubling_estimate=doubling_constant_estimate(space) if n <= DOUBLING_REPORT_MAX_POINTS else None,
    )
    return space, report


def space_from_coords(coords: np.ndarray, metric: str = "euclidean", rescale: bool = True, name: str = "") -> FiniteMetricSpace:
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    space, _ = validate_space(cdist(coords, coords, metric=metric), coords=coords, rescale=rescale, name=name)
    return space


def uniform_measure(n: int) -> DoublingMeasure:
    return DoublingMeasure(mass=np.full(n, 1.0 / n))


def uniform_net(n: int) -> FiniteMetricSpace:
    """n equally spaced points of [0, 1]"""
    return space_from_coords(np.linspace(0.0, 1.0, n), name=f"net1d-{n}")


def grid_net(side: int) -> FiniteMetricSpace:
    """side x side grid of [0, 1]^2, rescaled to unit diameter"""
    axis = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return space_from_coords(np.column_stack([xx.ravel(), yy.ravel()]), name=f"net2d-{side}")


def random_tree_metric(n: int, seed: int) -> FiniteMetricSpace:
    """Shortest-path metric of a random weighted tree on n nodes"""
    rng = stream(seed, 0, INPUT, n)
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    for node in range(1, n):
        graph.add_edge(node, int(rng.integers(0, node)), weight=float(rng.uniform(0.5, 1.5)))
    dist = nx.floyd_warshall_numpy(graph, nodelist=list(range(n)), weight="weight")
    space, _ = validate_space(np.asarray(dist), name=f"tree-{n}-{seed}")
    return space


def random_euclidean_space(n: int, seed: int, side: float = 2.5, dim: int = 2) -> FiniteMetricSpace:
    """Random points of [0, side]^dim kept at their natural scale"""
    rng = stream(seed, 0, INPUT, n, dim)
    return space_from_coords(rng.uniform(0.0, side, size=(n, dim)), rescale=False, name=f"random-{n}-{seed}")


# ============================================================
# BALLS & DOUBLING
# ============================================================


def ball(space: FiniteMetricSpace, center: int, r: float) -> np.ndarray:
    """Open ball: exactly the points with dist < r"""
    return np.flatnonzero(space.dist[center] < r)


def _greedy_packing(space: FiniteMetricSpace, members: np.ndarray, separation: float) -> int:
    far = space.dist[np.ix_(members, members)] >= separation
    alive = np.ones(members.size, dtype=bool)
    count = 0
    while alive.any():
        i = int(np.argmax(alive))
        count += 1
        alive &= far[i]
    return count


def doubling_constant_estimate(space: FiniteMetricSpace) -> float:
    """
    Largest greedy r/2-separated subset of B(x, r) over all centers and over radii
    taken from each center's distances, their midpoints, and twice the diameter.
    """
    n = space.n
    if n <= 1:
        return float(n)
    best = 1
    far_radius = 2.0 * space.diameter
    for x in range(n):
        levels = np.unique(space.dist[x])[1:]
        radii = np.concatenate([levels, (levels[1:] + levels[:-1]) / 2.0, [far_radius]])
        for r in radii:
            members = ball(space, x, r)
            if members.size <= best:
                continue
            best = max(best, _greedy_packing(space, members, r / 2.0))
    return float(best)


def measure_doubling_constant(space: FiniteMetricSpace, measure: DoublingMeasure) -> float:
    """max mu(B(x, 2r)) / mu(B(x, r)) over centers x and radii r from the distance set"""
    order, sorted_d, _ = space.ball_order
    cum = np.cumsum(measure.mass[order], axis=1)
    worst = 1.0
    for x in range(space.n):
        radii = np.unique(sorted_d[x])[1:]
        if radii.size == 0:
            continue
        small = np.searchsorted(sorted_d[x], radii, side="left")
        large = np.searchsorted(sorted_d[x], 2.0 * radii, side="left")
        worst = max(worst, float(np.max(cum[x, large - 1] / cum[x, small - 1])))
    return worst


# ============================================================
# KERNEL SCALE FUNCTIONS
# ============================================================


def lambda_at(
    space: FiniteMetricSpace,
    measure: DoublingMeasure,
    profile: KernelProfile,
    centers: np.ndarray,
    radii: np.ndarray,
) -> np.ndarray:
    """lambda(x, r) evaluated elementwise"""
    centers = np.asarray(centers, dtype=int)
    radii = np.asarray(radii, dtype=float)
    if profile.kind == "distance":
        return np.broadcast_to(radii, np.broadcast(centers, radii).shape).astype(float)
    order, sorted_d, _ = space.ball_order
    cum = np.concatenate([np.zeros((space.n, 1)), np.cumsum(measure.mass[order], axis=1)], axis=1)
    centers, radii = np.broadcast_arrays(centers, radii)
    out = np.empty(centers.shape, dtype=float)
    for idx in np.ndindex(centers.shape):
        x = centers[idx]
        out[idx] = cum[x, np.searchsorted(sorted_d[x], radii[idx], side="left")]
    return out


def pairwise_lambda(space: FiniteMetricSpace, measure: DoublingMeasure, profile: KernelProfile) -> np.ndarray:
    """Matrix of lambda(x, d(x, y)); diagonal entries are meaningless"""
    if profile.kind == "distance":
        return space.dist.copy()
    order, sorted_d, _ = space.ball_order
    cum = np.concatenate([np.zeros((space.n, 1)), np.cumsum(measure.mass[order], axis=1)], axis=1)
    out = np.empty_like(space.dist)
    for x in range(space.n):
        out[x] = cum[x, np.searchsorted(sorted_d[x], space.dist[x], side="left")]
    return out


def kernel_profile_report(
    space: FiniteMetricSpace,
    measure: DoublingMeasure,
    profile: KernelProfile,
) -> KernelProfileReport:
    """Monotonicity, lambda-doubling constant and the mu(B) <= C lambda constant"""
    order, sorted_d, _ = space.ball_order
    cum = np.concatenate([np.zeros((space.n, 1)), np.cumsum(measure.mass[order], axis=1)], axis=1)
    monotone = True
    doubling = 1.0
    ball_ratio = 0.0
    for x in range(space.n):
        radii = np.unique(sorted_d[x])[1:]
        if radii.size == 0:
            continue
        centers = np.full(radii.size, x)
        lam = lambda_at(space, measure, profile, centers, radii)
        lam2 = lambda_at(space, measure, profile, centers, 2.0 * radii)
        monotone &= bool(np.all(np.diff(lam) >= 0))
        doubling = max(doubling, float(np.max(lam2 / lam)))
        mass = cum[x, np.searchsorted(sorted_d[x], radii, side="left")]
        ball_ratio = max(ball_ratio, float(np.max(mass / lam)))
    return KernelProfileReport(
        kind=profile.kind,
        monotone=monotone,
        lambda_doubling=doubling,
        ball_to_lambda=ball_ratio,
    )
