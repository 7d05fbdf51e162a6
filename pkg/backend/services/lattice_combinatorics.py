"""
Lattice Combinatorics Service
Exhaustive census of proper red/green colorings (maximal separated subsets) of a small
metric space, membership fractions and the recoloring map from W_S into the colorings
that make a fixed point red.
"""

import itertools
import logging
from fractions import Fraction

import networkx as nx
import numpy as np

from backend.core.config import settings
from backend.core.exceptions import InjectivityFailure, NotInWS, TooLarge
from backend.core.models import CoreModel
from backend.services.metric_core import FiniteMetricSpace

logger = logging.getLogger(__name__)

Coloring = frozenset[int]

# a coarse point closer than threshold / PROXIMITY_DIVISOR counts as next to the grid point
PROXIMITY_DIVISOR = 1000.0


class RecolorInstance(CoreModel):
    v: int
    S: frozenset[int]
    ball: frozenset[int]
    S_tilde: frozenset[int]


class CensusRow(CoreModel):
    S: tuple[int, ...]
    card_ws: int
    card_images: int


class InjectivityReport(CoreModel):
    v: int
    n: int
    colorings: int
    card_b: int
    fraction: float
    occupancy: int
    local_occupancy: int
    bound: float
    bound_holds: bool
    rows: list[CensusRow]


class ProximityClaim(CoreModel):
    point: int
    generation: int
    frequency: float
    occupancy: int
    bound: float
    holds: bool


# ============================================================
# CONFLICTS & ENUMERATION
# ============================================================


def conflict_matrix(space: FiniteMetricSpace, radius: float = 1.0, closed: bool = False) -> np.ndarray:
    """
    conflict[i, j] when i != j lie within radius of each other:
    strictly (open balls) by default, d <= radius when closed.
    """
    near = space.dist <= radius if closed else space.dist < radius
    return near & ~np.eye(space.n, dtype=bool)


def occupancy(space: FiniteMetricSpace, radius: float = 1.0, closed: bool = False) -> int:
    """Largest number of points in a single ball of the conflict radius"""
    if space.n == 0:
        return 0
    return int(conflict_matrix(space, radius, closed).sum(axis=1).max()) + 1


def is_proper(space: FiniteMetricSpace, red: Coloring, radius: float = 1.0, closed: bool = False) -> bool:
    conflict = conflict_matrix(space, radius, closed)
    mask = np.zeros(space.n, dtype=bool)
    mask[list(red)] = True
    if np.any(conflict[np.ix_(mask, mask)]):
        return False
    covered = mask | conflict[:, mask].any(axis=1)
    return bool(covered.all())


def enumerate_proper_colorings(
    space: FiniteMetricSpace,
    radius: float = 1.0,
    closed: bool = False,
    cap: int | None = None,
) -> list[Coloring]:
    """Every maximal subset with no two points in conflict, sorted canonically"""
    limit = settings.A2LAB_CENSUS_CAP if cap is None else cap
    if space.n > limit:
        raise TooLarge(space.n, limit)
    compatible = nx.Graph()
    compatible.add_nodes_from(range(space.n))
    rows, cols = np.nonzero(np.triu(~conflict_matrix(space, radius, closed), k=1))
    compatible.add_edges_from(zip(rows.tolist(), cols.tolist(), strict=True))
    cliques = sorted(tuple(sorted(c)) for c in nx.find_cliques(compatible))
    return [frozenset(c) for c in cliques]


def membership_fraction(space: FiniteMetricSpace, v: int, colorings: list[Coloring] | None = None) -> Fraction:
    colorings = enumerate_proper_colorings(space) if colorings is None else colorings
    return Fraction(sum(1 for c in colorings if v in c), len(colorings))


# ============================================================
# RECOLORING
# ============================================================


def make_instance(
    space: FiniteMetricSpace,
    v: int,
    S: frozenset[int] | set[int],
    radius: float = 1.0,
    closed: bool = False,
) -> RecolorInstance:
    conflict = conflict_matrix(space, radius, closed)
    ball = frozenset({v, *np.flatnonzero(conflict[v]).tolist()})
    S = frozenset(S)
    if v in S or not S <= ball:
        raise NotInWS("S must be a subset of B(v, 1) \\ {v}")
    near_s = conflict[list(S)].any(axis=0) if S else np.zeros(space.n, dtype=bool)
    S_tilde = frozenset(int(z) for z in np.flatnonzero(near_s) if int(z) not in ball)
    return RecolorInstance(v=v, S=S, ball=ball, S_tilde=S_tilde)


def recolor(
    space: FiniteMetricSpace,
    red: Coloring,
    instance: RecolorInstance,
    radius: float = 1.0,
    closed: bool = False,
) -> Coloring:
    """
    v turns red, S turns green, points of S_tilde left with no red neighbour turn
    yellow and are then promoted to red in ascending index order unless they conflict
    with an earlier promotion; the remaining yellow points end green.
    """
    if not is_proper(space, red, radius, closed):
        raise NotInWS("coloring is not proper")
    if instance.v in red:
        raise NotInWS(f"v={instance.v} is already red")
    if not instance.S <= red:
        raise NotInWS("S is not entirely red")
    if (instance.ball - instance.S) & red:
        raise NotInWS("B(v, 1) \\ S contains a red point")

    conflict = conflict_matrix(space, radius, closed)
    recolored = set(red - instance.S) | {instance.v}
    red_idx = list(recolored)
    yellow = sorted(z for z in instance.S_tilde if not conflict[z, red_idx].any())

    promoted: list[int] = []
    for z in yellow:
        if not promoted or not conflict[z, promoted].any():
            promoted.append(z)
    return frozenset(recolored | set(promoted))


def verify_injectivity(
    space: FiniteMetricSpace,
    v: int,
    radius: float = 1.0,
    closed: bool = False,
    cap: int | None = None,
) -> InjectivityReport:
    """
    Group the colorings with v green by S = red ∩ B(v, 1), push each through recolor and
    check the image is proper, has v red, leaves everything outside B(v, 1) ∪ S_tilde
    alone and is injective on every W_S.
    """
    colorings = enumerate_proper_colorings(space, radius, closed, cap)
    b_set = {c for c in colorings if v in c}
    conflict = conflict_matrix(space, radius, closed)
    ball = frozenset({v, *np.flatnonzero(conflict[v]).tolist()})

    groups: dict[frozenset[int], list[Coloring]] = {}
    for c in colorings:
        if v not in c:
            groups.setdefault(frozenset(c & ball), []).append(c)

    rows = []
    for S in sorted(groups, key=lambda s: (len(s), sorted(s))):
        instance = make_instance(space, v, S, radius, closed)
        touched = instance.ball | instance.S_tilde
        images: dict[Coloring, Coloring] = {}
        for c in groups[S]:
            image = recolor(space, c, instance, radius, closed)
            if image not in b_set or (image - touched) != (c - touched):
                raise InjectivityFailure(tuple(sorted(S)), (c, image))
            if image in images:
                raise InjectivityFailure(tuple(sorted(S)), (images[image], c))
            images[image] = c
        rows.append(CensusRow(S=tuple(sorted(S)), card_ws=len(groups[S]), card_images=len(images)))

    d = occupancy(space, radius, closed)
    fraction = Fraction(len(b_set), len(colorings))
    bound = 2.0 ** (-(d - 1))
    logger.info(f"Census v={v}: {len(colorings)} colorings, {len(b_set)} with v red, occupancy {d}")
    return InjectivityReport(
        v=v,
        n=space.n,
        colorings=len(colorings),
        card_b=len(b_set),
        fraction=float(fraction),
        occupancy=d,
        local_occupancy=len(ball),
        bound=bound,
        bound_holds=fraction >= Fraction(1, 2 ** (d - 1)),
        rows=rows,
    )


def next_level_proximity(
    space: FiniteMetricSpace,
    grid: np.ndarray,
    point: int,
    generation: int,
    delta: float,
    cap: int | None = None,
) -> ProximityClaim:
    """
    Scaled separation claim on one grid level: over all coarser delta^(k-1)-grids chosen
    inside the delta^k-grid, how often the fixed grid point has a coarse point within
    delta^(k-1) / PROXIMITY_DIVISOR, compared with 2^(1-d) for the closed-ball occupancy d.
    """
    threshold = delta ** (generation - 1)
    sub = FiniteMetricSpace(dist=space.dist[np.ix_(grid, grid)], scale=space.scale)
    local = int(np.flatnonzero(grid == point)[0])
    colorings = enumerate_proper_colorings(sub, radius=threshold, closed=True, cap=cap)
    hits = 0
    for c in colorings:
        members = np.fromiter(c, dtype=int)
        if np.any(sub.dist[local, members] < threshold / PROXIMITY_DIVISOR):
            hits += 1
    d = occupancy(sub, radius=threshold, closed=True)
    frequency = hits / len(colorings)
    bound = 2.0 ** (-(d - 1))
    return ProximityClaim(
        point=point,
        generation=generation,
        frequency=frequency,
        occupancy=d,
        bound=bound,
        holds=frequency >= bound * (1 - 1e-12),
    )


def brute_force_colorings(space: FiniteMetricSpace, radius: float = 1.0, closed: bool = False) -> list[Coloring]:
    """Every subset passing both properness conditions, found by scanning all 2^n subsets"""
    out = []
    for size in range(1, space.n + 1):
        for subset in itertools.combinations(range(space.n), size):
            if is_proper(space, frozenset(subset), radius, closed):
                out.append(frozenset(subset))
    return sorted(out, key=lambda c: tuple(sorted(c)))
