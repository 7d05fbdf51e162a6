"""
Random Lattice Service
Nested delta-grids chosen bottom-up at random, the parent relation, cubes,
cover verification and boundary layers. Supports Monte Carlo sampling and
exhaustive enumeration of the finite probability space.
"""

import itertools
import logging
import math
from functools import cached_property, partial
from typing import NamedTuple

import networkx as nx
import numpy as np
from pydantic import field_validator
from scipy import stats

from backend.core.config import settings
from backend.core.exceptions import CoverGap, EnumerationTooLarge, NoParentInRange, ProximityViolation
from backend.core.models import WARN_DELTA, ArrayModel, CoreModel, HierarchyParams, frozen_array
from backend.core.parallel import parallel_map
from backend.core.rng import GRID, PARENT, stream
from backend.services.metric_core import FiniteMetricSpace, uniform_net

logger = logging.getLogger(__name__)

UNIQUE_PARENT_FRACTION = 0.25
PARENT_RANGE = 3.0
COVER_RADIUS = 3.0
CHAIN_PROXIMITY = 15.0
CHAIN_SEPARATION = 0.01

_warned_deltas: set[float] = set()


# ============================================================
# DOMAIN TYPES
# ============================================================


class LatticeSample(ArrayModel):
    """
    One realization of the random dyadic system.

    grids[k] is G_k (sorted point indices), parents[k] is aligned with grids[k + 1]
    and holds each child's parent in G_k, labels[k, x] is the grid point whose cube
    contains x at generation k. choices records, from generation N-1 down to 0,
    the (grid option, parent option) indices drawn at each step.
    """

    delta: float
    levels: int
    grids: tuple[np.ndarray, ...]
    parents: tuple[np.ndarray, ...]
    labels: np.ndarray
    weight: float = 1.0
    approximate: bool = False
    choices: tuple[tuple[int, int], ...] = ()
    trial: int = 0

    @field_validator("grids", "parents", mode="before")
    @classmethod
    def _freeze_levels(cls, v):
        return tuple(frozen_array(g, dtype=int) for g in v)

    @field_validator("labels", mode="before")
    @classmethod
    def _freeze_labels(cls, v):
        return frozen_array(v, dtype=int)

    def parent_map(self, k: int) -> dict[int, int]:
        """G_{k+1} point -> its parent in G_k"""
        return dict(zip(self.grids[k + 1].tolist(), self.parents[k].tolist(), strict=True))

    def history(self, k: int) -> tuple[tuple[int, int], ...]:
        """Choices that fix every cube of generation >= k"""
        return self.choices[: self.levels - k]

    def cubes(self, k: int) -> dict[int, np.ndarray]:
        return {int(y): np.flatnonzero(self.labels[k] == y) for y in self.grids[k]}

    def cube(self, k: int, label: int) -> "Cube":
        members = np.flatnonzero(self.labels[k] == label)
        sons = tuple(int(s) for s in np.unique(self.labels[k + 1, members])) if k < self.levels else ()
        return Cube(label=label, generation=k, side=self.delta**k, members=members, sons=sons)


class Cube(ArrayModel):
    label: int
    generation: int
    side: float
    members: np.ndarray
    sons: tuple[int, ...] = ()


class GridDraw(NamedTuple):
    grid: np.ndarray
    index: int
    count: int
    approximate: bool


class CoverReport(CoreModel):
    generations: int
    points: int
    worst_chain_ratio: float
    worst_cover_ratio: float


class GridLawReport(CoreModel):
    separation_violations: int = 0
    maximality_violations: int = 0
    nesting_violations: int = 0
    cover_violations: int = 0
    chain_separation_violations: int = 0
    qualifying_chains: int = 0
    worst_cover_ratio: float = 0.0

    @property
    def passed(self) -> bool:
        return (
            self.separation_violations
            + self.maximality_violations
            + self.nesting_violations
            + self.cover_violations
            + self.chain_separation_violations
        ) == 0


class FrequencyCheck(CoreModel):
    trials: int
    events: int
    statistic: float
    pvalue: float
    unexpected: int


# ============================================================
# GRIDS
# ============================================================


def fine_grid(space: FiniteMetricSpace, threshold: float, candidates: np.ndarray | None = None) -> np.ndarray:
    """Deterministic greedy grid: scan candidates in index order, keep each one still separated"""
    candidates = np.arange(space.n) if candidates is None else np.sort(np.asarray(candidates, dtype=int))
    sub = space.dist[np.ix_(candidates, candidates)]
    alive = np.ones(candidates.size, dtype=bool)
    chosen = []
    while alive.any():
        i = int(np.argmax(alive))
        chosen.append(i)
        alive &= sub[i] > threshold
    return candidates[np.array(chosen, dtype=int)]


def _complement_conflicts(space: FiniteMetricSpace, candidates: np.ndarray, threshold: float) -> nx.Graph:
    """Graph whose maximal cliques are the maximal threshold-separated subsets"""
    sub = space.dist[np.ix_(candidates, candidates)]
    compatible = nx.Graph()
    compatible.add_nodes_from(candidates.tolist())
    rows, cols = np.nonzero(np.triu(sub > threshold, k=1))
    compatible.add_edges_from(zip(candidates[rows].tolist(), candidates[cols].tolist(), strict=True))
    return compatible


def enumerate_k_grids(
    space: FiniteMetricSpace,
    candidates: np.ndarray,
    threshold: float,
    limit: int | None = None,
) -> list[np.ndarray]:
    """All maximal subsets of candidates with pairwise distance > threshold, in canonical order"""
    candidates = np.sort(np.asarray(candidates, dtype=int))
    cliques = nx.find_cliques(_complement_conflicts(space, candidates, threshold))
    if limit is not None:
        cliques = list(itertools.islice(cliques, limit + 1))
        if len(cliques) > limit:
            raise EnumerationTooLarge(len(cliques), limit)
    grids = sorted(tuple(sorted(c)) for c in cliques)
    return [np.array(g, dtype=int) for g in grids]


def build_k_grid(
    space: FiniteMetricSpace,
    candidates: np.ndarray,
    threshold: float,
    rng: np.random.Generator | None = None,
    enumerate_all: bool = False,
    sample_cap: int | None = None,
) -> GridDraw | list[np.ndarray]:
    """
    Maximal threshold-separated subset of candidates.
    enumerate_all returns every such subset (each has probability 1/count);
    with an rng the draw is exactly uniform when at most sample_cap subsets exist,
    otherwise a random-permutation greedy flagged as approximate.
    """
    candidates = np.sort(np.asarray(candidates, dtype=int))
    if enumerate_all:
        return enumerate_k_grids(space, candidates, threshold)
    if rng is None:
        return GridDraw(fine_grid(space, threshold, candidates), 0, 1, False)

    cap = settings.A2LAB_GRID_SAMPLE_CAP if sample_cap is None else sample_cap
    cliques = list(itertools.islice(nx.find_cliques(_complement_conflicts(space, candidates, threshold)), cap + 1))
    if len(cliques) <= cap:
        options = sorted(tuple(sorted(c)) for c in cliques)
        index = int(rng.integers(len(options)))
        return GridDraw(np.array(options[index], dtype=int), index, len(options), False)

    order = rng.permutation(candidates)
    return GridDraw(np.sort(fine_grid_in_order(space, threshold, order)), -1, 0, True)


def fine_grid_in_order(space: FiniteMetricSpace, threshold: float, order: np.ndarray) -> np.ndarray:
    chosen: list[int] = []
    for point in order.tolist():
        if not chosen or np.all(space.dist[point, chosen] > threshold):
            chosen.append(point)
    return np.array(chosen, dtype=int)


# ============================================================
# PARENTS
# ============================================================


def parent_candidates(
    space: FiniteMetricSpace,
    child_grid: np.ndarray,
    parent_grid: np.ndarray,
    k: int,
    delta: float,
) -> list[np.ndarray]:
    """
    Admissible parents per child: itself if it survived, else the unique parent within
    delta^k / 4 if any, else every parent within 3 delta^k.
    """
    side = delta**k
    in_parent = set(parent_grid.tolist())
    out = []
    for child in child_grid.tolist():
        if child in in_parent:
            out.append(np.array([child]))
            continue
        d = space.dist[child, parent_grid]
        near = parent_grid[d <= UNIQUE_PARENT_FRACTION * side]
        if near.size >= 1:
            out.append(near[:1])
            continue
        reach = parent_grid[d <= PARENT_RANGE * side]
        if reach.size == 0:
            raise NoParentInRange(child, k)
        out.append(reach)
    return out


def assign_parents(
    space: FiniteMetricSpace,
    child_grid: np.ndarray,
    parent_grid: np.ndarray,
    k: int,
    delta: float,
    seed: int | None = None,
    trial: int = 0,
    enumerate_all: bool = False,
    cap: int | None = None,
) -> tuple[np.ndarray, float] | list[tuple[np.ndarray, float]]:
    """
    Parent map aligned with child_grid and its probability.
    Sampling draws each ambiguous child from its own stream (seed, trial, k, child);
    enumerate_all lists every combination with its probability.
    """
    options = parent_candidates(space, child_grid, parent_grid, k, delta)
    if enumerate_all:
        total = math.prod(len(o) for o in options)
        limit = settings.A2LAB_ENUMERATION_CAP if cap is None else cap
        if total > limit:
            raise EnumerationTooLarge(total, limit)
        prob = 1.0 / total
        return [(np.array(combo, dtype=int), prob) for combo in itertools.product(*(o.tolist() for o in options))]

    chosen = np.empty(len(options), dtype=int)
    prob = 1.0
    for i, (child, cands) in enumerate(zip(child_grid.tolist(), options, strict=True)):
        if cands.size == 1 or seed is None:
            chosen[i] = cands[0]
        else:
            chosen[i] = cands[int(stream(seed, trial, PARENT, k, child).integers(cands.size))]
        prob /= cands.size if seed is not None else 1
    return chosen, prob


# ============================================================
# HIERARCHY
# ============================================================


def compute_labels(space: FiniteMetricSpace, grids: list[np.ndarray], parents: list[np.ndarray]) -> np.ndarray:
    """
    Nearest G_N point for every x (ties to the lowest index), then lifted through the parents.
    A missing parent leaves -1 behind for verify_cover to report.
    """
    levels = len(grids) - 1
    labels = np.full((levels + 1, space.n), -1, dtype=int)
    top = grids[levels]
    labels[levels] = top[np.argmin(space.dist[:, top], axis=1)]
    for k in range(levels - 1, -1, -1):
        lut = np.full(space.n + 1, -1, dtype=int)
        lut[grids[k + 1]] = parents[k]
        labels[k] = lut[labels[k + 1]]
    return labels


def build_cubes(space: FiniteMetricSpace, sample: LatticeSample) -> list[dict[int, np.ndarray]]:
    """Cubes per generation, rebuilt from the sample's grids and parents"""
    labels = compute_labels(space, list(sample.grids), list(sample.parents))
    return [{int(y): np.flatnonzero(labels[k] == y) for y in sample.grids[k]} for k in range(sample.levels + 1)]


def _warn_delta(delta: float) -> None:
    if delta > WARN_DELTA and delta not in _warned_deltas:
        _warned_deltas.add(delta)
        logger.warning(f"delta={delta} is above {WARN_DELTA}; separation constants are checked empirically")


def build_hierarchy(
    space: FiniteMetricSpace,
    params: HierarchyParams,
    mode: str = "sample",
    trial: int = 0,
    cap: int | None = None,
) -> LatticeSample | list[LatticeSample]:
    """
    Random nested grids G_N ⊃ ... ⊃ G_0 with a fixed greedy G_N.
    mode="sample" draws one hierarchy from the (seed, trial) streams;
    mode="enumerate" lists every elementary event with its probability.
    """
    _warn_delta(params.delta)
    delta, levels = params.delta, params.levels
    top = fine_grid(space, delta**levels)

    if mode == "enumerate":
        return _enumerate_hierarchy(space, params, top, settings.A2LAB_ENUMERATION_CAP if cap is None else cap)

    grids: list[np.ndarray] = [top]
    parents: list[np.ndarray] = []
    weight = 1.0
    approximate = False
    choices = []
    for k in range(levels - 1, -1, -1):
        draw = build_k_grid(space, grids[0], delta**k, rng=stream(params.seed, trial, GRID, k))
        pmap, pprob = assign_parents(space, grids[0], draw.grid, k, delta, seed=params.seed, trial=trial)
        weight *= (1.0 / draw.count if draw.count else math.nan) * pprob
        approximate |= draw.approximate
        choices.append((draw.index, -1))
        grids.insert(0, draw.grid)
        parents.insert(0, pmap)

    if approximate:
        logger.debug(f"Trial {trial}: grid draw fell back to greedy approximation")
    return LatticeSample(
        delta=delta,
        levels=levels,
        grids=grids,
        parents=parents,
        labels=compute_labels(space, grids, parents),
        weight=weight,
        approximate=approximate,
        choices=tuple(choices),
        trial=trial,
    )


def _enumerate_hierarchy(
    space: FiniteMetricSpace,
    params: HierarchyParams,
    top: np.ndarray,
    cap: int,
) -> list[LatticeSample]:
    delta, levels = params.delta, params.levels
    out: list[LatticeSample] = []

    def descend(k: int, grids: list, parents: list, weight: float, choices: tuple) -> None:
        if k < 0:
            if len(out) >= cap:
                raise EnumerationTooLarge(len(out) + 1, cap)
            out.append(
                LatticeSample(
                    delta=delta,
                    levels=levels,
                    grids=grids,
                    parents=parents,
                    labels=compute_labels(space, grids, parents),
                    weight=weight,
                    choices=choices,
                )
            )
            return
        options = enumerate_k_grids(space, grids[0], delta**k, limit=cap)
        for gi, grid in enumerate(options):
            parent_options = assign_parents(space, grids[0], grid, k, delta, enumerate_all=True, cap=cap)
            for pi, (pmap, pprob) in enumerate(parent_options):
                descend(k - 1, [grid, *grids], [pmap, *parents], weight * pprob / len(options), (*choices, (gi, pi)))

    descend(levels - 1, [top], [], 1.0, ())
    logger.info(f"Enumerated {len(out)} elementary lattices (delta={delta}, levels={levels})")
    return out


# ============================================================
# VERIFICATION
# ============================================================


def verify_cover(space: FiniteMetricSpace, sample: LatticeSample) -> CoverReport:
    """
    Rebuild every chain from the grids and parents, check it partitions X at every
    generation, matches the stored cubes and stays within 15 delta^k of its label.
    """
    delta = sample.delta
    top = sample.grids[sample.levels]
    chain = top[np.argmin(space.dist[:, top], axis=1)]
    worst_chain = 0.0
    worst_cover = 0.0
    for k in range(sample.levels, -1, -1):
        if k < sample.levels:
            pmap = sample.parent_map(k)
            grid_k = set(sample.grids[k].tolist())
            lifted = np.empty_like(chain)
            for x, y in enumerate(chain.tolist()):
                parent = pmap.get(y)
                if parent is None or parent not in grid_k:
                    raise CoverGap(x, k)
                lifted[x] = parent
            chain = lifted

        side = delta**k
        d = space.dist[np.arange(space.n), chain]
        far = np.flatnonzero(d > CHAIN_PROXIMITY * side * (1 + 1e-12))
        if far.size:
            x = int(far[0])
            raise ProximityViolation(x, int(chain[x]), k, float(d[x]))
        worst_chain = max(worst_chain, float(d.max() / side))

        mismatch = np.flatnonzero(sample.labels[k] != chain)
        if mismatch.size:
            raise CoverGap(int(mismatch[0]), k)
        nearest = space.dist[:, sample.grids[k]].min(axis=1)
        worst_cover = max(worst_cover, float(nearest.max() / side))

    return CoverReport(
        generations=sample.levels + 1,
        points=space.n,
        worst_chain_ratio=worst_chain,
        worst_cover_ratio=worst_cover,
    )


def boundary_layer(
    space: FiniteMetricSpace,
    members: np.ndarray,
    generation: int,
    delta: float,
    eps: float,
) -> np.ndarray:
    """Points within eps delta^k of both the cube and its complement; empty when the cube is X"""
    inside = np.zeros(space.n, dtype=bool)
    inside[members] = True
    if inside.all():
        return np.array([], dtype=int)
    reach = eps * delta**generation
    to_cube = space.dist[:, inside].min(axis=1)
    to_rest = space.dist[:, ~inside].min(axis=1)
    return np.flatnonzero((to_cube <= reach) & (to_rest <= reach))


def check_grid_laws(space: FiniteMetricSpace, sample: LatticeSample) -> GridLawReport:
    """Separation, maximality, nesting, the 3 delta^k cover and chain separation near boundaries"""
    delta = sample.delta
    report = GridLawReport()
    for k in range(sample.levels + 1):
        side = delta**k
        grid = sample.grids[k]
        sub = space.dist[np.ix_(grid, grid)]
        off = ~np.eye(grid.size, dtype=bool)
        report.separation_violations += int(np.count_nonzero(sub[off] <= side)) // 2
        if k < sample.levels:
            finer = sample.grids[k + 1]
            report.nesting_violations += int(np.count_nonzero(~np.isin(grid, finer)))
            outside = finer[~np.isin(finer, grid)]
            if outside.size:
                closest = space.dist[np.ix_(outside, grid)].min(axis=1)
                report.maximality_violations += int(np.count_nonzero(closest > side))
        nearest = space.dist[:, grid].min(axis=1)
        report.cover_violations += int(np.count_nonzero(nearest > COVER_RADIUS * side * (1 + 1e-12)))
        report.worst_cover_ratio = max(report.worst_cover_ratio, float(nearest.max() / side))

    # chains below generation k through points near some generation-k boundary
    for k in range(sample.levels):
        cubes = sample.cubes(k)
        for m in range(1, sample.levels - k + 1):
            eps = delta**m * CHAIN_SEPARATION
            near = np.zeros(space.n, dtype=bool)
            for members in cubes.values():
                near[boundary_layer(space, members, k, delta, eps)] = True
            for x in np.flatnonzero(near).tolist():
                report.qualifying_chains += 1
                chain = [int(sample.labels[g, x]) for g in range(k, k + m + 1)]
                for j in range(m + 1):
                    for i in range(j + 1, m + 1):
                        if space.dist[chain[i], chain[j]] < CHAIN_SEPARATION * delta ** (k + j):
                            report.chain_separation_violations += 1
    return report


# ============================================================
# TREE VIEW
# ============================================================


class CubeTree(ArrayModel):
    """
    Cubes of all generations as tree nodes, ordered by generation then label.
    point_node[g, x] is the node of generation g containing x.
    """

    delta: float
    generation: np.ndarray
    label: np.ndarray
    point_node: np.ndarray

    @field_validator("generation", "label", "point_node", mode="before")
    @classmethod
    def _freeze(cls, v):
        return frozen_array(v, dtype=int)

    @property
    def n_nodes(self) -> int:
        return int(self.generation.size)

    @property
    def n_points(self) -> int:
        return int(self.point_node.shape[1])

    @property
    def depth(self) -> int:
        return int(self.point_node.shape[0] - 1)

    @cached_property
    def members(self) -> tuple[np.ndarray, ...]:
        out: list[np.ndarray] = [np.empty(0, dtype=int)] * self.n_nodes
        for g in range(self.depth + 1):
            order = np.argsort(self.point_node[g], kind="stable")
            nodes, starts = np.unique(self.point_node[g, order], return_index=True)
            for node, chunk in zip(nodes.tolist(), np.split(order, starts[1:]), strict=True):
                out[node] = np.sort(chunk)
        return tuple(out)

    @cached_property
    def first_member(self) -> np.ndarray:
        return np.array([m[0] for m in self.members], dtype=int)

    @cached_property
    def parent(self) -> np.ndarray:
        out = np.full(self.n_nodes, -1, dtype=int)
        inner = self.generation > 0
        out[inner] = self.point_node[self.generation[inner] - 1, self.first_member[inner]]
        return out

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for node, parent in enumerate(self.parent.tolist()):
            if parent >= 0:
                kids[parent].append(node)
        return tuple(tuple(k) for k in kids)

    @cached_property
    def indicator(self) -> np.ndarray:
        out = np.zeros((self.n_nodes, self.n_points), dtype=bool)
        for g in range(self.depth + 1):
            out[self.point_node[g], np.arange(self.n_points)] = True
        return out

    def nodes_at(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.generation == g)

    def side(self, node: int) -> float:
        return self.delta ** int(self.generation[node])

    def ancestor(self, node: int, g: int) -> int:
        """Node of generation g containing node; the root for g < 0"""
        return int(self.point_node[max(g, 0), self.first_member[node]])

    def contains(self, outer: int, inner: int) -> bool:
        g = int(self.generation[outer])
        return g <= int(self.generation[inner]) and self.ancestor(inner, g) == outer

    def descendants_at(self, node: int, g: int) -> np.ndarray:
        return np.unique(self.point_node[g, self.members[node]])

    def subtree(self, node: int) -> np.ndarray:
        """All nodes contained in node (node included)"""
        g = int(self.generation[node])
        deeper = np.flatnonzero(self.generation >= g)
        return deeper[self.point_node[g, self.first_member[deeper]] == node]

    def max_sons(self) -> int:
        return max((len(c) for c in self.children), default=0)

    @classmethod
    def from_sample(cls, sample: LatticeSample) -> "CubeTree":
        generation, label = [], []
        point_node = np.empty_like(sample.labels)
        offset = 0
        for g in range(sample.levels + 1):
            labels_g = np.unique(sample.labels[g])
            point_node[g] = offset + np.searchsorted(labels_g, sample.labels[g])
            generation.extend([g] * labels_g.size)
            label.extend(labels_g.tolist())
            offset += labels_g.size
        return cls(delta=sample.delta, generation=generation, label=label, point_node=point_node)


def dyadic_tree(levels: int, branching: int = 2) -> tuple[CubeTree, FiniteMetricSpace]:
    """b-adic tree on a uniform net of branching**levels points of [0, 1]"""
    n = branching**levels
    point_node = np.empty((levels + 1, n), dtype=int)
    generation, label = [], []
    offset = 0
    for g in range(levels + 1):
        width = branching ** (levels - g)
        point_node[g] = offset + np.arange(n) // width
        count = branching**g
        generation.extend([g] * count)
        label.extend((np.arange(count) * width).tolist())
        offset += count
    tree = CubeTree(delta=1.0 / branching, generation=generation, label=label, point_node=point_node)
    return tree, uniform_net(n)


# ============================================================
# SAMPLING VS ENUMERATION
# ============================================================


def lattice_key(sample: LatticeSample) -> tuple:
    return (
        tuple(tuple(g.tolist()) for g in sample.grids),
        tuple(tuple(p.tolist()) for p in sample.parents),
    )


def _sampled_key(trial: int, space: FiniteMetricSpace, params: HierarchyParams) -> tuple:
    return lattice_key(build_hierarchy(space, params, trial=trial))


def sampling_frequency_check(
    space: FiniteMetricSpace,
    params: HierarchyParams,
    trials: int,
    workers: int | None = None,
) -> FrequencyCheck:
    """Chi-square of Monte Carlo lattice frequencies against the enumerated weights"""
    events = build_hierarchy(space, params, mode="enumerate")
    index = {lattice_key(s): i for i, s in enumerate(events)}
    expected = np.array([s.weight for s in events]) * trials
    observed = np.zeros(len(events))
    unexpected = 0
    for key in parallel_map(partial(_sampled_key, space=space, params=params), range(trials), workers):
        i = index.get(key)
        if i is None:
            unexpected += 1
        else:
            observed[i] += 1
    if len(events) == 1:
        return FrequencyCheck(trials=trials, events=1, statistic=0.0, pvalue=1.0, unexpected=unexpected)
    expected *= observed.sum() / expected.sum()
    result = stats.chisquare(observed, expected)
    return FrequencyCheck(
        trials=trials,
        events=len(events),
        statistic=float(result.statistic),
        pvalue=float(result.pvalue),
        unexpected=unexpected,
    )


# ============================================================
# SERIALIZATION
# ============================================================


def sample_to_payload(sample: LatticeSample) -> dict:
    return {
        "delta": sample.delta,
        "levels": sample.levels,
        "weight": sample.weight,
        "approximate": sample.approximate,
        "trial": sample.trial,
        "choices": [list(c) for c in sample.choices],
        "grids": [g.tolist() for g in sample.grids],
        "parents": [p.tolist() for p in sample.parents],
        "labels": sample.labels.tolist(),
    }


def sample_from_payload(payload: dict) -> LatticeSample:
    return LatticeSample(
        delta=payload["delta"],
        levels=payload["levels"],
        grids=payload["grids"],
        parents=payload["parents"],
        labels=payload["labels"],
        weight=payload.get("weight", 1.0),
        approximate=payload.get("approximate", False),
        choices=tuple(tuple(c) for c in payload.get("choices", [])),
        trial=payload.get("trial", 0),
    )
