"""
Goodness Service
Good/bad cube classification, Monte Carlo and exact bad probabilities, boundary-layer
hit probabilities and the equalization of good probabilities to a common value a.
"""

import logging
import math
from functools import partial
from typing import Literal

import numpy as np

from backend.core.exceptions import AExceedsP
from backend.core.models import CoreModel, GoodnessParams, HierarchyParams
from backend.core.number_utils import binomial_stderr, linear_slope, loglog_slope
from backend.core.parallel import parallel_map
from backend.core.rng import XI, stream
from backend.services.lattice_combinatorics import occupancy
from backend.services.metric_core import FiniteMetricSpace
from backend.services.random_lattice import LatticeSample, build_hierarchy, fine_grid

logger = logging.getLogger(__name__)

GOOD_TOL = 1e-12
PBAD_TARGET = 0.5
# decay and slope verdicts need at least this many positive frequencies
MIN_FIT_POINTS = 2


# ============================================================
# DOMAIN TYPES
# ============================================================


class Witness(CoreModel):
    generation: int
    label: int
    alternative: Literal["far", "inside", "violated"]
    distance: float
    threshold: float


class GoodnessVerdict(CoreModel):
    label: int
    generation: int
    is_good: bool
    witnesses: list[Witness] = []
    really_good: bool = False
    really_good_weight: float | None = None
    xi: float | None = None
    p_q: float | None = None


class BadProbabilityRow(CoreModel):
    r: int
    frequency: float
    stderr: float
    exact: float | None = None


class BadProbabilitySweep(CoreModel):
    point: int
    generation: int
    trials: int
    rows: list[BadProbabilityRow]
    threshold_r: int | None
    decay_exponent: float
    expected_exponent: float
    fit_points: int
    decay_ok: bool


class BoundaryHitRow(CoreModel):
    eps: float
    frequency: float
    stderr: float
    bound: float


class BoundaryHitSweep(CoreModel):
    point: int
    generation: int
    eta: float
    rows: list[BoundaryHitRow]
    slope: float
    fitted_constant: float
    fit_points: int
    slope_ok: bool


class CubeGoodProbability(CoreModel):
    generation: int
    label: int
    history: tuple[tuple[int, int], ...]
    p_q: float
    really_good_probability: float | None = None


# ============================================================
# CLASSIFICATION
# ============================================================


def _distance_to_cube(space: FiniteMetricSpace, members: np.ndarray) -> np.ndarray:
    """dist(x, Q) for every point x"""
    return space.dist[members].min(axis=0)


def goodness_profile(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    generation: int,
    label: int,
    params: GoodnessParams,
) -> np.ndarray:
    """
    ratio[n] = dist(Q, X \\ Q^(n)) / threshold(k, n) for n = 0 .. k-1, where Q^(n) is the
    generation-n ancestor. Q is good for r exactly when ratio[n] >= 1 for every n <= k - r.
    """
    members = np.flatnonzero(sample.labels[generation] == label)
    d_q = _distance_to_cube(space, members)
    ratios = np.empty(generation)
    for n in range(generation):
        outside = sample.labels[n] != sample.labels[n, members[0]]
        nearest = d_q[outside].min() if outside.any() else math.inf
        ratios[n] = nearest / params.threshold(sample.delta, generation, n)
    return ratios


def is_good_for(ratios: np.ndarray, generation: int, r: int) -> bool:
    upto = generation - r
    if upto < 0:
        return True
    return bool(np.all(ratios[: upto + 1] >= 1.0 - GOOD_TOL))


def classify_good(
    space: FiniteMetricSpace,
    sample: LatticeSample,
    generation: int,
    label: int,
    params: GoodnessParams,
) -> GoodnessVerdict:
    """
    Q is good when every larger cube Q1 with delta^k <= delta^r delta^n is either far
    from Q or contains Q with its complement far from Q.
    """
    members = np.flatnonzero(sample.labels[generation] == label)
    d_q = _distance_to_cube(space, members)
    witnesses = []
    for n in range(0, generation - params.r + 1):
        threshold = params.threshold(sample.delta, generation, n)
        ancestor = int(sample.labels[n, members[0]])
        labels_n, inverse = np.unique(sample.labels[n], return_inverse=True)
        to_cube = np.full(labels_n.size, math.inf)
        np.minimum.at(to_cube, inverse, d_q)
        outside = sample.labels[n] != ancestor
        to_rest = d_q[outside].min() if outside.any() else math.inf
        for y, d in zip(labels_n.tolist(), to_cube.tolist(), strict=True):
            distance, kind = (to_rest, "inside") if y == ancestor else (d, "far")
            ok = distance >= threshold * (1.0 - GOOD_TOL)
            witnesses.append(
                Witness(
                    generation=n,
                    label=y,
                    alternative=kind if ok else "violated",
                    distance=distance,
                    threshold=threshold,
                )
            )
    is_good = all(w.alternative != "violated" for w in witnesses)
    return GoodnessVerdict(label=label, generation=generation, is_good=is_good, witnesses=witnesses)


def classify_all(space: FiniteMetricSpace, sample: LatticeSample, params: GoodnessParams) -> list[GoodnessVerdict]:
    return [
        classify_good(space, sample, k, int(y), params)
        for k in range(sample.levels + 1)
        for y in sample.grids[k]
    ]


# ============================================================
# BAD PROBABILITY
# ============================================================


def _profile_trial(
    trial: int,
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    point: int,
    generation: int,
) -> np.ndarray:
    sample = build_hierarchy(space, hierarchy, trial=trial)
    return goodness_profile(space, sample, generation, int(sample.labels[generation, point]), params)


def estimate_bad_probability(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    point: int,
    trials: int,
    generation: int | None = None,
    r_values: list[int] | None = None,
    workers: int | None = None,
) -> list[BadProbabilityRow]:
    """
    Frequency over random hierarchies that the generation-k cube containing point is bad.
    The default generation is the finest one, whose grid is not random.
    """
    k = hierarchy.levels if generation is None else generation
    r_values = [params.r] if r_values is None else r_values
    fn = partial(_profile_trial, space=space, hierarchy=hierarchy, params=params, point=point, generation=k)
    profiles = parallel_map(fn, range(trials), workers)
    rows = []
    for r in r_values:
        bad = sum(1 for ratios in profiles if not is_good_for(ratios, k, r))
        frequency = bad / trials if trials else math.nan
        rows.append(BadProbabilityRow(r=r, frequency=frequency, stderr=binomial_stderr(frequency, trials)))
    return rows


def exact_bad_probability(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    point: int,
    generation: int | None = None,
    r_values: list[int] | None = None,
    events: list[LatticeSample] | None = None,
) -> dict[int, float]:
    k = hierarchy.levels if generation is None else generation
    r_values = [params.r] if r_values is None else r_values
    events = build_hierarchy(space, hierarchy, mode="enumerate") if events is None else events
    out = {r: 0.0 for r in r_values}
    for sample in events:
        ratios = goodness_profile(space, sample, k, int(sample.labels[k, point]), params)
        for r in r_values:
            if not is_good_for(ratios, k, r):
                out[r] += sample.weight
    return out


def bad_probability_sweep(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    point: int,
    r_values: list[int],
    trials: int,
    generation: int | None = None,
    exact: bool = False,
    workers: int | None = None,
) -> BadProbabilitySweep:
    """
    Bad frequency per r, the least r with frequency + 2 stderr <= 1/2 and the fitted
    decay exponent of frequency ~ C delta^(c r), compared against eta * gamma - 0.1.
    Fewer than MIN_FIT_POINTS positive frequencies leave the exponent nan and the verdict failed.
    """
    k = hierarchy.levels if generation is None else generation
    rows = estimate_bad_probability(space, hierarchy, params, point, trials, k, r_values, workers)
    if exact:
        exact_values = exact_bad_probability(space, hierarchy, params, point, k, r_values)
        rows = [row.model_copy(update={"exact": exact_values[row.r]}) for row in rows]

    threshold_r = next((row.r for row in rows if row.frequency + 2.0 * row.stderr <= PBAD_TARGET), None)
    positive = [row for row in rows if row.frequency > 0]
    if len(positive) >= MIN_FIT_POINTS:
        slope = linear_slope([row.r for row in positive], [math.log(row.frequency) for row in positive])
        exponent = slope / math.log(hierarchy.delta)
    else:
        exponent = math.nan
        logger.warning(f"Bad-probability sweep at x={point}: {len(positive)} positive frequencies, no decay fit")
    eta = params.eta if params.eta is not None else math.log1p(-params.a) / math.log(hierarchy.delta)
    expected = eta * params.gamma
    logger.info(f"Bad-probability sweep at x={point}: threshold r={threshold_r}, decay exponent {exponent:.4g}")
    return BadProbabilitySweep(
        point=point,
        generation=k,
        trials=trials,
        rows=rows,
        threshold_r=threshold_r,
        decay_exponent=exponent,
        expected_exponent=expected,
        fit_points=len(positive),
        decay_ok=len(positive) >= MIN_FIT_POINTS and exponent >= expected - 0.1,
    )


# ============================================================
# BOUNDARY LAYERS
# ============================================================


def _boundary_trial(
    trial: int,
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    point: int,
    generation: int,
) -> float:
    """Normalized distance from point to the complement of its generation-k cube"""
    sample = build_hierarchy(space, hierarchy, trial=trial)
    outside = sample.labels[generation] != sample.labels[generation, point]
    if not outside.any():
        return math.inf
    return float(space.dist[point, outside].min() / hierarchy.delta**generation)


def boundary_hit_probability(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    point: int,
    eps_values: list[float],
    trials: int,
    generation: int = 1,
    eta: float | None = None,
    a: float = 0.5,
    workers: int | None = None,
) -> BoundaryHitSweep:
    """
    Frequency that point lies in the eps delta^k boundary layer of some generation-k cube.
    That happens exactly when its own cube's complement is within eps delta^k.
    """
    eta = math.log1p(-a) / math.log(hierarchy.delta) if eta is None else eta
    fn = partial(_boundary_trial, space=space, hierarchy=hierarchy, point=point, generation=generation)
    gaps = np.array(parallel_map(fn, range(trials), workers))
    rows = []
    for eps in eps_values:
        frequency = float(np.mean(gaps <= eps)) if eps > 0 and trials else 0.0
        rows.append(
            BoundaryHitRow(eps=eps, frequency=frequency, stderr=binomial_stderr(frequency, trials), bound=eps**eta)
        )
    eps_arr = np.array([row.eps for row in rows])
    freq_arr = np.array([row.frequency for row in rows])
    slope = loglog_slope(eps_arr, freq_arr)
    positive = (eps_arr > 0) & (freq_arr > 0)
    fitted = float(np.max(freq_arr[positive] / eps_arr[positive] ** eta)) if positive.any() else 0.0
    return BoundaryHitSweep(
        point=point,
        generation=generation,
        eta=eta,
        rows=rows,
        slope=slope,
        fitted_constant=fitted,
        fit_points=int(positive.sum()),
        slope_ok=int(positive.sum()) >= MIN_FIT_POINTS and not math.isnan(slope) and slope >= eta - 0.2,
    )


# ============================================================
# EQUALIZATION
# ============================================================


def derive_a(space: FiniteMetricSpace, hierarchy: HierarchyParams) -> float:
    """
    2^(1-d) where d is the largest count of delta^k-grid points in a closed delta^(k-1)
    ball over the generations of the hierarchy.
    """
    worst = 1
    for k in range(1, hierarchy.levels + 1):
        grid = fine_grid(space, hierarchy.delta**k)
        sub = FiniteMetricSpace(dist=space.dist[np.ix_(grid, grid)])
        worst = max(worst, occupancy(sub, radius=hierarchy.delta ** (k - 1), closed=True))
    return 2.0 ** (1 - worst)


def good_probabilities(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    events: list[LatticeSample] | None = None,
) -> list[CubeGoodProbability]:
    """
    p_Q for every cube of every elementary event: the probability that Q is good given
    the choices that fix the cubes of its generation.
    """
    events = build_hierarchy(space, hierarchy, mode="enumerate") if events is None else events
    mass: dict[tuple, float] = {}
    good_mass: dict[tuple, float] = {}
    for sample in events:
        for k in range(sample.levels + 1):
            history = sample.history(k)
            for y in sample.grids[k].tolist():
                key = (k, y, history)
                mass[key] = mass.get(key, 0.0) + sample.weight
                ratios = goodness_profile(space, sample, k, y, params)
                if is_good_for(ratios, k, params.r):
                    good_mass[key] = good_mass.get(key, 0.0) + sample.weight
    return [
        CubeGoodProbability(generation=k, label=y, history=h, p_q=good_mass.get((k, y, h), 0.0) / total)
        for (k, y, h), total in mass.items()
    ]


def really_good_adjust(
    verdicts: list[GoodnessVerdict],
    a: float,
    seed: int | None = None,
    trial: int = 0,
) -> list[GoodnessVerdict]:
    """
    Thin good cubes to probability a. Without a seed the xi draw is kept analytic:
    each good cube carries really_good_weight a / p_Q. With a seed xi_Q is drawn
    uniformly and Q is really good when good and xi_Q <= a / p_Q.
    """
    out = []
    for v in verdicts:
        p = v.p_q
        if p is None or a > p * (1.0 + GOOD_TOL):
            raise AExceedsP((v.generation, v.label), a, math.nan if p is None else p)
        ratio = min(a / p, 1.0) if p > 0 else 0.0
        if seed is None:
            out.append(
                v.model_copy(update={"really_good_weight": ratio if v.is_good else 0.0, "really_good": False})
            )
        else:
            xi = float(stream(seed, trial, XI, v.generation, v.label).uniform())
            out.append(v.model_copy(update={"xi": xi, "really_good": v.is_good and xi <= ratio}))
    return out


def really_good_probability_check(
    space: FiniteMetricSpace,
    hierarchy: HierarchyParams,
    params: GoodnessParams,
    a: float | None = None,
    events: list[LatticeSample] | None = None,
) -> tuple[float, list[CubeGoodProbability]]:
    """
    Exact probability of "really good" for every cube after equalization.
    a defaults to min p_Q; returns (a, per-cube rows).
    """
    events = build_hierarchy(space, hierarchy, mode="enumerate") if events is None else events
    probabilities = good_probabilities(space, hierarchy, params, events)
    p_by_key = {(c.generation, c.label, c.history): c.p_q for c in probabilities}
    a = min(p_by_key.values()) if a is None else a

    mass: dict[tuple, float] = {}
    really: dict[tuple, float] = {}
    for sample in events:
        for k in range(sample.levels + 1):
            history = sample.history(k)
            verdicts = []
            for y in sample.grids[k].tolist():
                ratios = goodness_profile(space, sample, k, y, params)
                verdicts.append(
                    GoodnessVerdict(
                        label=y,
                        generation=k,
                        is_good=is_good_for(ratios, k, params.r),
                        p_q=p_by_key[(k, y, history)],
                    )
                )
            for v in really_good_adjust(verdicts, a):
                key = (k, v.label, history)
                mass[key] = mass.get(key, 0.0) + sample.weight
                really[key] = really.get(key, 0.0) + sample.weight * v.really_good_weight

    rows = []
    for c in probabilities:
        key = (c.generation, c.label, c.history)
        rows.append(c.model_copy(update={"really_good_probability": really[key] / mass[key]}))
    return a, rows
