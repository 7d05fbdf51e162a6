from fractions import Fraction

import numpy as np
import pytest

from backend.core.exceptions import NotInWS, TooLarge
from backend.services.lattice_combinatorics import (
    brute_force_colorings,
    enumerate_proper_colorings,
    is_proper,
    make_instance,
    PROXIMITY_DIVISOR,
    membership_fraction,
    next_level_proximity,
    occupancy,
    verify_injectivity,
)
from backend.services.metric_core import random_euclidean_space, space_from_coords, uniform_net


def test_three_point_colorings(three_points):
    colorings = enumerate_proper_colorings(three_points)
    assert colorings == [frozenset({0, 2}), frozenset({1})]
    assert membership_fraction(three_points, 1, colorings) == Fraction(1, 2)
    assert occupancy(three_points) == 3
    assert not is_proper(three_points, frozenset({0}))
    assert not is_proper(three_points, frozenset({0, 1, 2}))


def test_census_on_three_points(three_points):
    report = verify_injectivity(three_points, 1)
    assert report.fraction == 0.5
    assert report.occupancy == 3
    assert report.bound == 0.25
    assert report.bound_holds
    assert [(r.S, r.card_ws, r.card_images) for r in report.rows] == [((0, 2), 1, 1)]


def test_closed_balls_change_conflicts():
    space = uniform_net(3)
    # d(0, 1) = 0.5 conflicts only when the radius-0.5 ball is closed
    assert enumerate_proper_colorings(space, radius=0.5) == [frozenset({0, 1, 2})]
    assert enumerate_proper_colorings(space, radius=0.5, closed=True) == [frozenset({0, 2}), frozenset({1})]


@pytest.mark.parametrize("seed", [3, 11, 29])
def test_clique_enumeration_matches_brute_force(seed):
    space = random_euclidean_space(6, seed)
    assert enumerate_proper_colorings(space) == brute_force_colorings(space)


@pytest.mark.parametrize("seed", [3, 11])
def test_recoloring_bound_on_random_spaces(seed):
    space = random_euclidean_space(6, seed)
    for v in range(space.n):
        report = verify_injectivity(space, v)
        assert report.bound_holds
        assert all(r.card_ws == r.card_images for r in report.rows)


def test_instance_must_sit_in_the_ball(three_points):
    with pytest.raises(NotInWS):
        make_instance(three_points, 0, {2})
    with pytest.raises(NotInWS):
        make_instance(three_points, 0, {0})


def test_census_refuses_large_spaces():
    with pytest.raises(TooLarge):
        enumerate_proper_colorings(uniform_net(21))


def test_next_level_proximity_on_three_points(three_points):
    claim = next_level_proximity(three_points, np.arange(3), 1, generation=1, delta=0.25)
    assert claim.frequency == 0.5
    assert claim.occupancy == 3
    assert claim.holds


def test_near_duplicate_counts_as_proximity():
    gap = 0.5 / PROXIMITY_DIVISOR
    space = space_from_coords([[0.0], [gap], [0.9], [1.8]], rescale=False)
    claim = next_level_proximity(space, np.arange(4), 0, generation=1, delta=0.25)
    # colorings {0, 3}, {1, 3}, {2}; point 1 sits within the cutoff of point 0
    assert claim.frequency == pytest.approx(2 / 3)
    assert claim.occupancy == 4
    assert claim.bound == 0.125
    assert claim.holds
