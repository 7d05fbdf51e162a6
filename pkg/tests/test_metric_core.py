import numpy as np
import pytest

from backend.core.exceptions import NonSymmetric, TriangleViolation
from backend.services.metric_core import (
    DoublingMeasure,
    ball,
    doubling_constant_estimate,
    space_from_coords,
    uniform_net,
    validate_space,
)


def test_validate_space_rescales_to_unit_diameter():
    dist = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    space, report = validate_space(dist)
    assert space.n == 3
    assert np.isclose(space.dist.max(), 1.0)
    assert np.isclose(space.dist[0, 1], 0.5)


def test_triangle_violation_names_the_triple():
    dist = np.array([[0.0, 10.0, 1.0], [10.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    with pytest.raises(TriangleViolation) as info:
        validate_space(dist)
    assert info.value.exit_code == 2
    assert info.value.details["excess"] > 0


@pytest.mark.parametrize(
    "dist",
    [
        np.array([[0.0, 1.0], [2.0, 0.0]]),
        np.array([[0.0, 0.0], [0.0, 0.0]]),
        np.array([[1.0, 1.0], [1.0, 0.0]]),
        np.zeros((2, 3)),
    ],
)
def test_non_metric_matrices_rejected(dist):
    with pytest.raises(NonSymmetric):
        validate_space(dist)


def test_balls_are_open():
    space = space_from_coords(np.array([[0.0], [0.3], [0.5], [1.0]]), rescale=False)
    assert sorted(ball(space, 1, 0.35).tolist()) == [0, 1, 2]
    assert ball(space, 1, 0.2).tolist() == [1]
    assert ball(space, 0, 0.3).tolist() == [0]


def test_doubling_constant_of_tiny_spaces():
    assert doubling_constant_estimate(uniform_net(1)) == 1.0
    assert doubling_constant_estimate(uniform_net(2)) == 2.0
    assert doubling_constant_estimate(uniform_net(64)) >= 2.0


def test_measure_must_be_positive():
    with pytest.raises(ValueError):
        DoublingMeasure(mass=[1.0, 0.0])
    with pytest.raises(ValueError):
        DoublingMeasure(mass=[1.0, np.inf])
    assert DoublingMeasure(mass=[0.5, 1.5]).total == 2.0
