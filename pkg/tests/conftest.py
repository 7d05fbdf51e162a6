import numpy as np
import pytest

from backend.core.models import HierarchyParams
from backend.services.metric_core import space_from_coords, uniform_measure, uniform_net
from backend.services.random_lattice import build_hierarchy, dyadic_tree


@pytest.fixture
def three_points():
    """{0, 0.9, 1.8} on the line, not rescaled"""
    return space_from_coords(np.array([[0.0], [0.9], [1.8]]), rescale=False, name="three")


@pytest.fixture
def net64():
    return uniform_net(64)


@pytest.fixture
def dyadic6():
    tree, space = dyadic_tree(6)
    return tree, space, uniform_measure(space.n)


@pytest.fixture
def sampled_net64(net64):
    params = HierarchyParams(delta=0.25, levels=3, seed=42)
    return net64, build_hierarchy(net64, params, trial=0)
