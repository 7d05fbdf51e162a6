import numpy as np
import pytest

from backend.core.exceptions import DomainExit
from backend.core.models import BellmanParams
from backend.services.bellman import (
    bellman_gradient,
    bellman_hessian,
    bellman_hessian_check,
    bellman_tree_check,
    hessian_lower_bound,
    midpoint_inequality_check,
    minus_second_differential,
    tau_sequence,
)
from backend.services.haar_weights import power_weight_family


def test_second_differential_at_the_unit_point():
    assert minus_second_differential(1.0, 1.0, 1.0, 0.0, 0.25) == pytest.approx(3 / 16)
    assert hessian_lower_bound(1.0, 1.0, 1.0, 0.0, 0.25) == pytest.approx(1 / 8)


def test_hessian_matches_its_quadratic_form():
    x, y, alpha = 2.0, 0.75, 0.3
    bxx, bxy, byy = bellman_hessian(x, y, alpha)
    dx, dy = 0.6, -0.8
    form = -(bxx * dx**2 + 2 * bxy * dx * dy + byy * dy**2)
    assert minus_second_differential(x, y, dx, dy, alpha) == pytest.approx(form)
    gx, gy = bellman_gradient(x, y, alpha)
    assert gx == pytest.approx(alpha * (x * y) ** alpha / x)


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.45])
def test_sampled_hessian_check_passes(alpha):
    report = bellman_hessian_check(BellmanParams(alpha=alpha, Q=100.0), samples=5000, seed=4)
    assert report.passed
    assert report.worst_slack >= -1e-12
    assert report.fd_relative_error < 1e-6


def test_parameters_are_validated():
    with pytest.raises(ValueError):
        BellmanParams(alpha=0.5)
    with pytest.raises(ValueError):
        BellmanParams(Q=0.5)


def test_tree_check_on_power_weight(dyadic6):
    tree, space, measure = dyadic6
    (weight,) = power_weight_family(space, measure, targets=[5.0])
    report = bellman_tree_check(tree, weight, measure, 0.25)
    assert report.passed
    assert report.min_difference >= -1e-12
    assert report.telescoped_ratio <= 1.0 + 1e-9
    assert report.tau_carleson <= report.tau_bound * (1 + 1e-9)


def test_leaves_carry_no_tau(dyadic6):
    tree, space, measure = dyadic6
    (weight,) = power_weight_family(space, measure, targets=[5.0])
    tau = tau_sequence(tree, weight.w, measure, 0.25)
    assert np.all(tau[tree.nodes_at(tree.depth)] == 0.0)
    assert np.all(tau >= 0.0)


def test_averages_outside_the_domain_are_reported(dyadic6):
    tree, space, measure = dyadic6
    (weight,) = power_weight_family(space, measure, targets=[5.0])
    with pytest.raises(DomainExit):
        midpoint_inequality_check(tree, 0, weight.w, measure, 0.25, Q=1.0)
