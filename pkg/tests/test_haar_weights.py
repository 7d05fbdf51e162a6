import math

import numpy as np
import pytest

from backend.core.exceptions import ConfigError, ViolationReport
from backend.core.rng import INPUT, stream
from backend.services import haar_weights
from backend.services.haar_weights import (
    a2_characteristic,
    ainfty_characteristic,
    ainfty_inequality_check,
    build_haar_system,
    carleson_constant,
    carleson_embedding_check,
    chain_inequality_check,
    check_decomposition,
    cube_a2,
    cube_ainfty,
    dyadic_maximal,
    fujii_wilson_ainfty,
    haar_son_values,
    make_weight,
    maximal_function,
    parseval_residual,
    power_weight_family,
    subtree_sums,
)
from backend.services.metric_core import uniform_measure, uniform_net
from backend.services.random_lattice import dyadic_tree


def _random_weight(n: int, seed: int) -> np.ndarray:
    return np.exp(stream(seed, 0, INPUT, n).normal(0.0, 1.0, n))


def test_son_values_for_unequal_sons():
    values = haar_son_values(np.array([1 / 3, 2 / 3]))
    assert values.shape == (1, 2)
    assert np.allclose(values[0], [-math.sqrt(2), math.sqrt(2) / 2])


def test_son_values_are_orthonormal():
    mass = np.array([0.1, 0.2, 0.3, 0.4])
    values = haar_son_values(mass)
    gram = (values * mass) @ values.T
    assert np.allclose(gram, np.eye(3), atol=1e-12)
    assert np.allclose(values @ mass, 0.0, atol=1e-12)


def test_haar_system_on_dyadic_tree(dyadic6):
    tree, space, measure = dyadic6
    system = build_haar_system(tree, measure)
    assert system.size == space.n - 1
    gram = (system.vectors * measure.mass) @ system.vectors.T
    assert np.allclose(gram, np.eye(system.size), atol=1e-10)
    assert np.allclose(system.vectors @ measure.mass, 0.0, atol=1e-12)

    f = stream(1, 0, INPUT, space.n).standard_normal(space.n)
    assert parseval_residual(system, measure, f) < 1e-10


def test_weighted_split_properties(dyadic6):
    tree, space, measure = dyadic6
    system = build_haar_system(tree, measure)
    checks = check_decomposition(system, _random_weight(space.n, 7), measure)
    assert checks.instances == system.size
    assert checks.worst_residual < 1e-10
    assert checks.orthogonality < 1e-10
    assert checks.normalization < 1e-10
    assert checks.alpha_slack >= -1e-10
    assert checks.beta_slack >= -1e-10
    assert checks.delta_slack >= -1e-10


def test_two_point_characteristics():
    space = uniform_net(2)
    measure = uniform_measure(2)
    w = np.array([4.0, 0.25])
    assert a2_characteristic(w, measure, space) == pytest.approx(4.515625)
    assert ainfty_characteristic(w, measure, space) == pytest.approx(2.125)

    weight = make_weight(w, space, measure, label="two")
    assert np.allclose(weight.sigma, [0.25, 4.0])
    with pytest.raises(ConfigError):
        make_weight(np.array([1.0, -1.0]), space, measure)


def test_constant_weight_has_unit_characteristics(dyadic6):
    tree, space, measure = dyadic6
    w = np.full(space.n, 3.0)
    assert a2_characteristic(w, measure, space) == pytest.approx(1.0)
    assert ainfty_characteristic(w, measure, space) == pytest.approx(1.0)
    assert cube_a2(tree, w, measure) == pytest.approx(1.0)
    assert cube_a2(tree, _random_weight(space.n, 3), measure) >= 1.0


def test_maximal_functions_dominate(dyadic6):
    tree, space, measure = dyadic6
    f = stream(2, 0, INPUT, space.n).standard_normal(space.n)
    assert np.all(maximal_function(f, measure.mass, space) >= np.abs(f) - 1e-12)
    dyadic = dyadic_maximal(tree, f, measure)
    assert np.allclose(dyadic[tree.depth], np.abs(f))
    assert np.all(np.diff(dyadic, axis=0) <= 1e-12)


def test_carleson_constant_of_indicator_masses(dyadic6):
    tree, _, measure = dyadic6
    node_mass = tree.indicator.astype(float) @ measure.mass
    # a_R = mu(R) sums to (generations below + 1) mu(Q) inside every Q
    assert carleson_constant(node_mass, tree, node_mass) == pytest.approx(tree.depth + 1)
    assert subtree_sums(tree, np.ones(tree.n_nodes))[0] == tree.n_nodes
    assert carleson_constant(np.zeros(tree.n_nodes), tree, node_mass) == 0.0


def test_power_weights_hit_targets(net64):
    measure = uniform_measure(net64.n)
    family = power_weight_family(net64, measure, targets=[2.0, 10.0])
    assert [w.a2 for w in family] == pytest.approx([2.0, 10.0], rel=1e-6)


def test_embedding_with_constant_function(dyadic6):
    tree, _, measure = dyadic6
    node_mass = tree.indicator.astype(float) @ measure.mass
    sigma = np.full(tree.n_points, 2.0)
    report = carleson_embedding_check(tree, measure, node_mass, np.ones(tree.n_points), sigma=sigma)
    assert report.passed
    assert report.carleson == pytest.approx(tree.depth + 1)
    assert report.lhs == pytest.approx(tree.depth + 1)
    assert report.ratio == pytest.approx(1.0)
    assert report.sigma_oscillation == pytest.approx(1.0)
    assert report.weighted_integral == pytest.approx(0.5)
    assert report.fitted_constant == pytest.approx(1.0)


def test_embedding_fitted_constant_stays_below_oscillation(dyadic6):
    tree, space, measure = dyadic6
    rng = stream(12, 0, INPUT, space.n)
    alpha = rng.uniform(0.0, 1.0, tree.n_nodes)
    F = rng.uniform(0.1, 3.0, space.n)
    sigma = rng.uniform(1.0, 4.0, space.n)
    report = carleson_embedding_check(tree, measure, alpha, F, sigma=sigma)
    assert report.passed
    assert report.ratio <= 2.0
    assert 1.0 <= report.sigma_oscillation <= 4.0
    assert report.fitted_constant <= 2.0 * report.sigma_oscillation


def test_embedding_rejects_bad_inputs(dyadic6):
    tree, space, measure = dyadic6
    alpha = np.ones(tree.n_nodes)
    with pytest.raises(ConfigError):
        carleson_embedding_check(tree, measure, -alpha, np.ones(space.n))
    with pytest.raises(ConfigError):
        carleson_embedding_check(tree, measure, alpha, np.zeros(space.n))
    with pytest.raises(ConfigError):
        carleson_embedding_check(tree, measure, alpha, np.ones(space.n), sigma=np.full(space.n, -1.0))


def test_embedding_flags_understated_intensity(dyadic6, monkeypatch):
    tree, space, measure = dyadic6
    node_mass = tree.indicator.astype(float) @ measure.mass
    monkeypatch.setattr(haar_weights, "carleson_constant", lambda *args: 0.1)
    report = carleson_embedding_check(tree, measure, node_mass, np.ones(space.n), raise_on_violation=False)
    assert not report.passed
    with pytest.raises(ViolationReport):
        carleson_embedding_check(tree, measure, node_mass, np.ones(space.n))


def test_chain_inequality_holds(dyadic6):
    tree, space, measure = dyadic6
    for w in (np.full(space.n, 3.0), _random_weight(space.n, 13)):
        report = chain_inequality_check(tree, w, measure, space)
        assert report.passed
        assert report.cube_slack >= -1e-9
        assert report.cube_ainfty >= 1.0


def test_chain_inequality_fails_with_small_constant(dyadic6, monkeypatch):
    tree, space, measure = dyadic6
    monkeypatch.setattr(haar_weights, "cube_ainfty", lambda *args: 0.5)
    report = chain_inequality_check(tree, _random_weight(space.n, 13), measure, space)
    assert not report.passed
    assert report.cube_slack < 0


def test_fujii_wilson_of_two_point_weight():
    tree, space = dyadic_tree(1)
    measure = uniform_measure(space.n)
    # root: M w = (4, 2.125), so <M w> / <w> = 3.0625 / 2.125
    assert fujii_wilson_ainfty(tree, np.array([4.0, 0.25]), measure) == pytest.approx(49 / 34)
    assert fujii_wilson_ainfty(tree, np.full(2, 5.0), measure) == pytest.approx(1.0)


def test_fujii_wilson_is_at_least_one(dyadic6):
    tree, space, measure = dyadic6
    assert fujii_wilson_ainfty(tree, np.ones(space.n), measure) == pytest.approx(1.0)
    w = _random_weight(space.n, 14)
    assert fujii_wilson_ainfty(tree, w, measure) > 1.0
    assert cube_ainfty(tree, w, measure) > 1.0


def test_ainfty_inequality_holds(dyadic6):
    tree, space, measure = dyadic6
    w = _random_weight(space.n, 15)
    b = stream(15, 1, INPUT, tree.n_nodes).standard_normal(tree.n_nodes)
    report = ainfty_inequality_check(tree, w, measure, b)
    assert report.passed
    assert report.fujii_wilson >= 1.0
    assert 0.0 < report.worst_ratio <= 1.0 + 1e-9


def test_ainfty_inequality_fails_with_small_constant(dyadic6, monkeypatch):
    tree, space, measure = dyadic6
    monkeypatch.setattr(haar_weights, "fujii_wilson_ainfty", lambda *args: 1e-6)
    report = ainfty_inequality_check(tree, _random_weight(space.n, 15), measure, np.ones(tree.n_nodes))
    assert not report.passed
    assert report.worst_ratio > 1.0
