import numpy as np
import pytest

from backend.core.exceptions import ConfigError
from backend.core.models import GoodnessParams, HierarchyParams
from backend.core.rng import INPUT, stream
from backend.services.decomposition import (
    DISJOINT,
    NESTED_FAR,
    averaging_identity_check,
    build_form_ledger,
    build_model_operator,
    containment_probability_check,
    distance_bin,
    extract_shifts,
    kernel_values,
    representation_identity_check,
    subtract_paraproducts,
)
from backend.services.haar_weights import build_haar_system
from backend.services.metric_core import uniform_measure, uniform_net
from backend.services.random_lattice import CubeTree, build_hierarchy


@pytest.fixture
def net16():
    space = uniform_net(16)
    sample = build_hierarchy(space, HierarchyParams(delta=0.25, levels=2, seed=12))
    return space, sample, uniform_measure(space.n)


def _pair(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    f, g = stream(seed, 0, INPUT, n).standard_normal((2, n))
    return f, g


def test_model_operator_constants():
    space = uniform_net(16)
    operator = build_model_operator(space, uniform_measure(space.n), "inv-dist")
    assert operator.size_constant == pytest.approx(1.0)
    assert operator.holder_x <= 2.0 + 1e-12
    assert np.all(np.diag(operator.matrix) == 0.0)
    assert np.allclose(operator.K, operator.K.T)


def test_zero_kernel_and_unknown_kernel(three_points):
    assert not np.any(kernel_values(three_points, "zero"))
    with pytest.raises(ConfigError):
        kernel_values(three_points, "laplace")


def test_representation_identity(net16):
    space, sample, measure = net16
    T = build_model_operator(space, measure, "inv-dist").matrix
    f, g = _pair(space.n, 1)
    report = representation_identity_check(space, sample, T, measure, f, g)
    assert report.passed
    assert report.residual < 1e-10


def test_paraproduct_subtraction_keeps_disjoint_pairs(net16):
    space, sample, measure = net16
    system = build_haar_system(CubeTree.from_sample(sample), measure)
    T = build_model_operator(space, measure, "inv-dist").matrix
    T_tilde, report = subtract_paraproducts(system, measure, T, space)
    assert report.passed
    assert np.allclose(system.coefficients(T_tilde @ np.ones(space.n), measure), 0.0, atol=1e-10)


def test_ledger_buckets(net16):
    space, sample, measure = net16
    system = build_haar_system(CubeTree.from_sample(sample), measure)
    T = build_model_operator(space, measure, "inv-dist").matrix
    ledger = build_form_ledger(space, system, T, measure, r0=1)
    counts = ledger.counts()
    assert sum(counts.values()) == ledger.coeff.size
    assert np.all(ledger.gap[ledger.bucket == NESTED_FAR] >= 1)
    assert np.all(ledger.gap >= 0)
    assert np.all(ledger.D[ledger.bucket == DISJOINT] > 0)


def test_averaging_identity_on_four_points():
    space = uniform_net(4)
    measure = uniform_measure(space.n)
    T = build_model_operator(space, measure, "inv-dist").matrix
    functions = [_pair(space.n, seed) for seed in range(3)]
    report = averaging_identity_check(
        space, HierarchyParams(delta=0.25, levels=2), GoodnessParams(r=1), T, measure, functions
    )
    assert report.events > 1
    assert report.passed
    assert len(report.rows) == 3


def test_shift_extraction_bounds_the_good_form(net16):
    space, sample, measure = net16
    operator = build_model_operator(space, measure, "inv-dist")
    f, g = _pair(space.n, 4)
    extraction = extract_shifts(space, sample, operator, measure, GoodnessParams(r=2), f, g, ancestor_offset=0)
    assert extraction.passed
    assert all(shift.max_normalized <= 1.0 + 1e-9 for shift in extraction.shifts)


def test_distance_bins():
    bins = distance_bin(np.array([1.0, 4.0, 16.0, 20.0]), np.ones(4), 0.25)
    assert bins.tolist() == [0, 1, 2, 2]


def test_containment_reaches_certainty_far_up(net16):
    space, _, _ = net16
    report = containment_probability_check(
        space, HierarchyParams(delta=0.25, levels=2, seed=3), [0, 1], trials=20, ancestor_offset=10
    )
    # ancestors above the root are X itself
    assert all(row.frequency == 1.0 for row in report.rows if row.pairs > 0)
    assert report.monotone
