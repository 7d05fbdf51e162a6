import json
import math

import numpy as np
import pytest

from backend.core.exceptions import ConfigError
from backend.core.models import GoodnessParams, HierarchyParams
from backend.core.number_utils import approx_le, binomial_stderr, loglog_slope, slack
from backend.core.parallel import parallel_map
from backend.core.rng import COEFFICIENT, GRID, stream
from backend.services.metric_core import uniform_measure, uniform_net
from backend.services.random_lattice import build_hierarchy, sample_to_payload
from backend.validation.validation import load_space, load_tree, load_weights, parse_spec


def test_streams_are_addressed():
    first = stream(7, 2, GRID, 5).uniform(size=4)
    assert np.array_equal(first, stream(7, 2, GRID, 5).uniform(size=4))
    assert not np.array_equal(first, stream(7, 3, GRID, 5).uniform(size=4))
    assert not np.array_equal(first, stream(7, 2, COEFFICIENT, 5).uniform(size=4))


def test_parallel_map_keeps_order():
    items = [-3, 1, -4, 1, -5, 9, -2, 6]
    assert parallel_map(abs, items, workers=2) == [abs(i) for i in items]
    assert parallel_map(abs, [], workers=4) == []


def test_number_helpers():
    assert loglog_slope([1, 10, 100], [2, 20, 200]) == pytest.approx(1.0)
    assert math.isnan(loglog_slope([1.0], [1.0]))
    assert loglog_slope([2, 2, 2], [1, 2, 3]) == 0.0
    assert binomial_stderr(0.5, 100) == pytest.approx(0.05)
    assert slack([1.0, 2.0], [0.5, 2.5]) == pytest.approx(-0.2)
    assert approx_le(1.0 + 1e-15, 1.0)


def test_goodness_parameter_derivation():
    params = GoodnessParams.derive(eps_cz=1.0, lambda_doubling=2.0, r=3, a=0.5, delta=0.25)
    assert params.gamma == pytest.approx(0.25)
    assert params.eta == pytest.approx(0.5)
    assert params.threshold(0.25, 2, 1) == pytest.approx(0.25 ** (0.5 + 0.75))
    with pytest.raises(ValueError):
        HierarchyParams(delta=0.3)


def test_spec_parsing():
    assert parse_spec("net1d:n=64") == ("net1d", {"n": "64"})
    assert parse_spec("file:/tmp/a:b.json") == ("file", {"path": "/tmp/a:b.json"})
    assert parse_spec("spaces/x.json") == ("file", {"path": "spaces/x.json"})
    with pytest.raises(ConfigError):
        parse_spec("net1d:n")
    with pytest.raises(ConfigError):
        load_space("net1d:n=many")
    assert load_space("random:n=5:seed=2").n == 5


def test_weight_files(tmp_path):
    space = uniform_net(2)
    measure = uniform_measure(2)
    single = tmp_path / "w.json"
    single.write_text(json.dumps({"w": [4.0, 0.25]}))
    (weight,) = load_weights(space, measure, str(single))
    assert weight.a2 == pytest.approx(4.515625)

    family = tmp_path / "family.json"
    family.write_text(json.dumps({"weights": [{"w": [1.0, 1.0], "label": "flat"}, {"w": [2.0, 1.0]}]}))
    weights = load_weights(space, measure, f"file:{family}")
    assert [w.label for w in weights] == ["flat", "family[1]"]

    assert len(load_weights(space, measure, "power:beta=0..1:count=3")) == 3
    with pytest.raises(ConfigError):
        load_weights(space, measure, "gauss:sigma=1")


def test_tree_from_saved_sample(tmp_path):
    space = uniform_net(16)
    sample = build_hierarchy(space, HierarchyParams(delta=0.25, levels=2, seed=1))
    path = tmp_path / "sample.json"
    path.write_text(json.dumps({"space": "net1d:n=16", **sample_to_payload(sample)}))
    tree, loaded = load_tree(f"file:{path}")
    assert loaded.n == 16
    assert tree.depth == 2
    dyadic, net = load_tree("dyadic:levels=3:branching=3")
    assert net.n == 27
    assert dyadic.max_sons() == 3
