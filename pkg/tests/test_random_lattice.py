import numpy as np
import pytest

from backend.core.exceptions import CoverGap, EnumerationTooLarge
from backend.core.models import HierarchyParams
from backend.services.metric_core import uniform_net
from backend.services.random_lattice import (
    CubeTree,
    build_hierarchy,
    check_grid_laws,
    enumerate_k_grids,
    sample_from_payload,
    sample_to_payload,
    sampling_frequency_check,
    verify_cover,
)


def test_enumerate_grids_on_three_points(three_points):
    grids = enumerate_k_grids(three_points, np.arange(3), 1.0)
    assert [g.tolist() for g in grids] == [[0, 2], [1]]


def test_enumerate_grids_respects_limit(net64):
    with pytest.raises(EnumerationTooLarge):
        enumerate_k_grids(net64, np.arange(64), 0.25, limit=3)


def test_enumerated_weights_sum_to_one():
    space = uniform_net(5)
    events = build_hierarchy(space, HierarchyParams(delta=0.25, levels=2), mode="enumerate")
    assert len(events) > 1
    assert sum(e.weight for e in events) == pytest.approx(1.0, abs=1e-12)
    for event in events:
        verify_cover(space, event)


def test_sampled_lattice_obeys_grid_laws(sampled_net64):
    space, sample = sampled_net64
    report = check_grid_laws(space, sample)
    assert report.separation_violations == 0
    assert report.maximality_violations == 0
    assert report.nesting_violations == 0
    assert report.cover_violations == 0
    assert report.worst_cover_ratio <= 3.0

    cover = verify_cover(space, sample)
    assert cover.generations == 4
    assert cover.worst_chain_ratio <= 15.0


def test_sampling_is_reproducible(net64):
    params = HierarchyParams(delta=0.25, levels=3, seed=42)
    first = build_hierarchy(net64, params, trial=5)
    again = build_hierarchy(net64, params, trial=5)
    assert np.array_equal(first.labels, again.labels)
    assert first.choices == again.choices


def test_corrupted_parent_map_is_a_cover_gap():
    space = uniform_net(3)
    sample = build_hierarchy(space, HierarchyParams(delta=0.25, levels=2, seed=1))
    assert sample.grids[1].tolist() == [0, 1, 2]
    broken = sample.model_copy(update={"parents": (np.full(3, 99), sample.parents[1])})
    with pytest.raises(CoverGap):
        verify_cover(space, broken)


def test_payload_keeps_the_lattice(sampled_net64):
    _, sample = sampled_net64
    restored = sample_from_payload(sample_to_payload(sample))
    assert np.array_equal(restored.labels, sample.labels)
    assert restored.history(0) == sample.history(0)


def test_tree_view_partitions_every_generation(sampled_net64):
    space, sample = sampled_net64
    tree = CubeTree.from_sample(sample)
    assert tree.depth == sample.levels
    assert tree.nodes_at(0).size == 1
    for g in range(tree.depth + 1):
        nodes = tree.nodes_at(g)
        assert tree.indicator[nodes].sum(axis=0).tolist() == [1] * space.n
    for node, sons in enumerate(tree.children):
        if sons:
            assert np.array_equal(np.sort(np.concatenate([tree.members[s] for s in sons])), tree.members[node])


def test_sampled_frequencies_match_enumeration():
    # Fixed seed: the chi-square p-value is a single deterministic draw
    check = sampling_frequency_check(uniform_net(5), HierarchyParams(delta=0.25, levels=2, seed=3), trials=2000)
    assert check.unexpected == 0
    assert check.pvalue > 1e-4
