import math

import numpy as np
import pytest

from backend.core.exceptions import AExceedsP
from backend.core.models import GoodnessParams, HierarchyParams
from backend.services import goodness
from backend.services.goodness import (
    BadProbabilityRow,
    GoodnessVerdict,
    bad_probability_sweep,
    boundary_hit_probability,
    classify_all,
    classify_good,
    derive_a,
    estimate_bad_probability,
    exact_bad_probability,
    goodness_profile,
    is_good_for,
    really_good_adjust,
    really_good_probability_check,
)
from backend.services.metric_core import uniform_net


def test_top_cube_is_good(sampled_net64):
    space, sample = sampled_net64
    root = int(sample.grids[0][0])
    verdict = classify_good(space, sample, 0, root, GoodnessParams(r=1))
    assert verdict.is_good
    assert verdict.witnesses == []


def test_classification_matches_profile(sampled_net64):
    space, sample = sampled_net64
    params = GoodnessParams(r=1)
    for verdict in classify_all(space, sample, params):
        ratios = goodness_profile(space, sample, verdict.generation, verdict.label, params)
        assert verdict.is_good == is_good_for(ratios, verdict.generation, params.r)


def test_depth_beyond_generation_is_never_bad(net64):
    hierarchy = HierarchyParams(delta=0.25, levels=3, seed=5)
    rows = estimate_bad_probability(net64, hierarchy, GoodnessParams(), point=17, trials=50, r_values=[4, 6])
    assert [row.frequency for row in rows] == [0.0, 0.0]


def test_sampled_bad_frequency_tracks_exact_value():
    space = uniform_net(5)
    hierarchy = HierarchyParams(delta=0.25, levels=2, seed=9)
    params = GoodnessParams(r=1)
    exact = exact_bad_probability(space, hierarchy, params, point=2, r_values=[1])[1]
    (row,) = estimate_bad_probability(space, hierarchy, params, point=2, trials=2000, r_values=[1])
    assert 0.0 <= exact <= 1.0
    assert abs(row.frequency - exact) <= max(4 * row.stderr, 0.05)


def test_boundary_layer_frequency_grows_with_eps(net64):
    sweep = boundary_hit_probability(
        net64, HierarchyParams(delta=0.25, levels=3, seed=2), point=31, eps_values=[0.0, 0.05, 0.5], trials=200
    )
    frequencies = [row.frequency for row in sweep.rows]
    assert frequencies[0] == 0.0
    assert frequencies == sorted(frequencies)


def test_boundary_slope_verdict_on_hits(net64):
    sweep = boundary_hit_probability(
        net64, HierarchyParams(delta=0.25, levels=3, seed=2), point=31, eps_values=[0.1, 0.2, 0.4], trials=200
    )
    assert sweep.fit_points == 3
    assert sweep.slope >= sweep.eta - 0.2
    assert sweep.slope_ok


def test_boundary_without_hits_is_not_a_pass(net64):
    sweep = boundary_hit_probability(
        net64, HierarchyParams(delta=0.25, levels=3, seed=2), point=31, eps_values=[0.0, 0.001], trials=50
    )
    assert sweep.fit_points == 0
    assert math.isnan(sweep.slope)
    assert not sweep.slope_ok


def _synthetic_rows(monkeypatch, frequencies):
    rows = [BadProbabilityRow(r=r, frequency=f, stderr=0.001) for r, f in enumerate(frequencies, start=1)]
    monkeypatch.setattr(goodness, "estimate_bad_probability", lambda *args, **kwargs: rows)


def test_sweep_with_all_zero_rows_reports_no_decay(net64):
    hierarchy = HierarchyParams(delta=0.25, levels=3, seed=5)
    sweep = bad_probability_sweep(net64, hierarchy, GoodnessParams(), point=17, r_values=[4, 6], trials=50)
    assert sweep.threshold_r == 4
    assert sweep.fit_points == 0
    assert math.isnan(sweep.decay_exponent)
    assert not sweep.decay_ok


def test_sweep_with_one_positive_row_reports_no_decay(net64):
    # at generation 2 only r = 1 can see a proper ancestor
    hierarchy = HierarchyParams(delta=0.25, levels=2, seed=5)
    sweep = bad_probability_sweep(net64, hierarchy, GoodnessParams(), point=17, r_values=[1, 2, 3], trials=100)
    assert [row.frequency for row in sweep.rows][1:] == [0.0, 0.0]
    assert sweep.fit_points <= 1
    assert not sweep.decay_ok


def test_sweep_fits_geometric_decay(monkeypatch, net64):
    hierarchy = HierarchyParams(delta=0.25, levels=4)
    _synthetic_rows(monkeypatch, [0.8 * 0.25 ** (0.5 * r) for r in range(1, 5)])
    sweep = bad_probability_sweep(net64, hierarchy, GoodnessParams(a=0.5), point=0, r_values=[1, 2, 3, 4], trials=1)
    assert sweep.fit_points == 4
    assert sweep.decay_exponent == pytest.approx(0.5)
    assert sweep.expected_exponent == pytest.approx(0.125)
    assert sweep.threshold_r == 1
    assert sweep.decay_ok


def test_sweep_rejects_flat_frequencies(monkeypatch, net64):
    hierarchy = HierarchyParams(delta=0.25, levels=4)
    _synthetic_rows(monkeypatch, [0.6, 0.6, 0.6, 0.6])
    sweep = bad_probability_sweep(net64, hierarchy, GoodnessParams(a=0.5), point=0, r_values=[1, 2, 3, 4], trials=1)
    assert sweep.decay_exponent == pytest.approx(0.0, abs=1e-12)
    assert sweep.threshold_r is None
    assert not sweep.decay_ok


def test_equalized_probability_is_exactly_a():
    space = uniform_net(4)
    a, rows = really_good_probability_check(space, HierarchyParams(delta=0.25, levels=2), GoodnessParams(r=1))
    assert a == min(row.p_q for row in rows)
    assert all(abs(row.really_good_probability - a) <= 1e-12 for row in rows)


def test_target_above_p_is_rejected():
    verdict = GoodnessVerdict(label=0, generation=1, is_good=True, p_q=0.3)
    with pytest.raises(AExceedsP):
        really_good_adjust([verdict], 0.5)


def test_adjust_weights_and_draws():
    verdicts = [
        GoodnessVerdict(label=0, generation=1, is_good=True, p_q=0.8),
        GoodnessVerdict(label=3, generation=1, is_good=False, p_q=0.5),
    ]
    weighted = really_good_adjust(verdicts, 0.4)
    assert weighted[0].really_good_weight == pytest.approx(0.5)
    assert weighted[1].really_good_weight == 0.0

    drawn = really_good_adjust(verdicts, 0.4, seed=1)
    assert not drawn[1].really_good
    assert drawn[0].really_good == (drawn[0].xi <= 0.5)


def test_derived_a_is_a_power_of_two(net64):
    a = derive_a(net64, HierarchyParams(delta=0.25, levels=2))
    exponent = np.log2(a)
    assert a <= 0.5
    assert exponent == pytest.approx(round(exponent))
