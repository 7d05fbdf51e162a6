import numpy as np
import pytest

from backend.core.exceptions import ConfigError, TreeTooShallow, ViolationReport
from backend.core.rng import INPUT, stream
from backend.services import shifts_paraproducts
from backend.services.haar_weights import build_haar_system, power_weight_family
from backend.services.shifts_paraproducts import (
    adjoint_operator,
    assemble_shift,
    build_paraproducts,
    build_stopping_family,
    norm_checks,
    o_operator_check,
    p_trick_check,
    paraproduct_apply,
    paraproduct_identities,
    stopping_families,
    tau_tilde_check,
    verify_sbor,
    weighted_operator_norm,
)


@pytest.fixture
def system(dyadic6):
    tree, _, measure = dyadic6
    return build_haar_system(tree, measure)


def _operator(n: int, seed: int) -> np.ndarray:
    return stream(seed, 0, INPUT, n, n).standard_normal((n, n)) / n


def test_haar_multiplier_has_unit_norm(dyadic6, system):
    _, space, measure = dyadic6
    shift = assemble_shift(system, measure, 0, 0, source="haar_multiplier", seed=3)
    assert weighted_operator_norm(shift.matrix, np.ones(space.n), measure.mass) == pytest.approx(1.0)
    checks = norm_checks(shift.matrix, np.ones(space.n), measure.mass)
    assert checks.passed
    assert checks.power == pytest.approx(1.0)


def test_random_coefficients_stay_admissible(dyadic6, system):
    _, space, measure = dyadic6
    shift = assemble_shift(system, measure, 2, 1, seed=5)
    assert shift.terms > 0
    assert shift.clamped == 0
    assert shift.max_normalized <= 1.0

    f = stream(8, 0, INPUT, space.n).standard_normal(space.n)
    coef = system.coefficients(f, measure)
    expected = np.zeros(space.n)
    for i, j, c in zip(shift.I_rows, shift.J_rows, shift.coeffs, strict=True):
        expected += c * coef[i] * system.vectors[j]
    assert np.allclose(shift.matrix @ f, expected)


def test_shift_complexity_limits(dyadic6, system):
    _, _, measure = dyadic6
    with pytest.raises(TreeTooShallow):
        assemble_shift(system, measure, 7, 0)
    with pytest.raises(ConfigError):
        assemble_shift(system, measure, 1, 0, source="haar_multiplier")
    with pytest.raises(ConfigError):
        assemble_shift(system, measure, 0, 0, source="kernel")


def test_constant_weight_stops_by_generation(dyadic6):
    tree, space, measure = dyadic6
    family = build_stopping_family(tree, 0, np.ones(space.n), measure, 2, 1)
    assert set(family.criteria) == {"generation"}
    assert family.members == tree.nodes_at(2).tolist()
    assert family.covers_root
    assert family.p == pytest.approx(2.0 - 1.0 / 4)


def test_stopping_families_cover_their_roots(dyadic6):
    tree, space, measure = dyadic6
    (weight,) = power_weight_family(space, measure, targets=[20.0])
    families = stopping_families(tree, weight.w, measure, 2, 2)
    assert families
    assert all(f.covers_root for f in families)
    phi = stream(4, 0, INPUT, space.n).standard_normal(space.n)
    assert p_trick_check(tree, families, phi, weight.w, measure).passed
    assert tau_tilde_check(tree, weight.w, measure, 0.25, 2, 2).passed


def test_stopping_cube_bound_on_power_weight(dyadic6):
    tree, space, measure = dyadic6
    (weight,) = power_weight_family(space, measure, targets=[20.0])
    phi = stream(5, 0, INPUT, space.n).standard_normal(space.n)
    for family in stopping_families(tree, weight.w, measure, 2, 1):
        report = verify_sbor(tree, family, phi, weight.w, measure, 0.25)
        assert report.passed
        assert report.root == family.root
        assert len(report.rows) == len(family.members)


def test_stopping_cube_bound_flags_small_constant(dyadic6, monkeypatch):
    tree, space, measure = dyadic6
    (weight,) = power_weight_family(space, measure, targets=[20.0])
    phi = stream(5, 0, INPUT, space.n).standard_normal(space.n)
    family = build_stopping_family(tree, 0, weight.w, measure, 2, 1)
    monkeypatch.setattr(shifts_paraproducts, "delta_ratio_constant", lambda *args: 1e-12)
    report = verify_sbor(tree, family, phi, weight.w, measure, 0.25, raise_on_violation=False)
    assert not report.passed
    assert report.worst_slack < 0
    with pytest.raises(ViolationReport):
        verify_sbor(tree, family, phi, weight.w, measure, 0.25)


def test_paraproduct_identities(dyadic6, system):
    _, space, measure = dyadic6
    T = _operator(space.n, 1)
    report = paraproduct_identities(system, measure, T, seed=2)
    assert report.passed

    pi, _, o = build_paraproducts(system, measure, T)
    ones = np.ones(space.n)
    t_chi = T @ ones
    assert np.allclose(paraproduct_apply(pi, ones), t_chi - o.b[0])


def test_adjoint_in_weighted_pairing(dyadic6):
    _, space, measure = dyadic6
    T = _operator(space.n, 6)
    f, g = stream(6, 1, INPUT, space.n).standard_normal((2, space.n))
    lhs = float(np.sum((T @ f) * g * measure.mass))
    rhs = float(np.sum(f * (adjoint_operator(T, measure) @ g) * measure.mass))
    assert lhs == pytest.approx(rhs)


def test_constant_part_norm(dyadic6, system):
    _, space, measure = dyadic6
    T = _operator(space.n, 9)
    _, _, o = build_paraproducts(system, measure, T)
    (weight,) = power_weight_family(space, measure, targets=[4.0])
    report = o_operator_check(o, T, measure, weight)
    assert report.passed
    assert report.norm == pytest.approx(report.exact)
