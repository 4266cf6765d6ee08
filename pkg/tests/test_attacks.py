"""Adversarial corruption models and the honest-value tracker."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farsign.attacks import ATTACK_KINDS, AttackSpec, HonestStats, corrupt_scalar, corrupt_vector


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


# ---------------------------------------------------------------------------
# corruption formulas
# ---------------------------------------------------------------------------


def test_attack_kinds_tuple():
    assert ATTACK_KINDS == ("none", "sign_flip", "constant", "gaussian", "alie")


def test_none_is_passthrough_and_draws_nothing():
    spec = AttackSpec(kind="none")
    stats = HonestStats()
    rng = _rng()
    before = repr(rng.bit_generator.state)
    assert corrupt_scalar(spec, 3.5, stats, rng) == 3.5
    v = np.array([1.0, -2.0])
    np.testing.assert_array_equal(corrupt_vector(spec, v, stats, rng), v)
    assert repr(rng.bit_generator.state) == before


def test_sign_flip_scales_and_negates():
    spec = AttackSpec(kind="sign_flip", kappa=2.5)
    stats = HonestStats()
    assert corrupt_scalar(spec, 4.0, stats, _rng()) == -10.0
    np.testing.assert_allclose(
        corrupt_vector(spec, np.array([1.0, -2.0]), stats, _rng()), [-2.5, 5.0]
    )


def test_constant_ignores_honest_value():
    spec = AttackSpec(kind="constant", c=7.0)
    stats = HonestStats()
    assert corrupt_scalar(spec, -123.0, stats, _rng()) == 7.0
    np.testing.assert_array_equal(
        corrupt_vector(spec, np.zeros(3), stats, _rng()), np.full(3, 7.0)
    )


def test_gaussian_draw_counts_and_replay():
    spec = AttackSpec(kind="gaussian", sigma_a=3.0)
    stats = HonestStats()
    rng = _rng(7)
    ref = _rng(7)
    got = corrupt_scalar(spec, 0.0, stats, rng)
    assert got == 3.0 * ref.standard_normal()
    # vector form draws exactly shape[0] values
    rng = _rng(9)
    ref = _rng(9)
    got = corrupt_vector(spec, np.zeros(4), stats, rng)
    np.testing.assert_array_equal(got, 3.0 * ref.standard_normal(4))
    assert repr(rng.bit_generator.state) == repr(ref.bit_generator.state)


def test_alie_uses_tracked_moments():
    spec = AttackSpec(kind="alie", z=1.5)
    stats = HonestStats(decay=0.5)
    for v in (1.0, 3.0):
        stats.update(v)
    mean, std = stats.mean, stats.std
    assert corrupt_scalar(spec, 99.0, stats, _rng()) == pytest.approx(mean - 1.5 * std)
    out = corrupt_vector(spec, np.zeros(3), stats, _rng())
    np.testing.assert_allclose(out, np.full(3, mean - 1.5 * std))


def test_alie_empty_stats_defaults_to_zero():
    spec = AttackSpec(kind="alie", z=2.0)
    stats = HonestStats()
    assert stats.mean == 0.0 and stats.std == 0.0
    assert corrupt_scalar(spec, 5.0, stats, _rng()) == 0.0


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        AttackSpec(kind="byzantine_laser")


# ---------------------------------------------------------------------------
# honest statistics tracker
# ---------------------------------------------------------------------------


def test_stats_first_observation_initializes():
    stats = HonestStats(decay=0.9)
    stats.update(4.0)
    assert stats.mean == 4.0
    assert stats.std == 0.0


def test_stats_ewma_closed_form():
    d = 0.8
    stats = HonestStats(decay=d)
    vals = [1.0, 2.0, -3.0, 0.5]
    stats.update(vals[0])
    mean, m2 = vals[0], vals[0] ** 2
    for v in vals[1:]:
        mean = d * mean + (1 - d) * v
        m2 = d * m2 + (1 - d) * v * v
        stats.update(v)
    assert stats.mean == pytest.approx(mean, rel=1e-12)
    assert stats.std == pytest.approx(np.sqrt(max(m2 - mean**2, 0.0)), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=30
    ),
    st.floats(min_value=0.5, max_value=0.999),
)
def test_update_many_matches_sequential(values, decay):
    batched = HonestStats(decay=decay)
    batched.update_many(np.asarray(values))
    sequential = HonestStats(decay=decay)
    for v in values:
        sequential.update(v)
    assert batched.mean == pytest.approx(sequential.mean, rel=1e-10, abs=1e-12)
    assert batched.std == pytest.approx(sequential.std, rel=1e-8, abs=1e-10)


def test_update_many_empty_is_noop():
    stats = HonestStats()
    stats.update(2.0)
    stats.update_many(np.array([]))
    assert stats.mean == 2.0


def test_stats_decay_validation():
    with pytest.raises(ValueError):
        HonestStats(decay=0.0)
    with pytest.raises(ValueError):
        HonestStats(decay=1.0)


def test_vector_statistics_track_componentwise():
    stats = HonestStats(decay=0.5)
    stats.update(np.array([1.0, 3.0]))
    stats.update(np.array([3.0, 1.0]))
    np.testing.assert_allclose(stats.mean, [2.0, 2.0])
    np.testing.assert_allclose(stats.std, [1.0, 1.0])
    # alie against vector stats shades each component
    spec = AttackSpec(kind="alie", z=1.0)
    out = corrupt_vector(spec, np.zeros(2), stats, _rng())
    np.testing.assert_allclose(out, [1.0, 1.0])
