import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_tdoa.attacks import (
    AttackVector,
    CalibrationAttackSpec,
    calibration_attack_samples,
    strong_attack,
    weak_attack,
)
from robust_tdoa.geometry import SensorNetwork
from robust_tdoa.measurement import SignalParams, synthesize_tdoa_set

MU, SIGMA = 7e-7, 2.192e-9
xy = st.floats(-9000, 9000)


def test_weak_attack_examples():
    assert np.array_equal(weak_attack({0: 2.47e-6}, 4).offsets, [2.47e-6, 0, 0, 0])
    assert np.array_equal(weak_attack({}, 4).offsets, np.zeros(4))
    assert weak_attack({1: -5e-9}, 4).offsets[1] == -5e-9
    with pytest.raises(ValueError):
        weak_attack({4: 1e-6}, 4)


def test_attack_vector_immutable_and_finite():
    a = AttackVector([1.0, 2.0])
    with pytest.raises(ValueError):
        a.offsets[0] = 3.0
    with pytest.raises(ValueError):
        AttackVector([np.nan, 0])


def test_strong_attack_to_self_is_zero(net2, source):
    assert np.array_equal(strong_attack(net2, source, source).offsets, np.zeros(4))


@settings(max_examples=60)
@given(st.tuples(xy, xy), st.tuples(xy, xy))
def test_strong_attack_reproduces_target_tdoas(src, tgt):
    net = SensorNetwork([[-8000, 8000], [8000, 8000], [8000, -8000], [-8000, -8000]])
    attack = strong_attack(net, src, tgt)
    s = synthesize_tdoa_set(net, src, attack, SignalParams.fixed(1e-30), 1, np.random.default_rng(0))
    assert np.allclose(s.snapshot, net.true_tdoas(tgt), atol=1e-15, rtol=0)


@given(st.tuples(xy, xy), st.tuples(xy, xy), st.tuples(xy, xy))
def test_strong_attack_translation_equivariant(src, tgt, shift):
    pos = np.array([[-8000, 8000], [8000, 8000], [8000, -8000], [-8000, -8000]], dtype=float)
    s = np.array(shift)
    a = strong_attack(SensorNetwork(pos), src, tgt).offsets
    b = strong_attack(SensorNetwork(pos + s), np.add(src, s), np.add(tgt, s)).offsets
    assert np.allclose(a, b, atol=1e-15)


@given(st.lists(st.floats(-1e-3, 1e-3), min_size=4, max_size=4), st.floats(-1.0, 1.0))
def test_constant_shift_keeps_pair_offsets(off, c):
    a = AttackVector(off)
    pairs = [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2)]
    assert np.allclose(a.pair_offsets(pairs), a.shifted(c).pair_offsets(pairs), atol=1e-12)


class TestCalibrationMixture:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            CalibrationAttackSpec(1.5, 3, 10)
        with pytest.raises(ValueError):
            CalibrationAttackSpec(0.5, 3, 0)
        assert CalibrationAttackSpec(0.3, 3, 160).shifted_count == 48
        # half-to-even
        assert CalibrationAttackSpec(0.5, 3, 5).shifted_count == 2

    def test_no_attack_mean(self, rng):
        x = calibration_attack_samples(MU, SIGMA, CalibrationAttackSpec(0.0, 6, 160), True, rng)
        assert abs(x.mean() - MU) < 4 * SIGMA / math.sqrt(160)

    def test_full_attack_mean(self, rng):
        x = calibration_attack_samples(MU, SIGMA, CalibrationAttackSpec(1.0, 6, 160), True, rng)
        assert abs(x.mean() - (MU + 6 * SIGMA)) < 4 * SIGMA / math.sqrt(160)

    @pytest.mark.parametrize("shifted_is_attack, expected_shifted", [(True, 48), (False, 112)])
    def test_split_counts(self, shifted_is_attack, expected_shifted):
        x = calibration_attack_samples(MU, SIGMA, CalibrationAttackSpec(0.3, 15000, 160), shifted_is_attack, np.random.default_rng(1))
        shifted = np.sum(x > MU + 7500 * SIGMA)
        assert shifted == expected_shifted and len(x) == 160

    def test_shuffled(self):
        x = calibration_attack_samples(MU, SIGMA, CalibrationAttackSpec(0.5, 15000, 100), True, np.random.default_rng(2))
        flags = x > MU + 7500 * SIGMA
        assert np.any(flags[:50]) and np.any(flags[50:])
