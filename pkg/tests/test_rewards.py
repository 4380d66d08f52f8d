import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from explorelab.counts import ResetMode, ResetPolicy
from explorelab.evaluation import loop_rewards
from explorelab.rewards import (
    ContractViolation,
    IntrinsicStep,
    RewardKind,
    RewardSpec,
    intrinsic_reward,
    reward_trend,
    score,
)

counts = st.integers(1, 10_000)


def test_spot_values():
    assert intrinsic_reward(RewardKind.CBET, 1, 1) == 0.5
    assert intrinsic_reward(RewardKind.CBET, 3, 1) == 0.25
    assert intrinsic_reward(RewardKind.COUNT_ONLY, 4, 99) == 0.5
    assert intrinsic_reward(RewardKind.CHANGE_ONLY, 99, 16) == 0.25
    assert intrinsic_reward(RewardKind.PRODUCT, 4, 9) == pytest.approx(1 / 6)
    assert intrinsic_reward(RewardKind.WEIGHTED_SUM, 4, 16) == pytest.approx(0.375)
    assert intrinsic_reward(RewardKind.WEIGHTED_SUM_SQUARED, 4, 16) == pytest.approx(0.140625)
    assert intrinsic_reward(RewardKind.SQRT_OF_SUM, 7, 9) == 0.25
    assert intrinsic_reward(RewardKind.CBET_UNSQUARED, 7, 9) == 0.25


def test_zero_counts_violate_the_contract():
    for kind in RewardKind:
        with pytest.raises(ContractViolation):
            intrinsic_reward(kind, 0, 1)
        with pytest.raises(ContractViolation):
            intrinsic_reward(kind, 1, 0)


def test_scale_is_applied_after_raw_reward():
    step = score(RewardSpec(scale=0.005), 1, 1)
    assert step == IntrinsicStep(1, 1, 0.5, 0.0025)
    with pytest.raises(ValueError):
        RewardSpec(scale=0)


@given(counts, counts)
def test_bounds(ns, nc):
    assert 0 < intrinsic_reward(RewardKind.CBET, ns, nc) <= 0.5
    assert 0 < intrinsic_reward(RewardKind.COUNT_ONLY, ns, nc) <= 1


@given(counts, counts)
def test_strictly_decreasing_in_each_used_count(ns, nc):
    for kind in RewardKind:
        r = intrinsic_reward(kind, ns, nc)
        if kind != RewardKind.CHANGE_ONLY:
            assert intrinsic_reward(kind, ns + 1, nc) < r
        if kind != RewardKind.COUNT_ONLY:
            assert intrinsic_reward(kind, ns, nc + 1) < r


@given(st.integers(2, 500), st.data())
def test_cbet_is_flat_along_antidiagonals(total, data):
    ns = data.draw(st.integers(1, total - 1))
    assert intrinsic_reward(RewardKind.CBET, ns, total - ns) == 1 / total


def test_weighted_sum_prefers_imbalanced_pairs():
    assert intrinsic_reward(RewardKind.CBET, 1, 9) == intrinsic_reward(RewardKind.CBET, 5, 5)
    assert intrinsic_reward(RewardKind.WEIGHTED_SUM, 1, 9) > intrinsic_reward(
        RewardKind.WEIGHTED_SUM, 5, 5
    )


def test_trend_edge_cases():
    assert reward_trend([]) == []
    assert reward_trend([0.2] * 5000, 1000) == pytest.approx([0.2] * 5, abs=1e-15)
    assert reward_trend([1.0, 3.0], 10) == [2.0]
    steps = [IntrinsicStep(1, 1, 0.5, 0.0025)] * 4
    assert reward_trend(steps, 2) == [0.5, 0.5]
    assert reward_trend(range(10), 4, stride=2) == [1.5, 3.5, 5.5, 7.5]


def test_no_reset_loop_decays_as_inverse_sqrt():
    # two alternating states: after t steps each has been entered about t/2 times
    r = loop_rewards(RewardSpec(RewardKind.COUNT_ONLY), ResetPolicy(ResetMode.NONE), 4000, None)
    t = np.arange(1, 4001)
    expected = 1 / np.sqrt((t + 1) // 2 + (t % 2 == 0))
    assert np.allclose(r, expected)
    assert r[3999] * math.sqrt(4000) == pytest.approx(math.sqrt(2), rel=1e-3)


def test_random_resets_keep_loop_rewards_alive():
    rng = np.random.default_rng(0)
    spec = RewardSpec(RewardKind.CBET)
    r = loop_rewards(spec, ResetPolicy(ResetMode.RANDOM, 0.001), 200_000, rng)
    trend = reward_trend(r, 10_000)
    # floor of order 1 / (2 * mean steps between resets), here 1 / 2000
    assert min(trend) > 1 / (2 * 1000)
    none = loop_rewards(spec, ResetPolicy(ResetMode.NONE), 200_000, None)
    assert reward_trend(none, 10_000)[-1] < min(trend)
