import itertools
import random
from fractions import Fraction

import pytest

from shardgame.game import (
    C,
    D,
    CostParams,
    EpochInstance,
    GameError,
    NetworkShape,
    RewardParams,
    Scheme,
    StrategyProfile,
    block_committed,
    optional_cost,
    outcome,
    payoff,
    payoff_fair,
    payoff_uniform,
    shard_success,
    total_cost,
    total_fees,
)

from conftest import Oracle, sample_instance, sample_money, sample_shape


@pytest.mark.parametrize(
    "cf, cv, tx, expected",
    [(0, 0, 100, 0), (5, 0.05, 1000, 55), (5, 0.05, 0, 5)],
)
def test_optional_cost(cf, cv, tx, expected):
    assert optional_cost(CostParams(10, cf, cv), tx) == pytest.approx(expected)


def test_total_cost_by_strategy():
    costs = CostParams(10, 5, 0.05)
    assert total_cost(costs, 1000, C) == pytest.approx(65)
    assert total_cost(costs, 1000, D) == 10
    assert total_cost(CostParams(0, 0, 0), 777, C) == 0


def test_shard_success_counts_only_aligned():
    shape = NetworkShape((3,), (2,))
    inst = EpochInstance.homogeneous(shape, 10)
    assert shard_success(inst, StrategyProfile.from_string(shape, "CCD"), 0)
    assert not shard_success(inst, StrategyProfile.from_string(shape, "CDD"), 0)

    big = NetworkShape((100,), (51,))
    aligned = [i >= 8 for i in range(100)]
    tx = [50 if a else 60 for a in aligned]
    inst = EpochInstance(big, tuple(tx), (50,), tuple(aligned))
    profile = StrategyProfile(big, tuple(C if i < 51 else D for i in range(100)))
    assert not shard_success(inst, profile, 0)


def test_all_defect_pays_mandatory_cost_only():
    rng = random.Random(3)
    for _ in range(50):
        shape = sample_shape(rng)
        inst = sample_instance(rng, shape)
        costs, rewards = sample_money(rng)
        profile = StrategyProfile.all_defect(shape)
        for scheme in (Scheme.UNIFORM, Scheme.FAIR):
            out = outcome(inst, profile, costs, rewards, scheme)
            assert all(u == -costs.mandatory_cost for u in out.utility)
            assert not out.block_committed


def test_lone_cooperator_single_processor_game():
    shape = NetworkShape((1,), (1,))
    inst = EpochInstance.homogeneous(shape, 0)
    got = payoff_uniform(inst, StrategyProfile.all_cooperate(shape), CostParams(10, 5, 0), RewardParams(100, 0), 0)
    assert got == 85


def test_uniform_split_includes_defectors():
    shape = NetworkShape((3,), (2,))
    inst = EpochInstance.homogeneous(shape, 30)
    costs, rewards = CostParams(10, 5, 0.1), RewardParams(30, 1)
    profile = StrategyProfile.from_string(shape, "CCD")
    assert payoff_uniform(inst, profile, costs, rewards, 0) == pytest.approx(2)
    assert payoff_uniform(inst, profile, costs, rewards, 2) == pytest.approx(10)


def test_fair_split_and_failure():
    shape = NetworkShape((3,), (2,))
    inst = EpochInstance.homogeneous(shape, 30)
    costs, rewards = CostParams(10, 5, 0.1), RewardParams(30, 1)
    profile = StrategyProfile.from_string(shape, "CCD")
    assert payoff_fair(inst, profile, costs, rewards, 0) == pytest.approx(12)
    assert payoff_fair(inst, profile, costs, rewards, 2) == -10
    lone = StrategyProfile.from_string(shape, "CDD")
    assert not block_committed(inst, lone)
    assert payoff_fair(inst, lone, costs, rewards, 0) == pytest.approx(-18)


def test_total_fees():
    shape = NetworkShape((1, 1, 1), (1, 1, 1))
    inst = EpochInstance(shape, (10, 20, 30), (10, 20, 30), (True,) * 3)
    assert total_fees(inst, RewardParams(0, 1)) == 60
    assert total_fees(inst, RewardParams(0, 0)) == 0


def test_ic_has_no_closed_form_payoff():
    shape = NetworkShape((1,), (1,))
    inst = EpochInstance.homogeneous(shape, 1)
    with pytest.raises(GameError):
        payoff(inst, StrategyProfile.all_defect(shape), CostParams(1, 1, 1), RewardParams(1, 1), 0, Scheme.INCENTIVE_COMPATIBLE)


def test_payoffs_match_oracle_on_random_instances():
    rng = random.Random(11)
    for _ in range(150):
        shape = sample_shape(rng, max_n=8)
        inst = sample_instance(rng, shape)
        costs, rewards = sample_money(rng)
        oracle = Oracle(inst, costs, rewards)
        for mask in rng.sample(range(1 << shape.num_processors), min(8, 1 << shape.num_processors)):
            profile = StrategyProfile.from_mask(shape, mask)
            coop = [s is C for s in profile.strategies]
            for i in range(shape.num_processors):
                assert payoff_uniform(inst, profile, costs, rewards, i) == pytest.approx(oracle.uniform(coop, i), rel=1e-12, abs=1e-9)
                assert payoff_fair(inst, profile, costs, rewards, i) == pytest.approx(oracle.fair(coop, i), rel=1e-12, abs=1e-9)


def test_exact_arithmetic_with_fractions():
    shape = NetworkShape((2, 2), (2, 1))
    inst = EpochInstance(shape, (7, 7, 3, 5), (7, 3), (True, True, True, False))
    costs = CostParams(Fraction(1, 3), Fraction(2, 7), Fraction(1, 11))
    rewards = RewardParams(Fraction(10, 3), Fraction(1, 9))
    profile = StrategyProfile.from_string(shape, "CC|CC")
    got = payoff_fair(inst, profile, costs, rewards, 3)
    expected = Fraction(10, 3) / 4 + Fraction(1, 9) * 3 / 2 - Fraction(1, 3) - Fraction(2, 7) - 5 * Fraction(1, 11)
    assert got == expected


def test_profile_parsing_and_masks():
    shape = NetworkShape((2, 3), (1, 2))
    profile = StrategyProfile.from_string(shape, "CD|DCC")
    assert str(profile) == "CD|DCC"
    assert profile.cooperator_counts() == (1, 2)
    assert StrategyProfile.from_mask(shape, profile.to_mask()) == profile
    for mask in range(1 << 5):
        assert StrategyProfile.from_mask(shape, mask).to_mask() == mask
    with pytest.raises(GameError):
        StrategyProfile.from_string(shape, "CDX")


@pytest.mark.parametrize(
    "sizes, taus",
    [((), ()), ((3,), (4,)), ((3,), (0,)), ((2, 2), (1,))],
)
def test_bad_shapes_rejected(sizes, taus):
    with pytest.raises(GameError):
        NetworkShape(sizes, taus)


def test_aligned_processor_must_hold_consensus_count():
    shape = NetworkShape((2,), (1,))
    with pytest.raises(GameError):
        EpochInstance(shape, (5, 6), (5,), (True, True))
    EpochInstance(shape, (5, 6), (5,), (True, False))


def test_contiguous_membership():
    shape = NetworkShape((2, 3, 1), (1, 1, 1))
    assert [list(shape.members(j)) for j in range(3)] == [[0, 1], [2, 3, 4], [5]]
    assert [shape.shard_of(i) for i in range(6)] == list(shape.shard_index())
    for j, i in itertools.product(range(3), range(6)):
        assert (i in shape.members(j)) == (shape.shard_of(i) == j)
