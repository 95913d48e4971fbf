"""Shared samplers and an independent payoff oracle.

The oracle works on plain lists and never imports the package's payoff code,
so agreement with it is meaningful.
"""

from __future__ import annotations

import math
import random

import pytest

from shardgame.game import CostParams, EpochInstance, NetworkShape, RewardParams


def log_uniform(rng: random.Random, lo: float = 1e-3, hi: float = 1e4) -> float:
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def sample_money(rng: random.Random) -> tuple[CostParams, RewardParams]:
    costs = CostParams(log_uniform(rng), log_uniform(rng), log_uniform(rng))
    rewards = RewardParams(log_uniform(rng), log_uniform(rng))
    return costs, rewards


def sample_shape(rng: random.Random, max_n: int = 12, max_shards: int = 3) -> NetworkShape:
    k = rng.randint(1, max_shards)
    budget = max_n
    sizes = []
    for j in range(k):
        top = budget - (k - j - 1)
        n = rng.randint(1, max(1, min(top, max_n // k + 2)))
        sizes.append(n)
        budget -= n
    taus = [rng.randint(1, n) for n in sizes]
    return NetworkShape(tuple(sizes), tuple(taus))


def sample_instance(
    rng: random.Random, shape: NetworkShape, max_tx: int = 200, aligned_p: float = 0.75
) -> EpochInstance:
    ys = [rng.randint(0, max_tx) for _ in range(shape.num_shards)]
    aligned, tx = [], []
    for j in shape.shard_index():
        a = rng.random() < aligned_p
        aligned.append(a)
        tx.append(ys[j] if a else rng.randint(0, max_tx))
    return EpochInstance(shape, tuple(tx), tuple(ys), tuple(aligned))


class Oracle:
    """Payoffs computed from first principles on raw lists."""

    def __init__(self, inst: EpochInstance, costs: CostParams, rewards: RewardParams):
        self.sizes = list(inst.shape.committee_sizes)
        self.taus = list(inst.shape.consensus_thresholds)
        self.tx = list(inst.tx_counts)
        self.y = list(inst.consensus_tx_counts)
        self.aligned = list(inst.view_aligned)
        self.cm = costs.mandatory_cost
        self.cf = costs.fixed_optional_cost
        self.cv = costs.per_tx_verification_cost
        self.br = rewards.block_reward
        self.r = rewards.per_tx_fee
        self.shard = []
        for j, n in enumerate(self.sizes):
            self.shard += [j] * n

    def committed(self, coop: list[bool]) -> bool:
        for j, tau in enumerate(self.taus):
            good = sum(1 for i, s in enumerate(self.shard) if s == j and coop[i] and self.aligned[i])
            if good < tau:
                return False
        return True

    def uniform(self, coop: list[bool], i: int) -> float:
        n = len(coop)
        spend = self.cm + (self.cf + self.tx[i] * self.cv if coop[i] else 0)
        if not self.committed(coop):
            return -spend
        return (self.br + self.r * sum(self.y)) / n - spend

    def fair(self, coop: list[bool], i: int) -> float:
        if not coop[i]:
            return -self.cm
        spend = self.cm + self.cf + self.tx[i] * self.cv
        if not self.committed(coop):
            return -spend
        j = self.shard[i]
        l = sum(1 for q, s in enumerate(self.shard) if s == j and coop[q])
        k = len(self.sizes)
        return self.br / (k * l) + self.r * self.y[j] / l - spend

    def is_nash(self, coop: list[bool], scheme: str) -> bool:
        u = self.uniform if scheme == "uniform" else self.fair
        for i in range(len(coop)):
            other = list(coop)
            other[i] = not other[i]
            if u(other, i) > u(coop, i):
                return False
        return True


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240917)


def targeted_rewards(rng: random.Random, inst: EpochInstance, costs: CostParams, rewards: RewardParams) -> RewardParams:
    """Block reward drawn between the break-even points at tau and tau + 1 cooperators of a random shard.

    Purely log-uniform draws almost never land in that band, which leaves
    exact-threshold cooperative profiles untested.
    """
    shape = inst.shape
    k = shape.num_shards
    j = rng.randrange(k)
    tau, y = shape.consensus_thresholds[j], inst.consensus_tx_counts[j]
    spend = costs.fixed_optional_cost + y * costs.per_tx_verification_cost
    lo = max(0.0, k * (tau * spend - rewards.per_tx_fee * y))
    hi = max(0.0, k * ((tau + 1) * spend - rewards.per_tx_fee * y))
    return RewardParams(rng.uniform(lo, hi), rewards.per_tx_fee)
