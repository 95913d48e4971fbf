"""Static one-epoch game played by the processors of a sharded blockchain.

Processors are numbered ``0..N-1`` and assigned to shards contiguously in
committee order, so shard ``j`` owns the half-open index range
``[offset(j), offset(j) + committee_sizes[j])``.

Money quantities are plain Python numbers.  Everything here is written with
ordinary arithmetic, so ``fractions.Fraction`` inputs give exact results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence


class Strategy(enum.Enum):
    COOPERATE = "C"
    DEFECT = "D"

    def flipped(self) -> Strategy:
        return Strategy.DEFECT if self is Strategy.COOPERATE else Strategy.COOPERATE


C = Strategy.COOPERATE
D = Strategy.DEFECT


class Scheme(enum.Enum):
    UNIFORM = "uniform"
    FAIR = "fair"
    INCENTIVE_COMPATIBLE = "ic"

    @classmethod
    def parse(cls, text: str) -> Scheme:
        aliases = {"incentive_compatible": "ic", "incentive-compatible": "ic"}
        return cls(aliases.get(text.strip().lower(), text.strip().lower()))


class GameError(ValueError):
    """Invalid game parameters or shape."""


@dataclass(frozen=True, slots=True)
class CostParams:
    mandatory_cost: float
    fixed_optional_cost: float
    per_tx_verification_cost: float

    def __post_init__(self) -> None:
        for name in ("mandatory_cost", "fixed_optional_cost", "per_tx_verification_cost"):
            if getattr(self, name) < 0:
                raise GameError(f"{name} must be >= 0")


@dataclass(frozen=True, slots=True)
class RewardParams:
    block_reward: float
    per_tx_fee: float

    def __post_init__(self) -> None:
        if self.block_reward < 0 or self.per_tx_fee < 0:
            raise GameError("block_reward and per_tx_fee must be >= 0")


@dataclass(frozen=True, slots=True)
class NetworkShape:
    committee_sizes: tuple[int, ...]
    consensus_thresholds: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "committee_sizes", tuple(int(n) for n in self.committee_sizes))
        object.__setattr__(self, "consensus_thresholds", tuple(int(t) for t in self.consensus_thresholds))
        if not self.committee_sizes:
            raise GameError("at least one shard is required")
        if len(self.consensus_thresholds) != len(self.committee_sizes):
            raise GameError("need one consensus threshold per shard")
        for j, (n, tau) in enumerate(zip(self.committee_sizes, self.consensus_thresholds)):
            if n < 1:
                raise GameError(f"shard {j}: committee size must be positive")
            if not 1 <= tau <= n:
                raise GameError(f"shard {j}: threshold {tau} outside [1, {n}]")

    @classmethod
    def uniform(cls, num_shards: int, committee_size: int, tau: int) -> NetworkShape:
        return cls((committee_size,) * num_shards, (tau,) * num_shards)

    @property
    def num_processors(self) -> int:
        return sum(self.committee_sizes)

    @property
    def num_shards(self) -> int:
        return len(self.committee_sizes)

    def offset(self, shard: int) -> int:
        return sum(self.committee_sizes[:shard])

    def members(self, shard: int) -> range:
        start = self.offset(shard)
        return range(start, start + self.committee_sizes[shard])

    def shard_of(self, processor: int) -> int:
        if not 0 <= processor < self.num_processors:
            raise IndexError(f"processor {processor} out of range")
        for j, n in enumerate(self.committee_sizes):
            if processor < n:
                return j
            processor -= n
        raise AssertionError("unreachable")

    def shard_index(self) -> tuple[int, ...]:
        return tuple(j for j, n in enumerate(self.committee_sizes) for _ in range(n))


@dataclass(frozen=True, slots=True)
class EpochInstance:
    """One epoch's network and transaction views.

    A processor is aligned when its received vector equals its shard's
    consensus output, which forces its transaction count to match.
    """

    shape: NetworkShape
    tx_counts: tuple[int, ...]
    consensus_tx_counts: tuple[int, ...]
    view_aligned: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tx_counts", tuple(int(x) for x in self.tx_counts))
        object.__setattr__(self, "consensus_tx_counts", tuple(int(y) for y in self.consensus_tx_counts))
        object.__setattr__(self, "view_aligned", tuple(bool(a) for a in self.view_aligned))
        n = self.shape.num_processors
        if len(self.tx_counts) != n or len(self.view_aligned) != n:
            raise GameError(f"need per-processor data for {n} processors")
        if len(self.consensus_tx_counts) != self.shape.num_shards:
            raise GameError("need one consensus transaction count per shard")
        if any(x < 0 for x in self.tx_counts) or any(y < 0 for y in self.consensus_tx_counts):
            raise GameError("transaction counts must be nonnegative")
        for i, j in enumerate(self.shape.shard_index()):
            if self.view_aligned[i] and self.tx_counts[i] != self.consensus_tx_counts[j]:
                raise GameError(f"processor {i} is aligned but holds a different transaction count than shard {j}")

    @property
    def num_processors(self) -> int:
        return self.shape.num_processors

    @classmethod
    def homogeneous(
        cls, shape: NetworkShape, tx_count: int, aligned: Sequence[bool] | None = None
    ) -> EpochInstance:
        """Every shard outputs ``tx_count`` transactions; every processor sees that many."""
        n = shape.num_processors
        return cls(
            shape,
            (tx_count,) * n,
            (tx_count,) * shape.num_shards,
            tuple(aligned) if aligned is not None else (True,) * n,
        )


@dataclass(frozen=True, slots=True)
class StrategyProfile:
    shape: NetworkShape
    strategies: tuple[Strategy, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if len(self.strategies) != self.shape.num_processors:
            raise GameError("need one strategy per processor")

    @classmethod
    def all_defect(cls, shape: NetworkShape) -> StrategyProfile:
        return cls(shape, (D,) * shape.num_processors)

    @classmethod
    def all_cooperate(cls, shape: NetworkShape) -> StrategyProfile:
        return cls(shape, (C,) * shape.num_processors)

    @classmethod
    def from_string(cls, shape: NetworkShape, text: str) -> StrategyProfile:
        """Parse ``"CCD..."``; whitespace and ``|`` shard separators are ignored."""
        letters = [ch for ch in text.upper() if ch not in " |,\t"]
        try:
            return cls(shape, tuple(Strategy(ch) for ch in letters))
        except ValueError as exc:
            raise GameError(f"bad profile string {text!r}: {exc}") from None

    @classmethod
    def from_mask(cls, shape: NetworkShape, mask: int) -> StrategyProfile:
        """Bit ``i`` of ``mask`` set means processor ``i`` cooperates."""
        return cls(shape, tuple(C if mask >> i & 1 else D for i in range(shape.num_processors)))

    def to_mask(self) -> int:
        return sum(1 << i for i, s in enumerate(self.strategies) if s is C)

    def __str__(self) -> str:
        return "|".join(
            "".join(self.strategies[i].value for i in self.shape.members(j)) for j in range(self.shape.num_shards)
        )

    def cooperates(self, processor: int) -> bool:
        return self.strategies[processor] is C

    def cooperators(self, shard: int) -> list[int]:
        return [i for i in self.shape.members(shard) if self.strategies[i] is C]

    def defectors(self, shard: int) -> list[int]:
        return [i for i in self.shape.members(shard) if self.strategies[i] is D]

    def shard_cooperator_count(self, shard: int) -> int:
        return len(self.cooperators(shard))

    def cooperator_counts(self) -> tuple[int, ...]:
        return tuple(self.shard_cooperator_count(j) for j in range(self.shape.num_shards))

    @property
    def total_cooperators(self) -> int:
        return sum(1 for s in self.strategies if s is C)

    def with_strategy(self, processor: int, strategy: Strategy) -> StrategyProfile:
        strategies = list(self.strategies)
        strategies[processor] = strategy
        return StrategyProfile(self.shape, tuple(strategies))

    def flipped(self, processor: int) -> StrategyProfile:
        return self.with_strategy(processor, self.strategies[processor].flipped())


@dataclass(frozen=True, slots=True)
class EpochOutcome:
    profile: StrategyProfile
    shard_success: tuple[bool, ...]
    utility: tuple[float, ...]
    total_fees: float
    block_committed: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "block_committed", all(self.shard_success))

    @property
    def cooperation_ratio(self) -> float:
        return self.profile.total_cooperators / self.profile.shape.num_processors


def optional_cost(costs: CostParams, tx_count: int) -> float:
    return costs.fixed_optional_cost + tx_count * costs.per_tx_verification_cost


def total_cost(costs: CostParams, tx_count: int, strategy: Strategy) -> float:
    if strategy is C:
        return costs.mandatory_cost + optional_cost(costs, tx_count)
    return costs.mandatory_cost


def total_fees(instance: EpochInstance, rewards: RewardParams) -> float:
    return rewards.per_tx_fee * sum(instance.consensus_tx_counts)


def aligned_cooperators(instance: EpochInstance, profile: StrategyProfile, shard: int) -> int:
    return sum(1 for i in instance.shape.members(shard) if profile.strategies[i] is C and instance.view_aligned[i])


def shard_success(instance: EpochInstance, profile: StrategyProfile, shard: int) -> bool:
    """Only cooperators holding the consensus view count toward the threshold."""
    if not 0 <= shard < instance.shape.num_shards:
        raise IndexError(f"shard {shard} out of range")
    return aligned_cooperators(instance, profile, shard) >= instance.shape.consensus_thresholds[shard]


def block_committed(instance: EpochInstance, profile: StrategyProfile) -> bool:
    return all(shard_success(instance, profile, j) for j in range(instance.shape.num_shards))


def _cost_of(instance: EpochInstance, costs: CostParams, processor: int, strategy: Strategy) -> float:
    return total_cost(costs, instance.tx_counts[processor], strategy)


def payoff_uniform(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
    processor: int,
) -> float:
    """Everyone splits block reward plus fees equally, whatever they played."""
    strategy = profile.strategies[processor]
    cost = _cost_of(instance, costs, processor, strategy)
    if not block_committed(instance, profile):
        return -cost
    share = (rewards.block_reward + rewards.per_tx_fee * sum(instance.consensus_tx_counts)) / instance.num_processors
    return share - cost


def fair_share(rewards: RewardParams, num_shards: int, cooperators: int, y_size: int) -> float:
    """Per-cooperator benefit when a shard with ``cooperators`` members commits."""
    return rewards.block_reward / (num_shards * cooperators) + rewards.per_tx_fee * y_size / cooperators


def payoff_fair(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
    processor: int,
) -> float:
    """Only cooperators are paid; each shard's cut is split among its cooperators."""
    strategy = profile.strategies[processor]
    if strategy is D:
        return -costs.mandatory_cost
    cost = _cost_of(instance, costs, processor, strategy)
    if not block_committed(instance, profile):
        return -cost
    shape = instance.shape
    j = shape.shard_of(processor)
    share = fair_share(rewards, shape.num_shards, profile.shard_cooperator_count(j), instance.consensus_tx_counts[j])
    return share - cost


PAYOFFS = {Scheme.UNIFORM: payoff_uniform, Scheme.FAIR: payoff_fair}


def payoff(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
    processor: int,
    scheme: Scheme,
) -> float:
    try:
        fn = PAYOFFS[scheme]
    except KeyError:
        raise GameError(f"no closed-form payoff for scheme {scheme.value}; settle it through the protocol") from None
    return fn(instance, profile, costs, rewards, processor)


def outcome(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
    scheme: Scheme,
) -> EpochOutcome:
    successes = tuple(shard_success(instance, profile, j) for j in range(instance.shape.num_shards))
    utilities = tuple(payoff(instance, profile, costs, rewards, i, scheme) for i in range(instance.num_processors))
    return EpochOutcome(profile, successes, utilities, total_fees(instance, rewards))
