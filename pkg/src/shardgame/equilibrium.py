"""Threshold formulas, unilateral deviations and pure Nash equilibria."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .game import (
    C,
    D,
    CostParams,
    EpochInstance,
    RewardParams,
    Scheme,
    Strategy,
    StrategyProfile,
    block_committed,
    payoff,
    aligned_cooperators,
)

MAX_ENUMERATION_PROCESSORS = 20
_CHUNK = 1 << 14


class SizeGuardError(ValueError):
    """Exhaustive enumeration requested on too many processors."""


class UndefinedThreshold(ArithmeticError):
    """The divergent-view threshold has a zero verification cost in its denominator."""

    def __init__(self, numerator: float):
        super().__init__("divergent-view threshold undefined: per-transaction verification cost is zero")
        self.numerator = numerator


class Sign(enum.Enum):
    POSITIVE = 1
    ZERO = 0
    NEGATIVE = -1

    @classmethod
    def of(cls, value: float) -> Sign:
        return cls.POSITIVE if value > 0 else cls.NEGATIVE if value < 0 else cls.ZERO


@dataclass(frozen=True, slots=True)
class Thresholds:
    aligned: float
    divergent: float | None
    aligned_sign: Sign


def aligned_threshold(costs: CostParams, rewards: RewardParams, k: int, l_j: int) -> float:
    """Transaction count an aligned cooperator must exceed to break even.

    A zero denominator maps to +inf when the fixed cost outweighs the block
    reward share and -inf otherwise.
    """
    if k < 1 or l_j < 1:
        raise ValueError("k and l_j must be >= 1")
    numerator = costs.fixed_optional_cost - rewards.block_reward / (k * l_j)
    denominator = rewards.per_tx_fee / l_j - costs.per_tx_verification_cost
    if denominator == 0:
        return math.inf if numerator > 0 else -math.inf
    return numerator / denominator


def aligned_threshold_sign(costs: CostParams, rewards: RewardParams, l_j: int) -> Sign:
    return Sign.of(rewards.per_tx_fee / l_j - costs.per_tx_verification_cost)


def divergent_threshold_numerator(costs: CostParams, rewards: RewardParams, k: int, l_j: int, y_size: int) -> float:
    return rewards.block_reward / (k * l_j) + rewards.per_tx_fee * y_size / l_j - costs.fixed_optional_cost


def divergent_threshold(costs: CostParams, rewards: RewardParams, k: int, l_j: int, y_size: int) -> float:
    """Transaction count a divergent-view cooperator must stay below."""
    if k < 1 or l_j < 1:
        raise ValueError("k and l_j must be >= 1")
    numerator = divergent_threshold_numerator(costs, rewards, k, l_j, y_size)
    if costs.per_tx_verification_cost == 0:
        raise UndefinedThreshold(numerator)
    return numerator / costs.per_tx_verification_cost


def thresholds(costs: CostParams, rewards: RewardParams, k: int, l_j: int, y_size: int) -> Thresholds:
    try:
        t2: float | None = divergent_threshold(costs, rewards, k, l_j, y_size)
    except UndefinedThreshold:
        t2 = None
    return Thresholds(aligned_threshold(costs, rewards, k, l_j), t2, aligned_threshold_sign(costs, rewards, l_j))


@dataclass(frozen=True, slots=True)
class DeviationReport:
    processor: int
    current_strategy: Strategy
    current_utility: float
    deviation_utility: float

    @property
    def profitable(self) -> bool:
        return self.deviation_utility > self.current_utility

    @property
    def gain(self) -> float:
        return self.deviation_utility - self.current_utility


@dataclass(frozen=True, slots=True)
class NashCertificate:
    profile: StrategyProfile
    is_nash: bool
    witnesses: tuple[DeviationReport, ...]


def unilateral_deviation(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
    processor: int,
    scheme: Scheme,
) -> DeviationReport:
    if not 0 <= processor < instance.num_processors:
        raise IndexError(f"processor {processor} out of range")
    current = payoff(instance, profile, costs, rewards, processor, scheme)
    deviated = payoff(instance, profile.flipped(processor), costs, rewards, processor, scheme)
    return DeviationReport(processor, profile.strategies[processor], current, deviated)


def is_nash(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
    scheme: Scheme,
) -> NashCertificate:
    reports = (
        unilateral_deviation(instance, profile, costs, rewards, i, scheme) for i in range(instance.num_processors)
    )
    witnesses = tuple(r for r in reports if r.profitable)
    return NashCertificate(profile, not witnesses, witnesses)


def _profitable_flips(instance: EpochInstance, costs: CostParams, rewards: RewardParams, scheme: Scheme, masks):
    """Boolean matrix (profiles x processors): flipping that processor pays strictly.

    Same arithmetic, in the same order, as the scalar payoffs in ``game``.
    """
    shape = instance.shape
    n, k = shape.num_processors, shape.num_shards
    shard = np.asarray(shape.shard_index())
    aligned = np.asarray(instance.view_aligned)
    tx = np.asarray(instance.tx_counts, dtype=np.int64)
    y = np.asarray(instance.consensus_tx_counts, dtype=np.int64)
    tau = np.asarray(shape.consensus_thresholds)
    bits = np.arange(n, dtype=np.int64)

    coop = (masks[:, None] >> bits) & 1 == 1  # (M, n)
    onehot = shard[:, None] == np.arange(k)  # (n, k)
    l = coop.astype(np.int64) @ onehot.astype(np.int64)  # (M, k)
    a = (coop & aligned).astype(np.int64) @ onehot.astype(np.int64)
    ok = a >= tau
    failing = (~ok).sum(axis=1)  # (M,)

    own_l = l[:, shard]
    own_a = a[:, shard]
    own_ok = ok[:, shard]
    # Block status with each processor flipped; only its own shard can change.
    other_fail = failing[:, None] - (~own_ok)
    flip_a = own_a + np.where(coop, -1, 1) * aligned
    flip_block = (flip_a >= tau[shard]) & (other_fail == 0)
    block = (failing == 0)[:, None]

    cm = costs.mandatory_cost
    cost_c = cm + (costs.fixed_optional_cost + tx * costs.per_tx_verification_cost)

    if scheme is Scheme.UNIFORM:
        share = (rewards.block_reward + rewards.per_tx_fee * int(y.sum())) / n
        u_c_now = np.where(block, share - cost_c, -cost_c)
        u_d_now = np.where(block, share - cm, -cm)
        u_c_flip = np.where(flip_block, share - cost_c, -cost_c)
        u_d_flip = np.where(flip_block, share - cm, -cm)
        current = np.where(coop, u_c_now, u_d_now)
        deviated = np.where(coop, u_d_flip, u_c_flip)
    elif scheme is Scheme.FAIR:
        yi = y[shard]
        br, r = rewards.block_reward, rewards.per_tx_fee
        with np.errstate(divide="ignore", invalid="ignore"):
            now_share = br / (k * own_l) + r * yi / own_l
            join_share = br / (k * (own_l + 1)) + r * yi / (own_l + 1)
        current = np.where(coop, np.where(block, now_share - cost_c, -cost_c), -cm)
        deviated = np.where(coop, -cm, np.where(flip_block, join_share - cost_c, -cost_c))
    else:
        raise ValueError(f"enumeration supports uniform and fair schemes, not {scheme.value}")
    return deviated > current


def enumerate_nash(
    instance: EpochInstance,
    costs: CostParams,
    rewards: RewardParams,
    scheme: Scheme,
    max_processors: int = MAX_ENUMERATION_PROCESSORS,
) -> list[NashCertificate]:
    """All pure equilibria, ordered by cooperation bitmask (bit i = processor i cooperates)."""
    n = instance.num_processors
    if n > max_processors:
        raise SizeGuardError(f"{n} processors exceeds the enumeration limit of {max_processors}")
    found: list[NashCertificate] = []
    total = 1 << n
    for start in range(0, total, _CHUNK):
        masks = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        stable = ~_profitable_flips(instance, costs, rewards, scheme, masks).any(axis=1)
        for mask in masks[stable].tolist():
            found.append(NashCertificate(StrategyProfile.from_mask(instance.shape, mask), True, ()))
    return found


@dataclass(frozen=True, slots=True)
class CooperationCheck:
    """Sufficient conditions for a cooperative equilibrium under fair sharing.

    ``shard_ok[j]``: shard j reaches consensus with its aligned cooperators.
    ``processor_ok[i]``: aligned cooperators break even, divergent cooperators
    stay under the second threshold, and no defector gains by joining.
    """

    shard_ok: tuple[bool, ...]
    processor_ok: tuple[bool, ...]

    @property
    def overall(self) -> bool:
        return all(self.shard_ok) and all(self.processor_ok)

    def __bool__(self) -> bool:
        return self.overall


def _fair_gain(costs: CostParams, rewards: RewardParams, k: int, l: int, reward_tx: int, own_tx: int) -> float:
    return (
        rewards.block_reward / (k * l)
        + rewards.per_tx_fee * reward_tx / l
        - costs.fixed_optional_cost
        - own_tx * costs.per_tx_verification_cost
    )


def _below_divergent(costs: CostParams, rewards: RewardParams, k: int, l: int, y_size: int, tx: int) -> bool:
    try:
        return tx < divergent_threshold(costs, rewards, k, l, y_size)
    except UndefinedThreshold as exc:
        return exc.numerator >= 0


def check_cooperation_conditions(
    instance: EpochInstance,
    profile: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
) -> CooperationCheck:
    shape = instance.shape
    k = shape.num_shards
    shard_ok = tuple(
        aligned_cooperators(instance, profile, j) >= shape.consensus_thresholds[j] for j in range(k)
    )
    processor_ok: list[bool] = []
    for i, j in enumerate(shape.shard_index()):
        l = profile.shard_cooperator_count(j)
        x, y = instance.tx_counts[i], instance.consensus_tx_counts[j]
        if profile.strategies[i] is C:
            if instance.view_aligned[i]:
                ok = _fair_gain(costs, rewards, k, l, x, x) >= 0
            else:
                ok = _below_divergent(costs, rewards, k, l, y, x)
        else:
            # joining would make the group one larger
            ok = _fair_gain(costs, rewards, k, l + 1, y, x) <= 0
        processor_ok.append(ok)
    return CooperationCheck(shard_ok, tuple(processor_ok))


def is_minimal_consensus_profile(instance: EpochInstance, profile: StrategyProfile) -> bool:
    """Exactly threshold-many cooperators per shard, all holding the consensus view."""
    shape = instance.shape
    return block_committed(instance, profile) and all(
        profile.shard_cooperator_count(j) == shape.consensus_thresholds[j]
        == aligned_cooperators(instance, profile, j)
        for j in range(shape.num_shards)
    )


__all__ = [
    "C",
    "D",
    "DeviationReport",
    "MAX_ENUMERATION_PROCESSORS",
    "NashCertificate",
    "Sign",
    "SizeGuardError",
    "CooperationCheck",
    "Thresholds",
    "UndefinedThreshold",
    "check_cooperation_conditions",
    "enumerate_nash",
    "is_nash",
    "is_minimal_consensus_profile",
    "aligned_threshold",
    "divergent_threshold",
    "thresholds",
    "unilateral_deviation",
]
