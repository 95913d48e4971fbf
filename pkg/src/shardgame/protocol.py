"""Coordinator-driven reward sharing with punishment of non-compliant cooperators.

Each shard's processors submit a digest of their transaction view.  The
shard coordinator finds the largest group of identical views, announces it
as the cooperative set together with both break-even thresholds, and each
processor derives its recommended move from the announcement.  Settlement
pays compliant recommended cooperators from the block and fee pool and
nothing to anyone else.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .equilibrium import Sign, aligned_threshold, aligned_threshold_sign, divergent_threshold, UndefinedThreshold
from .game import (
    C,
    D,
    CostParams,
    EpochInstance,
    RewardParams,
    Strategy,
    StrategyProfile,
    fair_share,
    shard_success,
    total_cost,
)

DIGEST_ALGORITHM = "sha256"
DIGEST_SIZE = hashlib.new(DIGEST_ALGORITHM).digest_size
EMPTY_VIEW = b"\x00empty-view"


class MalformedShardError(ValueError):
    """Coordinator received no submissions for a shard."""


class Verdict(enum.Enum):
    ALL_DEFECT = "All-D"
    PROCEED = "Proceed"


class Reason(enum.Enum):
    BELOW_ALIGNED_THRESHOLD = "below-aligned-threshold"
    ABOVE_DIVERGENT_THRESHOLD = "above-divergent-threshold"
    ALL_DEFECT_VERDICT = "all-defect-verdict"
    IN_COOPERATIVE_SET = "in-cooperative-set"
    NOT_SELECTED = "not-selected"
    DIVERGENT_RECRUIT = "divergent-recruit"


def encode_view(tx_count: int, content_id: str) -> bytes:
    """Length-prefixed encoding of a transaction view; every empty view maps to one sentinel."""
    if tx_count < 0:
        raise ValueError("tx_count must be nonnegative")
    if tx_count == 0:
        return EMPTY_VIEW
    content = content_id.encode("utf-8")
    return struct.pack(">Q", tx_count) + struct.pack(">I", len(content)) + content


@dataclass(frozen=True, slots=True)
class ViewDigest:
    processor: int
    digest: bytes
    tx_count: int


def submit_view_digest(processor: int, tx_count: int, content_id: str) -> ViewDigest:
    digest = hashlib.new(DIGEST_ALGORITHM, encode_view(tx_count, content_id)).digest()
    return ViewDigest(processor, digest, tx_count)


def view_content_id(instance: EpochInstance, processor: int) -> str:
    """Aligned processors share their shard's consensus view; every divergent view is distinct."""
    shard = instance.shape.shard_of(processor)
    if instance.view_aligned[processor]:
        return f"shard-{shard}/consensus"
    return f"shard-{shard}/divergent-{processor}"


def shard_digests(instance: EpochInstance, shard: int) -> list[ViewDigest]:
    return [
        submit_view_digest(i, instance.tx_counts[i], view_content_id(instance, i))
        for i in instance.shape.members(shard)
    ]


@dataclass(frozen=True, slots=True)
class Announcement:
    shard: int
    verdict: Verdict
    cooperative_set: tuple[int, ...]
    l_j: int
    aligned_threshold: float | None = None
    divergent_threshold: float | None = None
    aligned_sign: Sign = Sign.POSITIVE
    y_size: int = 0

    def __post_init__(self) -> None:
        if self.verdict is Verdict.PROCEED and len(self.cooperative_set) != self.l_j:
            raise ValueError("cooperative set size must equal l_j")
        if self.verdict is Verdict.ALL_DEFECT and self.cooperative_set:
            raise ValueError("an All-D verdict carries no cooperative set")


def coordinate(
    shard: int,
    digests: Sequence[ViewDigest],
    tau: int,
    k: int,
    costs: CostParams,
    rewards: RewardParams,
    y_size_estimate: int | None = None,
) -> Announcement:
    """Largest group of identical views becomes the cooperative set.

    Ties go to the lexicographically smallest digest.  Without an explicit
    estimate, the group's own reported transaction count stands in for the
    shard's consensus output size.
    """
    if not digests:
        raise MalformedShardError(f"shard {shard}: no digests submitted")
    groups: dict[bytes, list[ViewDigest]] = defaultdict(list)
    for d in digests:
        groups[d.digest].append(d)
    best = min(groups, key=lambda dg: (-len(groups[dg]), dg))
    group = groups[best]
    l_j = len(group)
    if l_j < tau:
        return Announcement(shard, Verdict.ALL_DEFECT, (), l_j)
    y_size = group[0].tx_count if y_size_estimate is None else y_size_estimate
    try:
        divergent = divergent_threshold(costs, rewards, k, l_j, y_size)
    except UndefinedThreshold as exc:
        divergent = math.inf if exc.numerator >= 0 else -math.inf
    return Announcement(
        shard,
        Verdict.PROCEED,
        tuple(sorted(d.processor for d in group)),
        l_j,
        aligned_threshold(costs, rewards, k, l_j),
        divergent,
        aligned_threshold_sign(costs, rewards, l_j),
        y_size,
    )


@dataclass(frozen=True, slots=True)
class ParticipationDecision:
    processor: int
    decision: Strategy
    reason: Reason

    def __post_init__(self) -> None:
        cooperative = self.reason in (Reason.IN_COOPERATIVE_SET, Reason.DIVERGENT_RECRUIT)
        if cooperative != (self.decision is C):
            raise ValueError(f"reason {self.reason.value} inconsistent with {self.decision.value}")


def _fails_aligned_threshold(tx_count: int, announcement: Announcement) -> bool:
    # the threshold inequality flips when the per-transaction margin is negative
    theta = announcement.aligned_threshold
    if announcement.aligned_sign is Sign.NEGATIVE:
        return tx_count >= theta
    return tx_count <= theta


def participate(
    processor: int,
    announcement: Announcement,
    tx_count: int,
    include_divergent: bool = False,
) -> ParticipationDecision:
    """Recommended move for one processor.

    With ``include_divergent`` a processor outside the cooperative set that is
    under the divergent threshold is recruited instead of left out.
    """
    if announcement.verdict is Verdict.ALL_DEFECT:
        return ParticipationDecision(processor, D, Reason.ALL_DEFECT_VERDICT)
    if processor in announcement.cooperative_set:
        if _fails_aligned_threshold(tx_count, announcement):
            return ParticipationDecision(processor, D, Reason.BELOW_ALIGNED_THRESHOLD)
        return ParticipationDecision(processor, C, Reason.IN_COOPERATIVE_SET)
    if tx_count >= announcement.divergent_threshold:
        return ParticipationDecision(processor, D, Reason.ABOVE_DIVERGENT_THRESHOLD)
    if include_divergent:
        return ParticipationDecision(processor, C, Reason.DIVERGENT_RECRUIT)
    return ParticipationDecision(processor, D, Reason.NOT_SELECTED)


@dataclass(frozen=True, slots=True)
class RewardLedger:
    rewards: tuple[float, ...]
    followed_recommendation: tuple[bool, ...]
    recommended: tuple[Strategy, ...]
    block_committed: bool

    @property
    def total(self) -> float:
        return sum(self.rewards)


def settle(
    instance: EpochInstance,
    announcements: Sequence[Announcement],
    decisions: Sequence[ParticipationDecision],
    actual: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
) -> RewardLedger:
    """Pay compliant recommended cooperators; punish the rest with zero reward.

    ``costs`` is accepted for symmetry with the payoff functions; the ledger
    records rewards only and costs are charged by the caller.
    """
    shape = instance.shape
    n, k = shape.num_processors, shape.num_shards
    if len(decisions) != n:
        raise ValueError("need one decision per processor")
    if len(announcements) != k:
        raise ValueError("need one announcement per shard")
    recommended = tuple(d.decision for d in sorted(decisions, key=lambda d: d.processor))
    followed = tuple(r is s for r, s in zip(recommended, actual.strategies))
    committed = all(shard_success(instance, actual, j) for j in range(k))
    paid = [recommended[i] is C and actual.strategies[i] is C for i in range(n)]
    payout = [0.0] * n
    if committed:
        for j in range(k):
            members = [i for i in shape.members(j) if paid[i]]
            if not members:
                continue
            share = fair_share(rewards, k, len(members), instance.consensus_tx_counts[j])
            for i in members:
                payout[i] = share
    return RewardLedger(tuple(payout), followed, recommended, committed)


def settled_utilities(
    instance: EpochInstance, ledger: RewardLedger, actual: StrategyProfile, costs: CostParams
) -> tuple[float, ...]:
    return tuple(
        reward - total_cost(costs, instance.tx_counts[i], actual.strategies[i])
        for i, reward in enumerate(ledger.rewards)
    )


@dataclass(frozen=True, slots=True)
class ProtocolRun:
    """Announcements and recommendations for one epoch."""

    digests: tuple[tuple[ViewDigest, ...], ...]
    announcements: tuple[Announcement, ...]
    decisions: tuple[ParticipationDecision, ...]

    def recommended_profile(self, instance: EpochInstance) -> StrategyProfile:
        return StrategyProfile(instance.shape, tuple(d.decision for d in self.decisions))


def recommend(
    instance: EpochInstance,
    costs: CostParams,
    rewards: RewardParams,
    include_divergent: bool = False,
) -> ProtocolRun:
    """Digest submission, coordination and participation for every shard."""
    shape = instance.shape
    all_digests = []
    announcements = []
    decisions: list[ParticipationDecision] = []
    for j in range(shape.num_shards):
        digests = shard_digests(instance, j)
        ann = coordinate(j, digests, shape.consensus_thresholds[j], shape.num_shards, costs, rewards)
        all_digests.append(tuple(digests))
        announcements.append(ann)
        decisions.extend(participate(i, ann, instance.tx_counts[i], include_divergent) for i in shape.members(j))
    return ProtocolRun(tuple(all_digests), tuple(announcements), tuple(decisions))


def settle_profile(
    instance: EpochInstance,
    run: ProtocolRun,
    actual: StrategyProfile,
    costs: CostParams,
    rewards: RewardParams,
) -> tuple[RewardLedger, tuple[float, ...]]:
    ledger = settle(instance, run.announcements, run.decisions, actual, costs, rewards)
    return ledger, settled_utilities(instance, ledger, actual, costs)


def disobedience_gains(
    instance: EpochInstance,
    run: ProtocolRun,
    costs: CostParams,
    rewards: RewardParams,
    processors: Iterable[int] | None = None,
) -> dict[int, float]:
    """Utility change for each processor that alone disobeys while everyone else complies."""
    compliant = run.recommended_profile(instance)
    _, base = settle_profile(instance, run, compliant, costs, rewards)
    gains = {}
    for i in processors if processors is not None else range(instance.num_processors):
        _, flipped = settle_profile(instance, run, compliant.flipped(i), costs, rewards)
        gains[i] = flipped[i] - base[i]
    return gains
