"""Randomised epochs, strategy dynamics and parameter sweeps.

Every epoch draws from its own generator seeded by
``SeedSequence([seed, sweep_index, iteration])``, so any single point or
epoch can be recomputed in isolation and results do not depend on how
work is split across processes.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import protocol
from .game import (
    C,
    D,
    CostParams,
    EpochInstance,
    EpochOutcome,
    GameError,
    NetworkShape,
    RewardParams,
    Scheme,
    StrategyProfile,
)

log = logging.getLogger(__name__)

MAX_FIXED_POINT_ROUNDS = 100
MAX_BEST_RESPONSE_ROUNDS = 1000
JITTER = 0.01


class ShapeError(GameError):
    """Configuration yields an impossible committee layout."""


class DynamicsDivergenceWarning(RuntimeWarning):
    """Best-response iteration hit its round limit without a fixed point."""


class Dynamics(enum.Enum):
    THRESHOLD = "threshold"
    BEST_RESPONSE = "best-response"

    @classmethod
    def parse(cls, text: str) -> Dynamics:
        return cls(text.strip().lower().replace("_", "-").replace("threshold-rule", "threshold"))


def consensus_threshold(committee_size: int, rule: str | float | int) -> int:
    """``"majority"`` (floor(n/2)+1), a fraction in (0, 1] rounded up, or an absolute count."""
    if isinstance(rule, str):
        if rule.strip().lower() != "majority":
            raise ShapeError(f"unknown tau rule {rule!r}")
        return committee_size // 2 + 1
    if isinstance(rule, float):
        if not 0 < rule <= 1:
            raise ShapeError("fractional tau rule must lie in (0, 1]")
        return max(1, math.ceil(rule * committee_size - 1e-12))
    if rule < 1:
        raise ShapeError("absolute tau must be >= 1")
    return rule


@dataclass(frozen=True, slots=True)
class SimConfig:
    target_n: int
    avg_tx: int
    costs: CostParams
    rewards: RewardParams
    committee_size: int = 100
    tau_rule: str | float | int = "majority"
    divergence_rate: float = 0.15
    scheme: Scheme = Scheme.FAIR
    dynamics: Dynamics = Dynamics.THRESHOLD
    iterations: int = 100
    seed: int = 0
    include_divergent: bool = False

    def __post_init__(self) -> None:
        if self.target_n < 1 or self.committee_size < 1:
            raise ShapeError("target_n and committee_size must be positive")
        if self.avg_tx < 0:
            raise ShapeError("avg_tx must be nonnegative")
        if not 0 <= self.divergence_rate <= 1:
            raise ShapeError("divergence_rate must lie in [0, 1]")
        if self.iterations < 1:
            raise ShapeError("iterations must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ShapeError("seed must be an unsigned 64-bit integer")
        if isinstance(self.tau_rule, int) and not isinstance(self.tau_rule, bool):
            if self.tau_rule > self.committee_size:
                raise ShapeError(f"tau {self.tau_rule} exceeds committee size {self.committee_size}")


SWEEPABLE = ("avg_tx", "block_reward", "num_processors")


@dataclass(frozen=True, slots=True)
class SweepSpec:
    varying: str
    values: tuple[float, ...]
    base: SimConfig

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if self.varying not in SWEEPABLE:
            raise ShapeError(f"cannot sweep {self.varying!r}; choose one of {', '.join(SWEEPABLE)}")
        if not self.values:
            raise ShapeError("sweep values must be nonempty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ShapeError("sweep values must be strictly increasing")

    def config_at(self, value: float) -> SimConfig:
        if self.varying == "avg_tx":
            return replace(self.base, avg_tx=int(value))
        if self.varying == "num_processors":
            return replace(self.base, target_n=int(value))
        return replace(self.base, rewards=replace(self.base.rewards, block_reward=value))


@dataclass(frozen=True, slots=True)
class AggregateResult:
    sweep_point: float
    mean_cooperation_ratio: float
    mean_defection_ratio: float
    mean_utility_cooperators: float
    mean_utility_defectors: float
    weighted_mean_utility: float
    block_commit_rate: float
    iterations: int
    diverged_epochs: int = 0
    failed: bool = False
    error: str | None = None


def epoch_rng(seed: int, sweep_index: int = 0, iteration: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, sweep_index, iteration]))


def _jitter(rng: np.random.Generator, value: float, size: int | None = None, minimum: int = 0):
    drawn = np.rint(rng.uniform(value * (1 - JITTER), value * (1 + JITTER), size=size)).astype(np.int64)
    return np.maximum(drawn, minimum)


def generate_epoch(config: SimConfig, rng: np.random.Generator) -> EpochInstance:
    """Jittered network and views; processors holding the consensus view see exactly its transactions."""
    k = max(1, round(config.target_n / config.committee_size))
    sizes = _jitter(rng, config.target_n / k, size=k, minimum=1)
    taus = [consensus_threshold(int(n), config.tau_rule) for n in sizes]
    for j, (n, tau) in enumerate(zip(sizes, taus)):
        if tau > n:
            raise ShapeError(f"shard {j}: committee of {n} cannot reach threshold {tau}")
    n_total = int(sizes.sum())
    y = _jitter(rng, config.avg_tx, size=k)
    aligned = rng.random(n_total) >= config.divergence_rate
    own = _jitter(rng, config.avg_tx, size=n_total)
    shard = np.repeat(np.arange(k), sizes)
    tx = np.where(aligned, y[shard], own)
    return EpochInstance(
        NetworkShape(tuple(sizes.tolist()), tuple(taus)),
        tuple(tx.tolist()),
        tuple(y.tolist()),
        tuple(aligned.tolist()),
    )


class _Epoch:
    """Array view of an instance for per-shard counting."""

    def __init__(self, instance: EpochInstance, costs: CostParams, rewards: RewardParams):
        shape = instance.shape
        self.instance = instance
        self.costs = costs
        self.rewards = rewards
        self.n = shape.num_processors
        self.k = shape.num_shards
        self.shard = np.asarray(shape.shard_index(), dtype=np.int64)
        self.aligned = np.asarray(instance.view_aligned, dtype=bool)
        self.tx = np.asarray(instance.tx_counts, dtype=np.int64)
        self.y = np.asarray(instance.consensus_tx_counts, dtype=np.int64)
        self.tau = np.asarray(shape.consensus_thresholds, dtype=np.int64)
        self.cost_c = costs.mandatory_cost + (costs.fixed_optional_cost + self.tx * costs.per_tx_verification_cost)
        self.uniform_share = (rewards.block_reward + rewards.per_tx_fee * int(self.y.sum())) / self.n

    def count(self, mask: np.ndarray) -> np.ndarray:
        return np.bincount(self.shard, weights=mask, minlength=self.k).astype(np.int64)

    def fair_share(self, cooperators: np.ndarray) -> np.ndarray:
        """Per-processor benefit given the cooperator count of its own shard (same op order as ``game``)."""
        br, r = self.rewards.block_reward, self.rewards.per_tx_fee
        with np.errstate(divide="ignore", invalid="ignore"):
            return br / (self.k * cooperators) + r * self.y[self.shard] / cooperators

    def shard_ok(self, coop: np.ndarray) -> np.ndarray:
        return self.count(coop & self.aligned) >= self.tau

    def utilities(self, coop: np.ndarray, scheme: Scheme, recommended: np.ndarray | None = None) -> np.ndarray:
        cm = self.costs.mandatory_cost
        block = bool(self.shard_ok(coop).all())
        cost = np.where(coop, self.cost_c, cm)
        if scheme is Scheme.UNIFORM:
            return self.uniform_share - cost if block else -cost
        if scheme is Scheme.FAIR:
            if not block:
                return np.where(coop, -self.cost_c, -cm)
            share = self.fair_share(self.count(coop)[self.shard])
            return np.where(coop, share - self.cost_c, -cm)
        paid = coop & recommended
        if not block:
            return 0.0 - cost
        share = self.fair_share(self.count(paid)[self.shard])
        return np.where(paid, share - self.cost_c, 0.0 - cost)

    def flip_utilities(
        self, coop: np.ndarray, scheme: Scheme, recommended: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Each processor's utility from cooperating and from defecting, others held fixed."""
        cm = self.costs.mandatory_cost
        s = self.shard
        ok = self.shard_ok(coop)
        other_fail = int((~ok).sum()) - (~ok)[s]
        a_others = self.count(coop & self.aligned)[s] - (coop & self.aligned)
        block_c = (a_others + self.aligned >= self.tau[s]) & (other_fail == 0)
        block_d = (a_others >= self.tau[s]) & (other_fail == 0)
        if scheme is Scheme.UNIFORM:
            u_c = np.where(block_c, self.uniform_share - self.cost_c, -self.cost_c)
            u_d = np.where(block_d, self.uniform_share - cm, -cm)
            return u_c, u_d
        u_d = np.full(self.n, -cm, dtype=float)
        if scheme is Scheme.FAIR:
            joined = self.count(coop)[s] - coop + 1
            u_c = np.where(block_c, self.fair_share(joined) - self.cost_c, -self.cost_c)
            return u_c, u_d
        paid = coop & recommended
        joined = self.count(paid)[s] - paid + 1
        u_c = np.where(block_c & recommended, self.fair_share(joined) - self.cost_c, -self.cost_c)
        return u_c, u_d


def _fair_fixed_point(ep: _Epoch) -> np.ndarray:
    """Cooperate iff profitable at the shard's estimated cooperator count.

    The estimate starts at the aligned head-count and is replaced by the
    number of processors who would cooperate at it, or zero when those
    cannot reach consensus.  Shards that do not settle within the round
    limit fall back to all-defect.
    """
    cm = ep.costs.mandatory_cost
    s = ep.shard
    estimate = ep.count(ep.aligned)

    def willing(est: np.ndarray) -> np.ndarray:
        share = ep.fair_share(est[s])
        return (est[s] >= ep.tau[s]) & (share - ep.cost_c > -cm)

    for _ in range(MAX_FIXED_POINT_ROUNDS):
        want = willing(estimate)
        nxt = np.where(ep.count(want & ep.aligned) >= ep.tau, ep.count(want), 0)
        if np.array_equal(nxt, estimate):
            return want
        estimate = nxt
    settled = nxt == estimate
    log.debug("fair fixed point unsettled in %d shard(s)", int((~settled).sum()))
    return willing(np.where(settled, estimate, 0))


def best_response(
    ep: _Epoch, scheme: Scheme, recommended: np.ndarray | None = None, max_rounds: int = MAX_BEST_RESPONSE_ROUNDS
) -> tuple[np.ndarray, bool, int]:
    """Synchronous best response from all-cooperate; ties go to defect."""
    coop = np.ones(ep.n, dtype=bool)
    for rounds in range(1, max_rounds + 1):
        u_c, u_d = ep.flip_utilities(coop, scheme, recommended)
        nxt = u_c > u_d
        if np.array_equal(nxt, coop):
            return coop, True, rounds
        coop = nxt
    warnings.warn(
        f"best response did not settle after {max_rounds} rounds", DynamicsDivergenceWarning, stacklevel=2
    )
    return coop, False, max_rounds


@dataclass(frozen=True, slots=True)
class Decision:
    profile: StrategyProfile
    converged: bool = True
    rounds: int = 0
    protocol_run: protocol.ProtocolRun | None = None


def _profile(instance: EpochInstance, coop: np.ndarray) -> StrategyProfile:
    return StrategyProfile(instance.shape, tuple(C if c else D for c in coop.tolist()))


def _decide(instance: EpochInstance, config: SimConfig, ep: _Epoch) -> Decision:
    scheme = config.scheme
    run = None
    recommended = None
    if scheme is Scheme.INCENTIVE_COMPATIBLE:
        run = protocol.recommend(instance, config.costs, config.rewards, config.include_divergent)
        recommended = np.array([d.decision is C for d in run.decisions], dtype=bool)
    if config.dynamics is Dynamics.BEST_RESPONSE:
        coop, converged, rounds = best_response(ep, scheme, recommended)
        return Decision(_profile(instance, coop), converged, rounds, run)
    if scheme is Scheme.UNIFORM:
        coop = np.zeros(ep.n, dtype=bool)
    elif scheme is Scheme.FAIR:
        coop = _fair_fixed_point(ep)
    else:
        coop = recommended
    return Decision(_profile(instance, coop), protocol_run=run)


def decide_strategies(instance: EpochInstance, config: SimConfig) -> StrategyProfile:
    return _decide(instance, config, _Epoch(instance, config.costs, config.rewards)).profile


def _outcome(instance: EpochInstance, config: SimConfig, ep: _Epoch, decision: Decision) -> EpochOutcome:
    profile = decision.profile
    coop = np.array([s is C for s in profile.strategies], dtype=bool)
    if config.scheme is Scheme.INCENTIVE_COMPATIBLE:
        _, utilities = protocol.settle_profile(instance, decision.protocol_run, profile, config.costs, config.rewards)
    else:
        utilities = tuple(ep.utilities(coop, config.scheme).tolist())
    fees = config.rewards.per_tx_fee * sum(instance.consensus_tx_counts)
    return EpochOutcome(profile, tuple(ep.shard_ok(coop).tolist()), tuple(utilities), fees)


def run_epoch(instance: EpochInstance, config: SimConfig) -> EpochOutcome:
    ep = _Epoch(instance, config.costs, config.rewards)
    return _outcome(instance, config, ep, _decide(instance, config, ep))


@dataclass
class _Accumulator:
    coop: list[float] = field(default_factory=list)
    defect: list[float] = field(default_factory=list)
    u_coop: list[float] = field(default_factory=list)
    u_defect: list[float] = field(default_factory=list)
    committed: int = 0
    diverged: int = 0

    def add(self, outcome: EpochOutcome, converged: bool) -> None:
        n = outcome.profile.shape.num_processors
        flags = [s is C for s in outcome.profile.strategies]
        cooperating = sum(flags)
        self.coop.append(cooperating / n)
        self.defect.append((n - cooperating) / n)
        if cooperating:
            self.u_coop.append(math.fsum(u for u, f in zip(outcome.utility, flags) if f) / cooperating)
        if cooperating < n:
            self.u_defect.append(math.fsum(u for u, f in zip(outcome.utility, flags) if not f) / (n - cooperating))
        self.committed += outcome.block_committed
        self.diverged += not converged

    def result(self, point: float) -> AggregateResult:
        def mean(xs: list[float]) -> float:
            return math.fsum(xs) / len(xs) if xs else 0.0

        iterations = len(self.coop)
        ratio, defect = mean(self.coop), mean(self.defect)
        u_c, u_d = mean(self.u_coop), mean(self.u_defect)
        return AggregateResult(
            sweep_point=point,
            mean_cooperation_ratio=ratio,
            mean_defection_ratio=defect,
            mean_utility_cooperators=u_c,
            mean_utility_defectors=u_d,
            weighted_mean_utility=ratio * u_c + defect * u_d,
            block_commit_rate=self.committed / iterations,
            iterations=iterations,
            diverged_epochs=self.diverged,
        )


def run_point(config: SimConfig, sweep_index: int, point: float) -> AggregateResult:
    acc = _Accumulator()
    try:
        for t in range(config.iterations):
            instance = generate_epoch(config, epoch_rng(config.seed, sweep_index, t))
            ep = _Epoch(instance, config.costs, config.rewards)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DynamicsDivergenceWarning)
                decision = _decide(instance, config, ep)
            acc.add(_outcome(instance, config, ep, decision), decision.converged)
    except ShapeError as exc:
        log.warning("sweep point %s failed: %s", point, exc)
        return AggregateResult(point, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, failed=True, error=str(exc))
    if acc.diverged:
        log.warning("sweep point %s: %d epoch(s) without a best-response fixed point", point, acc.diverged)
    return acc.result(point)


def _run_point_args(args: tuple[SimConfig, int, float]) -> AggregateResult:
    return run_point(*args)


def run_sweep(spec: SweepSpec, workers: int = 1) -> list[AggregateResult]:
    jobs = []
    for idx, value in enumerate(spec.values):
        try:
            jobs.append((spec.config_at(value), idx, value))
        except ShapeError as exc:
            jobs.append((exc, idx, value))
    runnable = [j for j in jobs if isinstance(j[0], SimConfig)]
    if workers > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = dict(zip((j[1] for j in runnable), pool.map(_run_point_args, runnable)))
    else:
        done = {j[1]: run_point(*j) for j in runnable}
    results = []
    for cfg, idx, value in jobs:
        if idx in done:
            results.append(done[idx])
        else:
            results.append(AggregateResult(value, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, failed=True, error=str(cfg)))
    return results


def crossing_point(values: Sequence[float], ratios: Sequence[float], level: float = 0.5) -> float | None:
    """First sweep value whose ratio reaches ``level`` (None if never)."""
    for v, r in zip(values, ratios):
        if r >= level:
            return v
    return None
