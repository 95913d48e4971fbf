import random
import warnings
from dataclasses import replace

import pytest

from shardgame.equilibrium import is_nash
from shardgame.game import C, D, CostParams, EpochInstance, NetworkShape, RewardParams, Scheme, StrategyProfile
from shardgame.protocol import Verdict, recommend
from shardgame.sim import (
    Dynamics,
    DynamicsDivergenceWarning,
    ShapeError,
    SimConfig,
    SweepSpec,
    _Epoch,
    best_response,
    consensus_threshold,
    crossing_point,
    decide_strategies,
    epoch_rng,
    generate_epoch,
    run_epoch,
    run_point,
    run_sweep,
)

from conftest import sample_instance, sample_money, sample_shape

COSTS = CostParams(10, 5, 0.0005)
REWARDS = RewardParams(1000, 0.1)


def _config(**kw) -> SimConfig:
    base = dict(target_n=1000, avg_tx=5000, costs=COSTS, rewards=REWARDS, iterations=5, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_consensus_threshold_rules():
    assert consensus_threshold(100, "majority") == 51
    assert consensus_threshold(99, "majority") == 50
    assert consensus_threshold(100, 2 / 3) == 67
    assert consensus_threshold(90, 2 / 3) == 60
    assert consensus_threshold(100, 40) == 40
    with pytest.raises(ShapeError):
        consensus_threshold(100, 1.5)
    with pytest.raises(ShapeError):
        consensus_threshold(100, "most")


def test_config_validation():
    for bad in (dict(divergence_rate=1.5), dict(iterations=0), dict(tau_rule=101), dict(seed=-1)):
        with pytest.raises(ShapeError):
            _config(**bad)


def test_generate_epoch_shape_and_alignment():
    inst = generate_epoch(_config(), epoch_rng(1))
    assert inst.shape.num_shards == 10
    assert all(99 <= n <= 101 for n in inst.shape.committee_sizes)
    assert all(4950 <= y <= 5050 for y in inst.consensus_tx_counts)
    assert all(4950 <= x <= 5050 for x in inst.tx_counts)
    share = 1 - sum(inst.view_aligned) / inst.num_processors
    assert 0.08 < share < 0.22

    none = generate_epoch(_config(divergence_rate=0.0), epoch_rng(1))
    assert all(none.view_aligned)


def test_generate_epoch_is_deterministic():
    cfg = _config()
    assert generate_epoch(cfg, epoch_rng(9, 2, 4)) == generate_epoch(cfg, epoch_rng(9, 2, 4))
    assert generate_epoch(cfg, epoch_rng(9, 2, 4)) != generate_epoch(cfg, epoch_rng(9, 2, 5))


def test_generate_epoch_rejects_unreachable_threshold():
    cfg = _config(target_n=100, tau_rule=100)
    with pytest.raises(ShapeError):
        for t in range(20):
            generate_epoch(cfg, epoch_rng(0, 0, t))


def test_uniform_epoch_is_all_defect():
    cfg = _config(scheme=Scheme.UNIFORM)
    out = run_epoch(generate_epoch(cfg, epoch_rng(0)), cfg)
    assert out.cooperation_ratio == 0
    assert set(out.utility) == {-10}


def test_fair_epoch_cooperates_when_transactions_pay():
    cfg = _config(avg_tx=12000, scheme=Scheme.FAIR)
    out = run_epoch(generate_epoch(cfg, epoch_rng(0)), cfg)
    assert out.cooperation_ratio > 0.5 and out.block_committed


def test_fair_epoch_defects_when_costs_dominate():
    cfg = _config(costs=CostParams(10, 1e6, 1), scheme=Scheme.FAIR)
    assert decide_strategies(generate_epoch(cfg, epoch_rng(0)), cfg).total_cooperators == 0


def test_ic_epoch_with_all_defect_shard():
    shape = NetworkShape((4, 4), (3, 3))
    aligned = (True, True, True, True, True, False, False, True)
    tx = tuple(100 if a else 90 + i for i, a in enumerate(aligned))
    inst = EpochInstance(shape, tx, (100, 100), aligned)
    cfg = _config(scheme=Scheme.INCENTIVE_COMPATIBLE, costs=CostParams(10, 5, 0.01), rewards=RewardParams(100, 1))
    run = recommend(inst, cfg.costs, cfg.rewards)
    assert [a.verdict for a in run.announcements] == [Verdict.PROCEED, Verdict.ALL_DEFECT]
    out = run_epoch(inst, cfg)
    assert not out.block_committed
    assert [s.value for s in out.profile.strategies] == ["C"] * 4 + ["D"] * 4
    assert all(u == pytest.approx(-10 - 5 - 1) for u in out.utility[:4])


def test_best_response_fixed_points_are_equilibria():
    rng = random.Random(21)
    converged = 0
    for _ in range(120):
        shape = sample_shape(rng, max_n=12)
        inst = sample_instance(rng, shape)
        costs, rewards = sample_money(rng)
        for scheme in (Scheme.UNIFORM, Scheme.FAIR):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                coop, ok, _ = best_response(_Epoch(inst, costs, rewards), scheme)
            profile = StrategyProfile(shape, tuple(C if c else D for c in coop.tolist()))
            if ok:
                converged += 1
                assert is_nash(inst, profile, costs, rewards, scheme).is_nash
            else:
                assert any(issubclass(w.category, DynamicsDivergenceWarning) for w in caught)
    assert converged > 200


def test_best_response_divergence_is_flagged():
    # an empty round budget cannot reach a fixed point
    shape = NetworkShape((1, 1), (1, 1))
    inst = EpochInstance.homogeneous(shape, 10)
    ep = _Epoch(inst, CostParams(0, 50, 0), RewardParams(0, 0))
    with pytest.warns(DynamicsDivergenceWarning):
        best_response(ep, Scheme.FAIR, max_rounds=0)


def test_fair_rule_matches_best_response_on_easy_instances():
    cfg = _config(avg_tx=12000, scheme=Scheme.FAIR, target_n=300)
    inst = generate_epoch(cfg, epoch_rng(4))
    rule = decide_strategies(inst, cfg)
    dyn = decide_strategies(inst, replace(cfg, dynamics=Dynamics.BEST_RESPONSE))
    assert rule.cooperator_counts() == dyn.cooperator_counts()


def test_aggregate_invariants():
    for scheme in Scheme:
        res = run_point(_config(scheme=scheme, avg_tx=6000, include_divergent=True), 0, 6000)
        assert res.mean_cooperation_ratio + res.mean_defection_ratio == pytest.approx(1, abs=1e-9)
        expected = res.mean_cooperation_ratio * res.mean_utility_cooperators + res.mean_defection_ratio * res.mean_utility_defectors
        assert res.weighted_mean_utility == pytest.approx(expected)
        assert 0 <= res.block_commit_rate <= 1


def test_single_iteration_point_equals_epoch():
    cfg = _config(iterations=1, scheme=Scheme.FAIR, avg_tx=8000)
    res = run_point(cfg, 0, 8000)
    out = run_epoch(generate_epoch(cfg, epoch_rng(cfg.seed, 0, 0)), cfg)
    flags = [s is C for s in out.profile.strategies]
    coop = [u for u, f in zip(out.utility, flags) if f]
    assert res.mean_cooperation_ratio == out.cooperation_ratio
    assert res.block_commit_rate == float(out.block_committed)
    if coop:
        assert res.mean_utility_cooperators == pytest.approx(sum(coop) / len(coop))


def test_block_commit_rate_follows_aligned_counts():
    cfg = _config(iterations=1, scheme=Scheme.FAIR, avg_tx=8000)
    for t in range(5):
        inst = generate_epoch(cfg, epoch_rng(cfg.seed, 0, t))
        out = run_epoch(inst, cfg)
        counts = [
            sum(1 for i in inst.shape.members(j) if out.profile.strategies[i] is C and inst.view_aligned[i])
            for j in range(inst.shape.num_shards)
        ]
        assert out.block_committed == all(c >= tau for c, tau in zip(counts, inst.shape.consensus_thresholds))


def test_sweep_is_independent_of_worker_count():
    spec = SweepSpec("avg_tx", (6000, 8000, 10000), _config(scheme=Scheme.FAIR, iterations=3, target_n=400))
    assert run_sweep(spec, workers=1) == run_sweep(spec, workers=2)
    assert run_sweep(spec) == run_sweep(spec)


def test_sweep_marks_failed_points_and_continues():
    spec = SweepSpec("num_processors", (200, 300), _config(tau_rule=100, committee_size=100, iterations=3))
    results = run_sweep(spec)
    assert len(results) == 2
    assert any(r.failed for r in results)
    assert all(r.error for r in results if r.failed)


def test_sweep_spec_validation():
    with pytest.raises(ShapeError):
        SweepSpec("avg_tx", (), _config())
    with pytest.raises(ShapeError):
        SweepSpec("avg_tx", (2, 1), _config())
    with pytest.raises(ShapeError):
        SweepSpec("cost", (1, 2), _config())


def test_crossing_point():
    assert crossing_point([1, 2, 3], [0.1, 0.5, 0.9]) == 2
    assert crossing_point([1, 2, 3], [0.1, 0.2, 0.3]) is None
