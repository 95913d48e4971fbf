"""Command-line front end: ``sweep``, ``analyze``, ``epoch-trace`` and ``presets list``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__, protocol
from .config import ConfigError, GameFile, SweepFile, load_game, load_preset, load_sweep, parse_sweep, preset_names, render_sweep
from .equilibrium import (
    SizeGuardError,
    check_cooperation_conditions,
    enumerate_nash,
    is_nash,
    thresholds,
)
from .game import C, D, GameError, Scheme, StrategyProfile, payoff
from .sim import AggregateResult, Dynamics, crossing_point, epoch_rng, generate_epoch, run_sweep
from .svg import render

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SIZE = 0, 2, 3, 4

CSV_COLUMNS = (
    "sweep_variable",
    "sweep_value",
    "scheme",
    "mean_coop_ratio",
    "mean_defect_ratio",
    "mean_util_coop",
    "mean_util_defect",
    "weighted_mean_util",
    "block_commit_rate",
    "iterations",
)

log = logging.getLogger("shardgame")


class OutputError(OSError):
    pass


def write_atomic(path: Path, data: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _num(v: float) -> str:
    return repr(float(v))


def results_csv(varying: str, scheme: Scheme, results: Sequence[AggregateResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        writer.writerow(
            [
                varying,
                _num(r.sweep_point),
                scheme.value,
                _num(r.mean_cooperation_ratio),
                _num(r.mean_defection_ratio),
                _num(r.mean_utility_cooperators),
                _num(r.mean_utility_defectors),
                _num(r.weighted_mean_utility),
                _num(r.block_commit_rate),
                str(r.iterations),
            ]
        )
    return buf.getvalue()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _apply_flags(sweep: SweepFile, args: argparse.Namespace) -> SweepFile:
    base = sweep.spec.base
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.dynamics is not None:
        changes["dynamics"] = Dynamics.parse(args.dynamics)
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    try:
        base = replace(base, **changes)
    except GameError as exc:
        raise ConfigError("command line", [(None, str(exc))]) from None
    schemes = sweep.schemes
    if getattr(args, "scheme", None):
        schemes = (Scheme.parse(args.scheme),)
    return replace(sweep, spec=replace(sweep.spec, base=base), schemes=schemes)


def _load_sweep_source(args: argparse.Namespace) -> SweepFile:
    overrides = tuple(args.set or ())
    sources = [s for s in (args.config, args.preset, getattr(args, "from_manifest", None)) if s]
    if len(sources) != 1:
        raise ConfigError("command line", [(None, "give exactly one of --config, --preset or --from-manifest")])
    if args.config:
        sweep = load_sweep(args.config, overrides)
    elif args.preset:
        sweep = load_preset(args.preset, overrides)
    else:
        path = Path(args.from_manifest)
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
            snapshot = manifest["config_snapshot"]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(str(path), [(None, f"unreadable manifest: {exc}")]) from None
        sweep = parse_sweep(snapshot, f"{path}:config_snapshot", overrides)
    return _apply_flags(sweep, args)


def manifest_json(sweep: SweepFile, files: dict[str, str], started: str, finished: str, workers: int) -> str:
    base = sweep.spec.base
    doc = {
        "tool": "shardgame",
        "tool_version": __version__,
        "seed": base.seed,
        "digest_algorithm": protocol.DIGEST_ALGORITHM,
        "started": started,
        "finished": finished,
        "workers": workers,
        "config_snapshot": render_sweep(sweep),
        "config": {
            "name": sweep.name,
            "varying": sweep.spec.varying,
            "values": list(sweep.spec.values),
            "schemes": [s.value for s in sweep.schemes],
            "target_n": base.target_n,
            "avg_tx": base.avg_tx,
            "committee_size": base.committee_size,
            "tau_rule": base.tau_rule,
            "divergence_rate": base.divergence_rate,
            "costs": {
                "mandatory": base.costs.mandatory_cost,
                "fixed_optional": base.costs.fixed_optional_cost,
                "per_tx_verification": base.costs.per_tx_verification_cost,
            },
            "rewards": {"block_reward": base.rewards.block_reward, "per_tx_fee": base.rewards.per_tx_fee},
            "dynamics": base.dynamics.value,
            "iterations": base.iterations,
            "include_divergent": base.include_divergent,
        },
        "outputs": files,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_sweep(args: argparse.Namespace) -> int:
    sweep = _load_sweep_source(args)
    out = Path(args.out)
    started = _now()
    files: dict[str, str] = {}
    for scheme in sweep.schemes:
        spec = replace(sweep.spec, base=replace(sweep.spec.base, scheme=scheme))
        results = run_sweep(spec, workers=args.workers)
        text = results_csv(spec.varying, scheme, results)
        csv_path = out / f"{sweep.name}_{scheme.value}.csv"
        write_atomic(csv_path, text)
        files[scheme.value] = csv_path.name
        for r in results:
            if r.failed:
                print(f"warning: {scheme.value} point {r.sweep_point!r} failed: {r.error}", file=sys.stderr)
        if args.plot:
            svg_path = csv_path.with_suffix(".svg")
            write_atomic(svg_path, render(text, sweep.plot, f"{sweep.name} ({scheme.value})"))
            files[f"{scheme.value}_plot"] = svg_path.name
        cross = crossing_point(spec.values, [r.mean_cooperation_ratio for r in results])
        final = results[-1]
        print(
            f"{scheme.value:>7}: crossing 0.5 at {spec.varying}={cross if cross is not None else 'none'}; "
            f"last point ratio={final.mean_cooperation_ratio:.3f} weighted utility={final.weighted_mean_utility:.3f}"
            f" -> {csv_path}"
        )
    manifest_path = out / f"{sweep.name}.manifest.json"
    write_atomic(manifest_path, manifest_json(sweep, files, started, _now(), args.workers))
    print(f"manifest -> {manifest_path}")
    return EXIT_OK


def _fmt_threshold(value: float | None) -> str:
    return "undefined" if value is None else f"{value:.6g}"


def _report_game(game: GameFile, args: argparse.Namespace) -> str:
    inst, costs, rewards = game.instance, game.costs, game.rewards
    scheme = Scheme.parse(args.scheme) if args.scheme else game.scheme
    if scheme is Scheme.INCENTIVE_COMPATIBLE:
        raise ConfigError("command line", [(None, "analyze supports the uniform and fair schemes")])
    shape = inst.shape
    lines = [f"game: N={inst.num_processors} shards={shape.num_shards} scheme={scheme.value}"]
    for j in range(shape.num_shards):
        tau = shape.consensus_thresholds[j]
        t = thresholds(costs, rewards, shape.num_shards, tau, inst.consensus_tx_counts[j])
        lines.append(
            f"shard {j}: n={shape.committee_sizes[j]} tau={tau} |y|={inst.consensus_tx_counts[j]} "
            f"at l=tau: aligned threshold={_fmt_threshold(t.aligned)} ({t.aligned_sign.name.lower()} margin) "
            f"divergent threshold={_fmt_threshold(t.divergent)}"
        )
    equilibria = enumerate_nash(inst, costs, rewards, scheme, max_processors=args.max_processors)
    lines.append(f"pure Nash equilibria: {len(equilibria)}")
    for cert in equilibria:
        profile = cert.profile
        counts = ",".join(str(c) for c in profile.cooperator_counts())
        cond = check_cooperation_conditions(inst, profile, costs, rewards)
        utilities = [payoff(inst, profile, costs, rewards, i, scheme) for i in range(inst.num_processors)]
        lines.append(
            f"  {profile}  cooperators per shard=[{counts}]  cooperation conditions={'yes' if cond else 'no'}"
            f"  utilities=[{', '.join(f'{u:.6g}' for u in utilities)}]"
        )
    for query in tuple(game.queries) + tuple(args.query or ()):
        if query.lower() in ("all-c", "all-cooperate"):
            profile = StrategyProfile.all_cooperate(shape)
        elif query.lower() in ("all-d", "all-defect"):
            profile = StrategyProfile.all_defect(shape)
        else:
            profile = StrategyProfile.from_string(shape, query)
        cert = is_nash(inst, profile, costs, rewards, scheme)
        lines.append(f"query {query}: {profile} is Nash: {'true' if cert.is_nash else 'false'}")
        for w in cert.witnesses:
            lines.append(
                f"  witness: processor {w.processor} {w.current_strategy.value}->{w.current_strategy.flipped().value}"
                f" utility {w.current_utility:.6g} -> {w.deviation_utility:.6g} (gain {w.gain:.6g})"
            )
    return "\n".join(lines) + "\n"


def cmd_analyze(args: argparse.Namespace) -> int:
    path = args.game or args.config
    if not path:
        raise ConfigError("command line", [(None, "analyze needs a game description file")])
    game = load_game(path)
    sys.stdout.write(_report_game(game, args))
    return EXIT_OK


def _trace(sweep: SweepFile, args: argparse.Namespace) -> str:
    spec = sweep.spec
    value = args.at if args.at is not None else spec.values[0]
    config = replace(spec.config_at(value), scheme=Scheme.INCENTIVE_COMPATIBLE)
    inst = generate_epoch(config, epoch_rng(config.seed, args.sweep_index, args.iteration))
    run = protocol.recommend(inst, config.costs, config.rewards, config.include_divergent)
    actual = run.recommended_profile(inst)
    for i in args.defect or ():
        if not 0 <= i < inst.num_processors:
            raise ConfigError("command line", [(None, f"--defect {i}: no such processor")])
        actual = actual.with_strategy(i, D)
    for i in args.cooperate or ():
        if not 0 <= i < inst.num_processors:
            raise ConfigError("command line", [(None, f"--cooperate {i}: no such processor")])
        actual = actual.with_strategy(i, C)
    ledger, utilities = protocol.settle_profile(inst, run, actual, config.costs, config.rewards)

    shape = inst.shape
    lines = [
        f"epoch: seed={config.seed} sweep_index={args.sweep_index} iteration={args.iteration} "
        f"{spec.varying}={value!r} N={inst.num_processors} shards={shape.num_shards} "
        f"digest={protocol.DIGEST_ALGORITHM}"
    ]
    decisions = {d.processor: d for d in run.decisions}
    for j, ann in enumerate(run.announcements):
        lines.append(
            f"shard {j}: n={shape.committee_sizes[j]} tau={shape.consensus_thresholds[j]} "
            f"|y|={inst.consensus_tx_counts[j]}"
        )
        groups: dict[bytes, list[int]] = {}
        for d in run.digests[j]:
            groups.setdefault(d.digest, []).append(d.processor)
        for digest, members in sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0])):
            shown = ",".join(map(str, members))
            lines.append(f"  digest {digest.hex()[:16]} size={len(members)} processors=[{shown}]")
        lines.append(f"  l_j={ann.l_j}")
        if ann.verdict is protocol.Verdict.ALL_DEFECT:
            lines.append("  verdict: All-D")
        else:
            lines.append(
                f"  verdict: proceed  aligned threshold={_fmt_threshold(ann.aligned_threshold)} "
                f"({ann.aligned_sign.name.lower()} margin)  divergent threshold={_fmt_threshold(ann.divergent_threshold)}"
            )
        for i in shape.members(j):
            d = decisions[i]
            lines.append(
                f"  processor {i}: tx={inst.tx_counts[i]} recommend={d.decision.value} ({d.reason.value}) "
                f"played={actual.strategies[i].value} reward={ledger.rewards[i]!r} utility={utilities[i]!r}"
            )
    lines.append(f"block committed: {'yes' if ledger.block_committed else 'no'}")
    fees = config.rewards.per_tx_fee * sum(inst.consensus_tx_counts)
    lines.append(f"ledger total={ledger.total!r} (block reward + fees = {config.rewards.block_reward + fees!r})")
    return "\n".join(lines) + "\n"


def cmd_epoch_trace(args: argparse.Namespace) -> int:
    if args.scheme and Scheme.parse(args.scheme) is not Scheme.INCENTIVE_COMPATIBLE:
        raise ConfigError("command line", [(None, "epoch-trace requires the incentive-compatible scheme (ic)")])
    args.scheme = None
    sweep = _load_sweep_source(args)
    sys.stdout.write(_trace(sweep, args))
    return EXIT_OK


def cmd_presets(args: argparse.Namespace) -> int:
    for name in preset_names():
        sweep = load_preset(name)
        spec = sweep.spec
        print(f"{name}: {spec.varying} {spec.values[0]:g}..{spec.values[-1]:g} ({len(spec.values)} points)")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, schemes: bool = True) -> None:
    p.add_argument("--config", help="sweep configuration file")
    p.add_argument("--preset", help="named preset (see 'presets list')")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a configuration entry")
    p.add_argument("--seed", type=int)
    p.add_argument("--dynamics", choices=[d.value for d in Dynamics])
    p.add_argument("--iterations", type=int)
    if schemes:
        p.add_argument("--scheme", choices=[s.value for s in Scheme])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shardgame", description="Cooperation games in sharded blockchains.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a parameter sweep and write CSV, manifest and charts")
    _common(p)
    p.add_argument("--from-manifest", help="rerun the configuration stored in a manifest")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--plot", action="store_true", help="also write an SVG chart per scheme")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="thresholds and pure equilibria of a small game")
    p.add_argument("game", nargs="?", help="game description file")
    p.add_argument("--config", help="game description file")
    p.add_argument("--scheme", choices=["uniform", "fair"])
    p.add_argument("--query", action="append", help="profile to test, e.g. all-c or CCD|DC")
    p.add_argument("--max-processors", type=int, default=20)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("epoch-trace", help="step-by-step trace of the coordinator protocol for one epoch")
    _common(p)
    p.add_argument("--at", type=float, help="sweep value to trace (default: the first)")
    p.add_argument("--sweep-index", type=int, default=0)
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--defect", type=int, action="append", help="force this processor to defect")
    p.add_argument("--cooperate", type=int, action="append", help="force this processor to cooperate")
    p.set_defaults(func=cmd_epoch_trace)

    p = sub.add_parser("presets", help="bundled sweep presets")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SizeGuardError as exc:
        print(f"error: {exc}; use 'sweep' for large networks or shrink the game", file=sys.stderr)
        return EXIT_SIZE
    except GameError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
