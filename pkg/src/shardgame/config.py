"""INI-style sweep and game files with strict validation.

Unknown sections or keys are errors, and every diagnostic carries the line
it refers to.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from .game import CostParams, EpochInstance, GameError, NetworkShape, RewardParams, Scheme
from .sim import Dynamics, ShapeError, SimConfig, SweepSpec, SWEEPABLE


class ConfigError(ValueError):
    def __init__(self, source: str, problems: list[tuple[int | None, str]]):
        self.source = source
        self.problems = problems
        super().__init__(self.render())

    def render(self) -> str:
        lines = []
        for line, msg in self.problems:
            where = f"{self.source}:{line}" if line else self.source
            lines.append(f"{where}: {msg}")
        return "\n".join(lines)


@dataclass(frozen=True, slots=True)
class SweepFile:
    name: str
    spec: SweepSpec
    schemes: tuple[Scheme, ...]
    plot: str = "ratio"


def _schema_sweep() -> dict[str, dict[str, bool]]:
    # key -> required
    return {
        "sweep": {"name": True, "varying": True, "values": True, "schemes": False, "plot": False},
        "network": {
            "target_n": True,
            "committee_size": False,
            "tau_rule": False,
            "divergence_rate": False,
            "avg_tx": True,
        },
        "costs": {"mandatory": True, "fixed_optional": True, "per_tx_verification": True},
        "rewards": {"block_reward": True, "per_tx_fee": True},
        "run": {"dynamics": False, "iterations": False, "seed": False, "include_divergent": False},
    }


def _schema_game() -> dict[str, dict[str, bool]]:
    return {
        "network": {"committee_sizes": True, "thresholds": True},
        "views": {"tx_counts": True, "consensus_tx_counts": True, "aligned": False},
        "costs": {"mandatory": True, "fixed_optional": True, "per_tx_verification": True},
        "rewards": {"block_reward": True, "per_tx_fee": True},
        "analysis": {"scheme": False, "query": False},
    }


class _Reader:
    """Tracks line numbers for sections and keys of one parsed file."""

    def __init__(self, text: str, source: str, schema: dict[str, dict[str, bool]]):
        self.source = source
        self.problems: list[tuple[int | None, str]] = []
        self.lines: dict[tuple[str, str | None], int] = {}
        self.overridden: set[tuple[str, str]] = set()
        section = None
        for no, raw in enumerate(text.splitlines(), 1):
            m = re.match(r"\s*\[([^\]]+)\]", raw)
            if m:
                section = m.group(1).strip()
                self.lines.setdefault((section, None), no)
                continue
            m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", raw)
            if m and section is not None:
                self.lines.setdefault((section, m.group(1).strip().lower()), no)
        self.parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            self.parser.read_string(text, source=source)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            if line is None and getattr(exc, "errors", None):
                line = exc.errors[0][0]
            raise ConfigError(source, [(line, str(exc).splitlines()[0])]) from None
        self.schema = schema

    def line(self, section: str, key: str | None = None) -> int | None:
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def fail(self, section: str, key: str | None, msg: str) -> None:
        where = f"[{section}] {key}" if key else f"[{section}]"
        line = None if key and (section, key) in self.overridden else self.line(section, key)
        self.problems.append((line, f"{where}: {msg}"))

    def override(self, assignment: str) -> None:
        m = re.fullmatch(r"\s*([\w-]+)\.([\w-]+)\s*=(.*)", assignment)
        if not m:
            self.problems.append((None, f"override {assignment!r} is not SECTION.KEY=VALUE"))
            return
        section, key, value = m.group(1), m.group(2).lower(), m.group(3).strip()
        if not self.parser.has_section(section):
            self.parser.add_section(section)
        self.parser.set(section, key, value)
        self.overridden.add((section, key))

    def check_schema(self) -> None:
        for section in self.parser.sections():
            if section not in self.schema:
                self.fail(section, None, "unknown section")
                continue
            for key in self.parser[section]:
                if key not in self.schema[section]:
                    self.fail(section, key, "unknown key")
        for section, keys in self.schema.items():
            for key, required in keys.items():
                if required and not self.parser.has_option(section, key):
                    self.fail(section, key, "missing required key")

    def get(self, section: str, key: str, convert: Callable, default=None):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key)
        try:
            return convert(raw)
        except (ValueError, GameError) as exc:
            self.fail(section, key, f"bad value {raw!r} ({exc})")
            return default

    def done(self) -> None:
        if self.problems:
            raise ConfigError(self.source, self.problems)


def _number(text: str) -> float:
    return float(text)


def _integer(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError("expected an integer")
    return int(value)


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _numbers(text: str) -> tuple[float, ...]:
    items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    return tuple(float(t) for t in items)


def _integers(text: str) -> tuple[int, ...]:
    return tuple(_integer(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _tau_rule(text: str) -> str | float | int:
    t = text.strip().lower()
    if t == "majority":
        return t
    if "." in t or "/" in t:
        if "/" in t:
            num, den = t.split("/")
            return float(num) / float(den)
        return float(t)
    return _integer(t)


def _schemes(text: str) -> tuple[Scheme, ...]:
    return tuple(Scheme.parse(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _read_money(reader: _Reader) -> tuple[CostParams | None, RewardParams | None]:
    cm = reader.get("costs", "mandatory", _number)
    cf = reader.get("costs", "fixed_optional", _number)
    cv = reader.get("costs", "per_tx_verification", _number)
    br = reader.get("rewards", "block_reward", _number)
    r = reader.get("rewards", "per_tx_fee", _number)
    costs = rewards = None
    if None not in (cm, cf, cv):
        try:
            costs = CostParams(cm, cf, cv)
        except GameError as exc:
            reader.fail("costs", None, str(exc))
    if None not in (br, r):
        try:
            rewards = RewardParams(br, r)
        except GameError as exc:
            reader.fail("rewards", None, str(exc))
    return costs, rewards


def parse_sweep(text: str, source: str = "<config>", overrides: tuple[str, ...] = ()) -> SweepFile:
    reader = _Reader(text, source, _schema_sweep())
    for o in overrides:
        reader.override(o)
    reader.check_schema()
    reader.done()

    name = reader.get("sweep", "name", str.strip)
    varying = reader.get("sweep", "varying", lambda t: t.strip().lower())
    if varying is not None and varying not in SWEEPABLE:
        reader.fail("sweep", "varying", f"must be one of {', '.join(SWEEPABLE)}")
    values = reader.get("sweep", "values", _numbers, ())
    if not values:
        reader.fail("sweep", "values", "sweep values must be nonempty")
    elif any(b <= a for a, b in zip(values, values[1:])):
        reader.fail("sweep", "values", "sweep values must be strictly increasing")
    schemes = reader.get("sweep", "schemes", _schemes, tuple(Scheme))
    plot = reader.get("sweep", "plot", lambda t: t.strip().lower(), "ratio")
    if plot not in ("ratio", "utility"):
        reader.fail("sweep", "plot", "must be 'ratio' or 'utility'")

    costs, rewards = _read_money(reader)
    kwargs = dict(
        target_n=reader.get("network", "target_n", _integer),
        avg_tx=reader.get("network", "avg_tx", _integer),
        committee_size=reader.get("network", "committee_size", _integer, 100),
        tau_rule=reader.get("network", "tau_rule", _tau_rule, "majority"),
        divergence_rate=reader.get("network", "divergence_rate", _number, 0.15),
        dynamics=reader.get("run", "dynamics", Dynamics.parse, Dynamics.THRESHOLD),
        iterations=reader.get("run", "iterations", _integer, 100),
        seed=reader.get("run", "seed", _integer, 0),
        include_divergent=reader.get("run", "include_divergent", _bool, False),
    )
    reader.done()
    try:
        base = SimConfig(costs=costs, rewards=rewards, scheme=schemes[0], **kwargs)
        spec = SweepSpec(varying, values, base)
    except ShapeError as exc:
        reader.fail("network", None, str(exc))
        reader.done()
        raise
    return SweepFile(name, spec, schemes, plot)


def load_sweep(path: str | Path, overrides: tuple[str, ...] = ()) -> SweepFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), [(None, f"cannot read: {exc.strerror}")]) from None
    return parse_sweep(text, str(path), overrides)


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("shardgame.presets").iterdir() if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    try:
        return resources.files("shardgame.presets").joinpath(f"{name}.ini").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"preset:{name}", [(None, f"no such preset; available: {', '.join(preset_names())}")]) from None


def load_preset(name: str, overrides: tuple[str, ...] = ()) -> SweepFile:
    return parse_sweep(preset_text(name), f"preset:{name}", overrides)


@dataclass(frozen=True, slots=True)
class GameFile:
    instance: EpochInstance
    costs: CostParams
    rewards: RewardParams
    scheme: Scheme
    queries: tuple[str, ...]


def parse_game(text: str, source: str = "<game>") -> GameFile:
    reader = _Reader(text, source, _schema_game())
    reader.check_schema()
    reader.done()
    sizes = reader.get("network", "committee_sizes", _integers, ())
    taus = reader.get("network", "thresholds", _integers, ())
    if len(taus) == 1 and len(sizes) > 1:
        taus = taus * len(sizes)
    tx = reader.get("views", "tx_counts", _integers, ())
    ys = reader.get("views", "consensus_tx_counts", _integers, ())
    if len(ys) == 1 and len(sizes) > 1:
        ys = ys * len(sizes)
    aligned = reader.get(
        "views", "aligned", lambda t: tuple(_bool(a) for a in re.split(r"[,\s]+", t.strip()) if a), None
    )
    costs, rewards = _read_money(reader)
    scheme = reader.get("analysis", "scheme", Scheme.parse, Scheme.FAIR)
    queries = reader.get("analysis", "query", lambda t: tuple(q for q in re.split(r"[,\s]+", t.strip()) if q), ())
    reader.done()
    try:
        shape = NetworkShape(sizes, taus)
        instance = EpochInstance(shape, tx, ys, aligned if aligned is not None else (True,) * shape.num_processors)
    except GameError as exc:
        reader.fail("network" if "shard" in str(exc) or "threshold" in str(exc) else "views", None, str(exc))
        reader.done()
        raise
    return GameFile(instance, costs, rewards, scheme, queries)


def load_game(path: str | Path) -> GameFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), [(None, f"cannot read: {exc.strerror}")]) from None
    return parse_game(text, str(path))


def render_sweep(sweep: SweepFile) -> str:
    """Inverse of ``parse_sweep`` for the snapshot stored in run manifests."""
    base = sweep.spec.base
    values = ", ".join(repr(v) for v in sweep.spec.values)
    return "\n".join(
        [
            "[sweep]",
            f"name = {sweep.name}",
            f"varying = {sweep.spec.varying}",
            f"values = {values}",
            f"schemes = {', '.join(s.value for s in sweep.schemes)}",
            f"plot = {sweep.plot}",
            "",
            "[network]",
            f"target_n = {base.target_n}",
            f"committee_size = {base.committee_size}",
            f"tau_rule = {base.tau_rule!r}".replace("'", ""),
            f"divergence_rate = {base.divergence_rate!r}",
            f"avg_tx = {base.avg_tx}",
            "",
            "[costs]",
            f"mandatory = {base.costs.mandatory_cost!r}",
            f"fixed_optional = {base.costs.fixed_optional_cost!r}",
            f"per_tx_verification = {base.costs.per_tx_verification_cost!r}",
            "",
            "[rewards]",
            f"block_reward = {base.rewards.block_reward!r}",
            f"per_tx_fee = {base.rewards.per_tx_fee!r}",
            "",
            "[run]",
            f"dynamics = {base.dynamics.value}",
            f"iterations = {base.iterations}",
            f"seed = {base.seed}",
            f"include_divergent = {str(base.include_divergent).lower()}",
            "",
        ]
    )
