"""Experiment configuration: flat sectioned ``key = value`` text.

Every key has a default, so an empty file is a valid configuration. Unknown
sections or keys, duplicate keys, malformed values and range violations are
rejected with a ``ConfigError`` naming the key path and, when the problem sits
in the file, its line number.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace


from .reward import EmissionModel
from .td3 import DEFAULT_OMEGA_GRID, TrainConfig
from .world import WorldConfig


class ConfigError(ValueError):
    pass


@dataclass
class NeuralConfig:
    hidden: int = 32
    omega_hidden: int = 16

    def validate(self):
        for name in ("hidden", "omega_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"neural.{name} must be >= 1 (got {getattr(self, name)!r})")
        return self


def _default_grid():
    return list(DEFAULT_OMEGA_GRID)


@dataclass
class EvalConfig:
    omega_grid: list = field(default_factory=_default_grid)
    steps_per_omega: int = 3000
    emission_cap: float = 2.2  # g/s per petrol vehicle
    speed_floor: float = 4.0  # m/s

    def validate(self):
        if any(not 0.0 <= w <= 1.0 for w in self.omega_grid):
            raise ValueError(f"eval.omega_grid values must lie in [0, 1] (got {self.omega_grid!r})")
        if any(b < a for a, b in zip(self.omega_grid, self.omega_grid[1:])):
            raise ValueError("eval.omega_grid must be ascending")
        if self.steps_per_omega < 1:
            raise ValueError("eval.steps_per_omega must be >= 1")
        for name in ("emission_cap", "speed_floor"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"eval.{name} must be finite")
        return self


@dataclass
class RunConfig:
    out: str = "runs/default"
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def validate(self):
        if not self.seeds:
            raise ValueError("run.seeds must name at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("run.seeds must be distinct")
        if any(s < 0 for s in self.seeds):
            raise ValueError("run.seeds must be >= 0")
        return self


# seeds come from run.seeds; the per-omega step budget from eval.steps_per_omega
_HIDDEN = {"world": {"seed"}, "td3": {"seed", "eval_steps"}}


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    reward: EmissionModel = field(default_factory=EmissionModel)
    neural: NeuralConfig = field(default_factory=NeuralConfig)
    td3: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self):
        for sec in SECTIONS:
            getattr(self, sec).validate()
        return self

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.td3, seed=seed, eval_steps=self.eval.steps_per_omega)

    def world_config(self, seed: int) -> WorldConfig:
        return replace(self.world, seed=seed)

    def to_text(self) -> str:
        """Canonical resolved form; parsing it back yields an equal config."""
        out = []
        for sec in SECTIONS:
            out.append(f"[{sec}]")
            for name, value in _public_items(sec, getattr(self, sec)):
                out.append(f"{name} = {_format(value)}")
            out.append("")
        return "\n".join(out)


SECTIONS = ("world", "reward", "neural", "td3", "eval", "run")


def _public_items(sec, obj):
    for f in fields(obj):
        if f.name not in _HIDDEN.get(sec, ()):
            yield f.name, getattr(obj, f.name)


def _format(value):
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _kind(default):
    if isinstance(default, bool):
        return bool
    for t in (int, float, str, list):
        if isinstance(default, t):
            return t
    raise TypeError(f"unsupported config field type {type(default)!r}")


def _parse_value(path, raw, default):
    kind = _kind(default)
    text = raw.strip()
    try:
        if kind is int:
            return int(text)
        if kind is float:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind is str:
            if not text:
                raise ValueError
            return text
        items = [t.strip() for t in text.split(",")] if text else []
        elem = int if path == "run.seeds" else float
        return [elem(t) for t in items]
    except ValueError:
        want = {int: "an integer", float: "a finite number", str: "a non-empty string", list: "a comma-separated list"}[kind]
        raise ConfigError(f"{path}: expected {want}, got {raw.strip()!r}") from None


def _key_lines(text):
    """(section, key) -> 1-based line number of its assignment."""
    lines, sec = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip()
            lines.setdefault((sec, None), no)
        elif "=" in s:
            lines.setdefault((sec, s.split("=", 1)[0].strip()), no)
    return lines


def parse_config(text: str, source: str = "<config>", overrides=()) -> ExperimentConfig:
    """Parse and validate; ``overrides`` are ``section.key=value`` strings applied last."""
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",)
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc.message if hasattr(exc, 'message') else exc}") from None

    where = _key_lines(text)
    values = {}
    for sec in parser.sections():
        if sec not in SECTIONS:
            line = where.get((sec, None))
            raise ConfigError(f"{source}: unknown section [{sec}]" + (f" at line {line}" if line else ""))
        for key, raw in parser.items(sec):
            values[(sec, key)] = (raw, f"{source}, line {where.get((sec, key), '?')}")
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r}: expected section.key=value")
        lhs, raw = ov.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override {ov!r}: key must be written as section.key")
        sec, key = (t.strip() for t in lhs.split(".", 1))
        values[(sec, key)] = (raw, f"override {ov!r}")

    cfg = ExperimentConfig()
    updates = {sec: {} for sec in SECTIONS}
    for (sec, key), (raw, origin) in values.items():
        if sec not in SECTIONS:
            raise ConfigError(f"{origin}: unknown section {sec!r}")
        allowed = dict(_public_items(sec, getattr(cfg, sec)))
        if key not in allowed:
            raise ConfigError(f"{origin}: unknown key {sec}.{key}")
        try:
            updates[sec][key] = _parse_value(f"{sec}.{key}", raw, allowed[key])
        except ConfigError as exc:
            raise ConfigError(f"{origin}: {exc}") from None
    for sec, upd in updates.items():
        if upd:
            setattr(cfg, sec, replace(getattr(cfg, sec), **upd))
        try:
            getattr(cfg, sec).validate()
        except ValueError as exc:
            key = _offending_key(str(exc), sec)
            origin = values.get((sec, key), (None, None))[1] if key else None
            raise ConfigError(f"{origin}: {exc}" if origin else str(exc)) from None
    return cfg


def _offending_key(message, sec):
    head = message.split()[0] if message else ""
    if head.startswith(sec + "."):
        return head[len(sec) + 1 :]
    return None


def load_config(path=None, overrides=()) -> ExperimentConfig:
    if path is None:
        return parse_config("", "<defaults>", overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), overrides)


def validate_config(path, overrides=()) -> ExperimentConfig:
    return load_config(path, overrides)


__all__ = [
    "ConfigError",
    "EvalConfig",
    "ExperimentConfig",
    "NeuralConfig",
    "RunConfig",
    "SECTIONS",
    "load_config",
    "parse_config",
    "validate_config",
]
