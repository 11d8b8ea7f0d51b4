"""Experiment configuration and its flat ``key = value`` file format.

Every key is ``section.field`` with sections ``data``, ``synth``, ``split``,
``battery``, ``policy``, ``ppo`` and ``run``. Blank lines and ``#`` comments
are ignored; unknown keys are an error. :data:`DEFAULT_CONFIG_TEXT` lists
every key with its default.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthParams
from .envsim import BatteryParams
from .errors import ConfigError, ContractViolation
from .ppo import Case, PpoConfig


@dataclass
class DataConfig:
    csv: str = ""  # empty: use the synthetic generator
    length: int = 2000
    seed: int = 0


@dataclass
class SplitConfig:
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 500


@dataclass
class PolicyConfig:
    hidden_size: int = 16
    sigma: float = 0.2
    standardize_inputs: bool = True


@dataclass
class RunConfig:
    cases: list = field(default_factory=lambda: [1, 2, 3])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    max_updates: int = 500
    patience: int = 20
    out_dir: str = "results"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthParams = field(default_factory=SynthParams)
    split: SplitConfig = field(default_factory=SplitConfig)
    battery: BatteryParams = field(default_factory=BatteryParams)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self):
        if not self.run.cases:
            raise ConfigError("run.cases must list at least one case")
        if not self.run.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        if self.run.patience < 1:
            raise ConfigError("run.patience must be >= 1")
        if self.run.max_updates < 0:
            raise ConfigError("run.max_updates must be >= 0")
        for c in self.run.cases:
            try:
                Case(c)
            except ValueError:
                raise ConfigError(f"unknown case {c!r}") from None
        return self


SECTIONS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _convert(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if raw.lower() in ("none", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if tp is list or origin is list:
            return [int(x) for x in raw.replace(",", " ").split()]
        if tp is Case:
            return Case(int(raw))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _section_types(cls):
    return typing.get_type_hints(cls)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    updates: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in updates:
            raise ConfigError(f"{source}:{lineno}: unknown section in key {key!r}")
        sec_cls = type(getattr(ExperimentConfig(), section))
        hints = _section_types(sec_cls)
        if name not in hints or name not in {f.name for f in dataclasses.fields(sec_cls)}:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        updates[section][name] = _convert(value, hints[name], key)
    base = ExperimentConfig()
    try:
        built = {s: dataclasses.replace(getattr(base, s), **updates[s]) for s in SECTIONS}
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(**built).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, Case):
        return str(int(v))
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for s in SECTIONS:
        sec = getattr(cfg, s)
        for f in dataclasses.fields(sec):
            lines.append(f"{s}.{f.name} = {_fmt(getattr(sec, f.name))}")
        lines.append("")
    return "\n".join(lines)


DEFAULT_CONFIG_TEXT = dump_config(ExperimentConfig())
