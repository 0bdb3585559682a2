"""Run configuration: one TOML file, overridable from the command line."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    corpus: str = "corpus"  # directory holding train.npz / test.npz
    model: str = "model.ambm"
    rules: str = ""  # empty: built-in ruleset
    store: str = "store.ndjson"
    signatures: str = ""  # empty: built-in signature table
    spill: str = "edge-spill.ndjson"


@dataclass
class CorpusConfig:
    n_per_class: int = 50
    seed: int = 42


@dataclass
class TrainSection:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 7878
    device_id: str = "d1"
    buffer_size: int = 16
    horizon_s: float = 1800.0
    retry_attempts: int = 3
    retry_backoff_s: float = 1.0


@dataclass
class WindowConfig:
    length: int = 180
    hop: int = 90


@dataclass
class DebounceConfig:
    votes: int = 3
    threshold: float = 0.6
    idle_ratio: float = 0.1


@dataclass
class LlmConfig:
    enabled: bool = False
    mock: bool = False  # answer from the rule engine instead of a remote endpoint
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 30.0


@dataclass
class Config:
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainSection = field(default_factory=TrainSection)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    debounce: DebounceConfig = field(default_factory=DebounceConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def describe(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _coerce(section: str, key: str, current: Any, value: Any) -> Any:
    where = f"{section}.{key}"
    kind = type(current)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{where} must be a boolean, got {value!r}")
    if kind is int:
        if isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


def apply_values(config: Config, doc: Mapping[str, Any], origin: str = "config") -> Config:
    """Merge a nested ``{section: {key: value}}`` mapping into ``config``; unknown keys are errors."""
    sections = {f.name for f in dataclasses.fields(config)}
    for section, values in doc.items():
        if section not in sections:
            raise ConfigError(f"{origin}: unknown section [{section}]; expected one of {', '.join(sorted(sections))}")
        if not isinstance(values, Mapping):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        target = getattr(config, section)
        keys = {f.name for f in dataclasses.fields(target)}
        for key, value in values.items():
            if key not in keys:
                raise ConfigError(f"{origin}: unknown key {section}.{key}; expected one of {', '.join(sorted(keys))}")
            setattr(target, key, _coerce(section, key, getattr(target, key), value))
    return config


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> (section, key, value)."""
    name, sep, value = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    return section, key, value.strip()


def validate(config: Config) -> Config:
    checks = [
        (config.corpus.n_per_class >= 2, "corpus.n_per_class must be >= 2"),
        (config.train.epochs > 0 and config.train.batch_size > 0, "train.epochs and train.batch_size must be positive"),
        (config.train.learning_rate > 0, "train.learning_rate must be positive"),
        (0 <= config.train.momentum < 1, "train.momentum must lie in [0, 1)"),
        (0 <= config.gateway.port <= 65535, "gateway.port must lie in [0, 65535]"),
        (config.gateway.buffer_size > 0, "gateway.buffer_size must be positive"),
        (config.gateway.retry_attempts > 0, "gateway.retry_attempts must be positive"),
        (config.window.length > 0 and config.window.hop > 0, "window.length and window.hop must be positive"),
        (config.debounce.votes > 0, "debounce.votes must be positive"),
        (0 <= config.debounce.threshold <= 1, "debounce.threshold must lie in [0, 1]"),
        (config.llm.timeout_s > 0, "llm.timeout_s must be positive"),
        (
            not config.llm.enabled or config.llm.mock or (config.llm.endpoint and config.llm.model),
            "llm.enabled needs llm.endpoint and llm.model (or llm.mock = true)",
        ),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    return config


def load_config(path: str | os.PathLike | None = None, overrides: Mapping[str, Mapping[str, Any]] | None = None) -> Config:
    config = Config()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {os.fspath(path)} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{os.fspath(path)}: {exc}") from None
        apply_values(config, doc, origin=os.fspath(path))
    if overrides:
        apply_values(config, overrides, origin="command line")
    return validate(config)


def log_config(config: Config) -> None:
    logger.info("resolved config: %s", config.describe())
