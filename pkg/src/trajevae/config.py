"""Flat ``key = value`` run configuration with dotted namespaces.

Keys live under ``model.``, ``train.`` and ``data.``.  Values from a file override the
defaults and command-line flags override the file.  Unknown keys are rejected.

Example file::

    # desk run
    model.hidden_dim = 32
    train.beta = 0.01
    data.path = corpus.jsonl
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""
    out_dir: str = "run"


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def field_types(section: str) -> dict[str, type]:
    return {f.name: type(f.default) for f in fields(SECTIONS[section])}


def defaults(section: str, profile: str = "full") -> dict:
    cls = SECTIONS[section]
    if profile == "desk" and hasattr(cls, "desk"):
        return cls.desk().to_dict()
    return {f.name: f.default for f in fields(cls)}


def all_keys() -> list[str]:
    return [f"{s}.{name}" for s in SECTIONS for name in field_types(s)]


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of the default for dotted ``key``."""
    section, _, name = key.partition(".")
    if section not in SECTIONS or name not in field_types(section):
        raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(all_keys())}")
    kind = field_types(section)[name]
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {text!r}")
    if kind is str:
        return text
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {text!r}") from None


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def read_file(path) -> dict[str, object]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(),
                "data": dict(vars(self.data))}


def resolve(file_values: dict | None = None, flag_values: dict | None = None,
            profile: str = "full") -> RunConfig:
    """Merge defaults < file < flags into validated configs.

    A run shortened below the default decay interval has its decay disabled, unless
    ``train.decay_every`` was given explicitly.
    """
    merged = {s: defaults(s, profile) for s in SECTIONS}
    explicit = set()
    for layer in (file_values or {}, flag_values or {}):
        for key, value in layer.items():
            section, _, name = key.partition(".")
            if section not in merged or name not in merged[section]:
                raise ConfigError(f"unknown config key {key!r}")
            merged[section][name] = value
            explicit.add(key)
    tc = merged["train"]
    if "train.decay_every" not in explicit and tc["decay_every"] > tc["total_steps"]:
        tc["decay_every"] = 0
    try:
        return RunConfig(ModelConfig.from_dict(merged["model"]),
                         TrainConfig.from_dict(merged["train"]),
                         DataConfig(**merged["data"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
