"""Run configuration files (YAML or JSON).

Layout::

    preset: desk            # or paper; fills every key not given below
    train:   {...}          # TrainConfig fields
    encoder: {...}          # EncoderConfig fields
    reader:  {kind: overlap, path: null, top_probability: 0.9, max_span_len: 8}
    baselines: {threshold: 5, readtop_tokens: 800}

The "paper" preset holds the full-scale hyper-parameters; "desk" divides the
step horizons by 100, shrinks the network and raises the learning rate to 1e-3.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .qnet import EncoderConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReaderConfig:
    kind: str = "overlap"
    path: Optional[str] = None
    top_probability: float = 0.9
    max_span_len: int = 8

    def __post_init__(self):
        if self.kind not in ("overlap", "oracle", "external"):
            raise ValueError("kind: must be one of overlap, oracle, external")
        if self.kind == "external" and not self.path:
            raise ValueError("path: required when kind is external")
        if not 0.0 < self.top_probability <= 1.0:
            raise ValueError("top_probability: must be in (0, 1]")
        if self.max_span_len < 1:
            raise ValueError("max_span_len: must be >= 1")


@dataclass(frozen=True)
class BaselineConfig:
    threshold: int = 5
    readtop_tokens: int = 800

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold: must be >= 0")
        if self.readtop_tokens < 1:
            raise ValueError("readtop_tokens: must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    reader: ReaderConfig = field(default_factory=ReaderConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)

    @classmethod
    def preset_defaults(cls, name: str) -> "RunConfig":
        return cls(name, TrainConfig.preset(name), EncoderConfig.preset(name), ReaderConfig(), BaselineConfig())

    def to_dict(self) -> dict[str, Any]:
        return {
            "preset": self.preset,
            "train": asdict(self.train),
            "encoder": asdict(self.encoder),
            "reader": asdict(self.reader),
            "baselines": asdict(self.baselines),
        }


_SECTIONS = {"train": TrainConfig, "encoder": EncoderConfig, "reader": ReaderConfig, "baselines": BaselineConfig}


def _check_type(key: str, value: Any, annotation: Any) -> Any:
    """Coerce int -> float where a float is expected; reject everything else that mismatches."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_type(key, value, inner[0])
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected bool, got {type(value).__name__}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {type(value).__name__}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected float, got {type(value).__name__}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected str, got {type(value).__name__}")
        return value
    return value


def _section(name: str, cls: type, base: Any, raw: Any) -> Any:
    if raw is None:
        return base
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    values = {}
    for k, v in raw.items():
        if k not in known:
            raise ConfigError(f"{name}.{k}: unknown key")
        values[k] = _check_type(f"{name}.{k}", v, hints[k])
    try:
        return replace(base, **values)
    except ValueError as e:
        msg = str(e)
        prefix = f"{name}."
        raise ConfigError(msg if msg.startswith(prefix) else prefix + msg) from None


def config_from_dict(raw: Optional[dict[str, Any]]) -> RunConfig:
    raw = dict(raw or {})
    unknown = set(raw) - {"preset", *_SECTIONS}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")
    preset = raw.get("preset", "desk")
    if preset not in ("desk", "paper"):
        raise ConfigError("preset: must be 'desk' or 'paper'")
    base = RunConfig.preset_defaults(preset)
    parts = {name: _section(name, cls, getattr(base, name), raw.get(name)) for name, cls in _SECTIONS.items()}
    return RunConfig(preset, **parts)


def load_config(path: Optional[Path | str]) -> RunConfig:
    """Read a YAML or JSON file; missing keys take the preset's defaults."""
    if path is None:
        return config_from_dict(None)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    try:
        raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {p}: {e}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    return config_from_dict(raw)


def save_config(config: RunConfig, path: Path | str) -> None:
    p = Path(path)
    d = config.to_dict()
    with open(p, "w") as f:
        if p.suffix == ".json":
            json.dump(d, f, indent=2, sort_keys=True)
            f.write("\n")
        else:
            yaml.safe_dump(d, f, sort_keys=True)
