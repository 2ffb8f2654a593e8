"""Run configuration: JSON file plus dotted-key overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .data import GeneratorConfig, SplitSpec
from .model import HeadConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class BackboneSection:
    """Backbone settings; the input width comes from the data."""

    hidden_dims: List[int] = field(default_factory=lambda: [256, 128])
    use_batchnorm: bool = True


@dataclass
class Paths:
    data_in: Optional[str] = None
    schema: Optional[str] = None
    data_out: str = "data.csv"
    checkpoint: Optional[str] = None
    report_dir: str = "runs"


@dataclass
class RunConfig:
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Paths = field(default_factory=Paths)
    repeat: int = 5

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        # tuples become lists in JSON anyway; normalise for stable echoes
        return json.loads(json.dumps(out))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "data": GeneratorConfig,
    "split": SplitSpec,
    "backbone": BackboneSection,
    "head": HeadConfig,
    "train": TrainConfig,
    "paths": Paths,
}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    if len(parts) == 1:
        if parts[0] != "repeat":
            raise ConfigError(f"unknown top-level key {key!r}")
        raw["repeat"] = value
        return
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"override {key!r} must look like section.field with section in {sorted(_SECTIONS)}")
    section, name = parts
    allowed = {f.name for f in fields(_SECTIONS[section])}
    if name not in allowed:
        raise ConfigError(f"unknown field {name!r} in section {section!r}")
    if section == "train" and name == "disabled_terms" and isinstance(value, str):
        value = [v for v in value.split(",") if v]
    raw.setdefault(section, {})[name] = value


def build_config(raw: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Validate a raw mapping (plus overrides) into a :class:`RunConfig`."""
    raw = copy.deepcopy(raw or {})
    unknown = set(raw) - set(_SECTIONS) - {"repeat"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for key, value in (overrides or {}).items():
        apply_override(raw, key, value)
    kwargs: Dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        allowed = {f.name for f in fields(cls)}
        extra = set(body) - allowed
        if extra:
            raise ConfigError(f"unknown fields in {section!r}: {sorted(extra)}")
        try:
            kwargs[section] = cls(**body)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {section!r} section: {exc}") from exc
    repeat = raw.get("repeat", 5)
    if not isinstance(repeat, int) or repeat < 1:
        raise ConfigError(f"repeat must be a positive integer, got {repeat!r}")
    return RunConfig(repeat=repeat, **kwargs)


def load_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return build_config(raw, overrides)


def parse_overrides(tokens: List[str]) -> Dict[str, Any]:
    """Turn ``--section.field=value`` tokens into a mapping."""
    out: Dict[str, Any] = {}
    for tok in tokens:
        if not tok.startswith("--") or "=" not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}; overrides look like --train.learning_rate=0.001")
        key, value = tok[2:].split("=", 1)
        out[key] = _parse_value(value)
    return out
