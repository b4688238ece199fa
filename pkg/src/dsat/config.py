"""Plain-text run configuration: key=value pairs grouped in sections.

Any section layout is accepted; keys are matched to TrainConfig fields
by name alone, so files can organise options however reads best.  A
``preset`` key (``desk`` or ``paper``) selects the base configuration
the remaining keys override.  Unknown keys are rejected rather than
ignored: a typo must not silently fall back to a default.

``write_resolved`` dumps the post-merge configuration of a run so an
experiment directory always records exactly what it ran with.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ConfigError
from .train import TrainConfig

__all__ = ["load_config", "write_resolved", "config_items"]

_PRESETS = {
    "desk": TrainConfig.desk,
    "paper": TrainConfig.paper,
    "default": TrainConfig,
}


def _parse_value(name: str, text: str, target_type):
    text = text.strip()
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if name == "two_spec_sigmas":
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 2:
                raise ValueError(text)
            return tuple(parts)
        return text
    except ValueError:
        raise ConfigError(f"config key {name!r}: cannot parse {text!r} as {target_type.__name__}")


def _field_types() -> dict[str, type]:
    types = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "two_spec_sigmas":
            types[f.name] = tuple
        else:
            types[f.name] = f.type if isinstance(f.type, type) else _annotation_type(f.type)
    return types


def _annotation_type(annotation: str) -> type:
    # dataclass fields carry string annotations under future-style imports
    return {"int": int, "float": float, "str": str, "bool": bool}.get(annotation, str)


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    """Read a config file and apply optional programmatic overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}")

    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in flat:
                raise ConfigError(f"config key {key!r} appears in more than one section")
            flat[key] = value
    preset_name = flat.pop("preset", "default")
    if preset_name not in _PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(_PRESETS)}")

    types = _field_types()
    parsed = {}
    for key, value in flat.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        parsed[key] = _parse_value(key, value, types[key])
    if overrides:
        parsed.update(overrides)
    config = dataclasses.replace(_PRESETS[preset_name](), **parsed)
    return config.validate()


def config_items(config: TrainConfig) -> list[tuple[str, str]]:
    """Sorted (key, rendered value) pairs covering every field."""
    items = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(config, f.name)
        if f.name == "two_spec_sigmas":
            rendered = f"{value[0]},{value[1]}"
        else:
            rendered = str(value)
        items.append((f.name, rendered))
    return sorted(items)


def write_resolved(config: TrainConfig, path) -> None:
    """Record the fully resolved configuration of a run."""
    lines = ["[run]"]
    lines += [f"{key} = {value}" for key, value in config_items(config)]
    Path(path).write_text("\n".join(lines) + "\n")
