"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Values stay strings until
a consumer coerces them against a dataclass field.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return values


def load_config(path) -> dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def coerce(value: str, default):
    """Convert a config string to the type of ``default``."""
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, list):
        return [p.strip() for p in value.split(",") if p.strip()]
    if isinstance(default, tuple):
        parts = [p for p in value.replace("x", ",").split(",") if p.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(p.strip()) for p in parts)
    if value.lower() in ("", "none"):
        return None
    return value


def apply_overrides(obj, values: dict, prefix: str = ""):
    """Return a copy of dataclass ``obj`` with matching ``prefix + field`` keys applied."""
    changes = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        current = getattr(obj, f.name)
        if dataclasses.is_dataclass(current):
            changes[f.name] = apply_overrides(current, values, key + ".")
        elif key in values:
            try:
                changes[f.name] = coerce(values[key], current)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
    return dataclasses.replace(obj, **changes)


def known_keys(obj, prefix: str = "") -> set[str]:
    keys = set()
    for f in dataclasses.fields(obj):
        current = getattr(obj, f.name)
        if dataclasses.is_dataclass(current):
            keys |= known_keys(current, prefix + f.name + ".")
        else:
            keys.add(prefix + f.name)
    return keys
