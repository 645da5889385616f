"""Flat ``key = value`` run configuration.

Files hold one ``key = value`` per line; ``#`` starts a comment. Every key
belongs to a subcommand's schema: unknown keys are rejected, keys without a
default are required, and command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError

REQUIRED = object()


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    name: str
    type: Callable[[str], Any]
    default: Any = REQUIRED
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def required(self) -> bool:
        return self.default is REQUIRED


def read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        if key in out:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r}")
        out[key] = value
    return out


def resolve(schema: list[Key], file_values: dict[str, str], flag_values: dict[str, Any]) -> dict[str, Any]:
    """Merge defaults < file < flags, type-convert and check required keys."""
    by_name = {k.name: k for k in schema}
    unknown = sorted(set(file_values) - set(by_name))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    out: dict[str, Any] = {}
    for key in schema:
        if flag_values.get(key.name) is not None:
            raw = flag_values[key.name]
        elif key.name in file_values:
            raw = file_values[key.name]
        elif key.required:
            raise ConfigError(f"missing required key '{key.name}' ({key.flag})")
        else:
            out[key.name] = key.default
            continue
        try:
            out[key.name] = key.type(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key.name}: {exc}") from None
    return out
