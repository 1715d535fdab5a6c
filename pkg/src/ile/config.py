"""Flat ``key = value`` configuration files.

Lines starting with ``#`` are comments; a ``#`` after a value also starts a
comment. Keys are dotted names in one namespace (``grid.h``, ``opt.lr``...).
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Mapping

from .errors import ConfigError


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(mapping: Mapping[str, object]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(mapping.items()))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def get(mapping: Mapping[str, str], key: str, cast: Callable, default=None, required: bool = False):
    """Typed lookup; raises ConfigError naming the key when missing or malformed."""
    if key not in mapping:
        if required:
            raise ConfigError(f"missing required config key '{key}'")
        return default
    raw = mapping[key]
    try:
        if cast is bool:
            return to_bool(str(raw))
        if cast is float:
            return float(raw)
        if cast is int:
            return int(str(raw), 10)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': cannot parse {raw!r}") from exc
