"""key=value configuration files.

Both the agent config and the scenario config use the same plain-text
syntax: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines are ignored. Repeated keys are an error. List-like settings use
dotted key prefixes (``rate.steps = 24``).
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw_line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def get_bool(values: dict[str, str], key: str, default: bool) -> bool:
    raw = values.get(key)
    if raw is None:
        return default
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected boolean, got {raw!r}")


def get_int(values: dict[str, str], key: str, default: int | None = None) -> int:
    raw = values.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {raw!r}") from None


def get_float(values: dict[str, str], key: str, default: float | None = None) -> float:
    raw = values.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {raw!r}") from None


def prefixed(values: dict[str, str], prefix: str) -> dict[str, str]:
    """All entries under ``prefix.``, keyed by the remainder."""
    out = {}
    head = prefix + "."
    for key, value in values.items():
        if key.startswith(head):
            out[key[len(head):]] = value
    return out
