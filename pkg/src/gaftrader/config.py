"""Plain-text key=value configuration files.

Format: one `key=value` pair per line, `#` starts a comment, blank lines
ignored. Values stay strings; callers cast. Used both for CSV column
mapping and for CLI run configuration.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Malformed configuration file or inconsistent option set."""


def read_kv_config(path: str | Path) -> dict[str, str]:
    """Parse a key=value file into a dict, preserving declaration order."""
    options: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}: line {lineno}: empty key")
        options[key] = value.strip()
    return options


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")
