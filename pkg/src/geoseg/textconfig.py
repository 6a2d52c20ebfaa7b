"""Tiny `key = value` config reader shared by scene specs and experiment configs.

Grammar::

    # comment (also after a value)
    key = value
    [section]          # starts a new block; a name may repeat
    key = value

Keys before the first header land in the section named ``""``.
"""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Malformed config text, unknown key, or bad value."""


def parse_blocks(text: str, source: str = "<string>") -> list[tuple[str, dict[str, str]]]:
    blocks: list[tuple[str, dict[str, str]]] = [("", {})]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"{source}:{lineno}: bad section header {raw.strip()!r}")
            blocks.append((line[1:-1].strip(), {}))
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        entries = blocks[-1][1]
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    if not blocks[0][1]:
        blocks.pop(0)
    return blocks


def read_blocks(path) -> list[tuple[str, dict[str, str]]]:
    path = Path(path)
    return parse_blocks(path.read_text(), source=str(path))


def to_floats(value: str, n: int | None = None, key: str = "?") -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in value.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from exc
    if n is not None and len(out) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got {len(out)}")
    return out


def to_ints(value: str, key: str = "?") -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected integers, got {value!r}") from exc


def to_bool(value: str, key: str = "?") -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")
