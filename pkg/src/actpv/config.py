"""Flat ``key = value`` experiment files with ``include = other.cfg``.

Later lines override earlier ones; an include is expanded in place, so keys
after it override the included file. Paths in includes are relative to the
including file. ``#`` starts a comment.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigurationError


def read_config(path, _seen=None) -> dict[str, str]:
    path = Path(path).resolve()
    seen = set() if _seen is None else _seen
    if path in seen:
        raise ConfigurationError(f"include cycle through {path}")
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    seen = seen | {path}
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key == "include":
            out.update(read_config(path.parent / value, seen))
        else:
            out[key] = value
    return out


def write_config(path, values: dict) -> None:
    lines = [f"{k} = {_fmt(v)}" for k, v in sorted(values.items()) if v is not None]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)
