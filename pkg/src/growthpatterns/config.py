"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Values are kept as
strings; list values are comma-separated and split by :func:`as_floats`.
"""

from __future__ import annotations

from growthpatterns.errors import DataError


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"config line {n}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise DataError(f"config line {n}: empty key")
        key = key.replace("-", "_")
        if key in out:
            raise DataError(f"config line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None


def as_floats(value: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise DataError(f"expected comma-separated numbers, got {value!r}") from None
