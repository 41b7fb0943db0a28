"""``key=value`` text files used for model configs and task specs."""

from collections.abc import Mapping
from enum import Enum
from pathlib import Path
from typing import Any

from structured_nart.errors import DataError


def format_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)  # pyright: ignore[reportUnknownVariableType, reportUnknownArgumentType]
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


def dump_kv(values: Mapping[str, Any]) -> str:
    """Render a mapping as ``key=value`` lines, preserving key order."""
    return "".join(f"{key}={format_value(value)}\n" for key, value in values.items())


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines, skipping blanks and ``#`` comments.

    Raises:
        DataError: On a line without ``=`` or a repeated key.
    """
    result: dict[str, str] = {}
    for line_num, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise DataError(f"line {line_num}: expected key=value, got {raw!r}")
        if key in result:
            raise DataError(f"line {line_num}: duplicate key {key!r}")
        result[key] = value.strip()
    return result


def read_kv_file(path: Path) -> dict[str, str]:
    return parse_kv(path.read_text(encoding="utf-8"))


def write_kv_file(path: Path, values: Mapping[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_kv(values), encoding="utf-8")
