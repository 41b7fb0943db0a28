"""CSV/TSV reading and writing for result rows.

Every file starts with a ``# config:`` comment row recording the full
configuration, followed by a header row naming the columns.
"""

import csv
import logging
from collections.abc import Iterator, Mapping, Sequence
from pathlib import Path
from typing import Any, TextIO, TypeVar

from pydantic import BaseModel, ValidationError

from structured_nart.kvfile import format_value

logger = logging.getLogger(__name__)

R = TypeVar("R", bound=BaseModel)

CONFIG_PREFIX = "# config:"


def format_config(config: Mapping[str, Any]) -> str:
    return " ".join(f"{key}={format_value(value)}" for key, value in config.items())


def write_csv(
    path: Path,
    rows: Sequence[R],
    row_type: type[R],
    config: Mapping[str, Any],
    *,
    delimiter: str = ",",
) -> Path:
    """Write rows with a config comment row and a header row.

    Returns:
        ``path``, for chaining into log messages.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(row_type.model_fields)
    with path.open(mode="w", encoding="utf-8", newline="") as f:
        f.write(f"{CONFIG_PREFIX} {format_config(config)}\n")
        writer = csv.DictWriter(f, fieldnames=columns, delimiter=delimiter, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.model_dump().items()})
    return path


def read_config_row(path: Path) -> dict[str, str]:
    """Parse the ``# config:`` row of a file written by ``write_csv``."""
    with path.open(mode="r", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
    if not first.startswith(CONFIG_PREFIX):
        return {}
    pairs = (item.partition("=") for item in first[len(CONFIG_PREFIX) :].split())
    return {key: value for key, _, value in pairs}


def read_columns(path: Path, *, delimiter: str = ",") -> list[str]:
    """Column names from the header row, after any comment rows."""
    with path.open(mode="r", encoding="utf-8", newline="") as f:
        lines = (line for line in f if not line.startswith("#"))
        return next(csv.reader(lines, delimiter=delimiter), [])


def read_csv(path: Path, row_type: type[R], *, delimiter: str = ",") -> list[R]:
    """Parse a CSV file into rows.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    with path.open(mode="r", encoding="utf-8", newline="") as f:
        return list(parse_csv_stream(f, row_type, delimiter=delimiter))


def parse_csv_stream(
    stream: TextIO, row_type: type[R], *, delimiter: str = ","
) -> Iterator[R]:
    """Yield valid rows, skipping comment lines and malformed rows with a warning."""
    lines = (line for line in stream if not line.startswith("#"))
    reader = csv.DictReader(lines, delimiter=delimiter)

    for row_num, row in enumerate(reader, start=2):
        try:
            yield parse_row(row, row_type)
        except ValidationError as e:
            logger.warning("Skipping row %d: %s", row_num, e.errors()[0]["msg"])


def parse_row(row: Mapping[str, str | None], row_type: type[R]) -> R:
    """Convert a ``csv.DictReader`` row to ``row_type``; empty cells become None."""
    return row_type.model_validate({k: (v if v != "" else None) for k, v in row.items()})
