"""Checkpoint directories.

A checkpoint is a directory holding three files:

- ``params.npz``: one named array per parameter (numpy's zip container keeps
  dtype and shape headers per entry),
- ``model.cfg``: the model configuration as ``key=value`` lines,
- ``vocab.txt``: the vocabulary, one token per line in id order.

Loading a saved directory gives back bit-identical arrays.
"""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from structured_nart.errors import DataError
from structured_nart.kvfile import read_kv_file, write_kv_file
from structured_nart.tensor import Array

logger = logging.getLogger(__name__)

PARAMS_FILE = "params.npz"
CONFIG_FILE = "model.cfg"
VOCAB_FILE = "vocab.txt"


@dataclass(frozen=True)
class Checkpoint:
    """Raw checkpoint content, before it is turned into a model."""

    arrays: dict[str, Array]
    config: dict[str, str]
    vocab_tokens: list[str]


def save_checkpoint(
    directory: Path,
    arrays: Mapping[str, Array],
    config: Mapping[str, Any],
    vocab_tokens: Sequence[str],
) -> Path:
    """Write a checkpoint directory, creating it if needed.

    Returns:
        The checkpoint directory.
    """
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / PARAMS_FILE).open("wb") as f:
        np.savez(f, **{name: np.asarray(value) for name, value in arrays.items()})
    write_kv_file(directory / CONFIG_FILE, config)
    (directory / VOCAB_FILE).write_text(
        "".join(f"{token}\n" for token in vocab_tokens), encoding="utf-8"
    )
    logger.debug("saved %d arrays to %s", len(arrays), directory)
    return directory


def load_checkpoint(directory: Path) -> Checkpoint:
    """Read a checkpoint directory written by ``save_checkpoint``.

    Raises:
        DataError: If a required file is missing.
    """
    for required in (PARAMS_FILE, CONFIG_FILE, VOCAB_FILE):
        if not (directory / required).is_file():
            raise DataError(f"checkpoint {directory} is missing {required}")

    with np.load(directory / PARAMS_FILE) as archive:
        arrays = {name: np.array(archive[name], dtype=np.float64) for name in archive.files}
    tokens = (directory / VOCAB_FILE).read_text(encoding="utf-8").split("\n")
    if tokens and tokens[-1] == "":
        tokens.pop()
    return Checkpoint(
        arrays=arrays,
        config=read_kv_file(directory / CONFIG_FILE),
        vocab_tokens=tokens,
    )
