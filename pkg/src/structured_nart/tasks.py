"""Synthetic translation tasks.

The multimodal task maps each source symbol to one of several synonym
phrases chosen uniformly at random, so a source sentence has many valid
translations. A translation is *consistent* when it splits into one
complete phrase per source symbol; mixing tokens from two synonyms of the
same symbol is exactly the failure non-autoregressive decoders show.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Self

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from structured_nart.errors import ContractError
from structured_nart.kvfile import read_kv_file, write_kv_file

logger = logging.getLogger(__name__)

TextPair = tuple[list[str], list[str]]
Phrase = tuple[str, ...]


class MultimodalTaskSpec(BaseModel):
    """Parameters of the synonym-phrase task; stored as ``key=value`` text."""

    num_symbols: int = Field(default=20, gt=0)
    phrases_per_symbol: int = Field(default=3, gt=0)
    phrase_lengths: tuple[int, ...] = (1, 2)
    min_len: int = Field(default=3, gt=0)
    max_len: int = Field(default=10, gt=0)
    train_size: int = Field(default=5000, ge=0)
    test_size: int = Field(default=500, ge=0)
    seed: int = 0

    @field_validator("phrase_lengths", mode="before")
    @classmethod
    def _split_lengths(cls, value: object) -> object:
        if isinstance(value, str):
            return tuple(int(part) for part in value.split(",") if part.strip())
        return value

    @model_validator(mode="after")
    def _check_ranges(self) -> Self:
        if not self.phrase_lengths or any(not 1 <= n <= 3 for n in self.phrase_lengths):
            raise ValueError("phrase lengths must lie in 1..3")
        if self.min_len > self.max_len:
            raise ValueError(f"min_len {self.min_len} > max_len {self.max_len}")
        return self

    @classmethod
    def from_file(cls, path: Path) -> "MultimodalTaskSpec":
        return cls.model_validate(read_kv_file(path))

    def to_file(self, path: Path) -> None:
        write_kv_file(path, self.model_dump())


@dataclass(frozen=True)
class MultimodalTask:
    """Synonym groups: each source symbol owns distinct target phrases."""

    spec: MultimodalTaskSpec
    groups: dict[str, tuple[Phrase, ...]]

    @classmethod
    def build(cls, spec: MultimodalTaskSpec) -> "MultimodalTask":
        rng = np.random.default_rng(spec.seed)
        groups: dict[str, tuple[Phrase, ...]] = {}
        for g in range(spec.num_symbols):
            lengths = rng.choice(spec.phrase_lengths, size=spec.phrases_per_symbol)
            groups[f"s{g}"] = tuple(
                tuple(f"w{g}_{j}_{p}" for p in range(int(length)))
                for j, length in enumerate(lengths)
            )
        return cls(spec, groups)

    def sample_pair(self, rng: np.random.Generator) -> TextPair:
        symbols = list(self.groups)
        length = int(rng.integers(self.spec.min_len, self.spec.max_len + 1))
        src = [symbols[int(i)] for i in rng.integers(0, len(symbols), size=length)]
        tgt: list[str] = []
        for symbol in src:
            phrases = self.groups[symbol]
            tgt.extend(phrases[int(rng.integers(0, len(phrases)))])
        return src, tgt

    def is_consistent(self, src: Sequence[str], hyp: Sequence[str]) -> bool:
        """True when ``hyp`` splits into one whole group phrase per source symbol."""
        reachable = {0}
        for symbol in src:
            phrases = self.groups.get(symbol)
            if phrases is None:
                return False
            reachable = {
                start + len(phrase)
                for start in reachable
                for phrase in phrases
                if tuple(hyp[start : start + len(phrase)]) == phrase
            }
            if not reachable:
                return False
        return len(hyp) in reachable


@dataclass(frozen=True)
class MultimodalCorpus:
    task: MultimodalTask
    train: list[TextPair]
    test: list[TextPair]


def gen_multimodal(spec: MultimodalTaskSpec) -> MultimodalCorpus:
    """Generate train and test pairs; identical for identical specs."""
    task = MultimodalTask.build(spec)
    rng = np.random.default_rng([spec.seed, 1])
    train = [task.sample_pair(rng) for _ in range(spec.train_size)]
    test = [task.sample_pair(rng) for _ in range(spec.test_size)]
    logger.debug("generated %d train / %d test pairs", len(train), len(test))
    return MultimodalCorpus(task, train, test)


def consistency_rate(
    hypotheses: Sequence[Sequence[str]], sources: Sequence[Sequence[str]], task: MultimodalTask
) -> float:
    """Fraction of hypotheses whose every phrase slot is one whole group phrase.

    Raises:
        ContractError: On an empty or mismatched hypothesis list.
    """
    if not hypotheses:
        raise ContractError("consistency rate of an empty hypothesis set")
    if len(hypotheses) != len(sources):
        raise ContractError(f"{len(hypotheses)} hypotheses for {len(sources)} sources")
    hits = sum(task.is_consistent(src, hyp) for src, hyp in zip(sources, hypotheses, strict=True))
    return hits / len(hypotheses)


def gen_copy_task(
    num_pairs: int = 50,
    vocab_size: int = 12,
    *,
    min_len: int = 2,
    max_len: int = 6,
    seed: int = 0,
) -> list[TextPair]:
    """Pairs whose target repeats the source; ``vocab_size`` counts reserved ids."""
    rng = np.random.default_rng(seed)
    symbols = [f"c{i}" for i in range(vocab_size - 3)]
    pairs: list[TextPair] = []
    for _ in range(num_pairs):
        length = int(rng.integers(min_len, max_len + 1))
        src = [symbols[int(i)] for i in rng.integers(0, len(symbols), size=length)]
        pairs.append((src, list(src)))
    return pairs
