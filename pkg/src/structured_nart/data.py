"""Vocabulary and parallel corpus handling.

Corpora are plain text, one sentence per line, with source and target in
separate files. Tokenisation is whitespace splitting (``word``) or
characters with spaces kept as ``SPACE_TOKEN`` (``char``).
"""

import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

from structured_nart.errors import DataError, RefusalError

logger = logging.getLogger(__name__)

PAD, EOS, UNK = 0, 1, 2
RESERVED_TOKENS = ("<pad>", "<eos>", "<unk>")
SPACE_TOKEN = "▁"

Pair = tuple[list[int], list[int]]


class TokenMode(StrEnum):
    WORD = "word"
    CHAR = "char"


def tokenize(line: str, mode: TokenMode = TokenMode.WORD) -> list[str]:
    if mode is TokenMode.CHAR:
        return [SPACE_TOKEN if ch == " " else ch for ch in " ".join(line.split())]
    return line.split()


def detokenize(tokens: Sequence[str], mode: TokenMode = TokenMode.WORD) -> str:
    if mode is TokenMode.CHAR:
        return "".join(" " if tok == SPACE_TOKEN else tok for tok in tokens)
    return " ".join(tokens)


class Vocab:
    """Token/id bijection with ``<pad>=0``, ``<eos>=1``, ``<unk>=2``."""

    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise DataError(f"vocabulary must start with {RESERVED_TOKENS}")
        self.tokens: list[str] = list(tokens)
        self._ids = {token: i for i, token in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(tuple(self.tokens))

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(token) for token in tokens]

    def decode(self, ids: Iterable[int], *, strip_special: bool = True) -> list[str]:
        """Map ids back to tokens, dropping ``<pad>``/``<eos>`` by default."""
        skipped = (PAD, EOS) if strip_special else ()
        return [self.tokens[i] for i in ids if i not in skipped]


def encode_known(
    vocab: Vocab, sentences: Sequence[Sequence[str]], *, origin: str = "input"
) -> list[list[int]]:
    """Encode with a fixed vocabulary, logging how many tokens it lacks.

    Raises:
        RefusalError: If some sentence has no token in the vocabulary, which
            means the text and the vocabulary come from different tasks.
    """
    encoded = [vocab.encode(tokens) for tokens in sentences]
    unknown = sum(ids.count(UNK) for ids in encoded)
    if unknown:
        total = sum(len(ids) for ids in encoded)
        logger.warning("%s: %d of %d tokens are not in the vocabulary", origin, unknown, total)
    for num, ids in enumerate(encoded, start=1):
        if ids and all(i == UNK for i in ids):
            raise RefusalError(f"{origin}: sentence {num} has no token in the vocabulary")
    return encoded


def build_vocab(sentences: Iterable[Sequence[str]]) -> Vocab:
    """Assign ids by descending frequency (first occurrence breaks ties).

    Raises:
        RefusalError: If there are no tokens at all.
    """
    counts: Counter[str] = Counter()
    for tokens in sentences:
        counts.update(tokens)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    if not counts:
        raise RefusalError("cannot build a vocabulary from an empty corpus")
    return Vocab([*RESERVED_TOKENS, *(token for token, _ in counts.most_common())])


def build_vocab_from_text(lines: Iterable[str], mode: TokenMode = TokenMode.WORD) -> Vocab:
    return build_vocab(tokenize(line, mode) for line in lines)


@dataclass
class ParallelCorpus:
    """Id-encoded sentence pairs sharing one vocabulary."""

    vocab: Vocab
    pairs: list[Pair] = field(default_factory=list)

    def __post_init__(self) -> None:
        for line_num, (src, tgt) in enumerate(self.pairs, start=1):
            if not src or not tgt:
                raise DataError(f"pair {line_num} has an empty side")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[int]]:
        return [src for src, _ in self.pairs]

    @property
    def targets(self) -> list[list[int]]:
        return [tgt for _, tgt in self.pairs]

    def check_max_len(self, max_len: int) -> None:
        for line_num, (src, tgt) in enumerate(self.pairs, start=1):
            if len(src) > max_len or len(tgt) > max_len:
                raise DataError(f"pair {line_num} exceeds max_len {max_len}")

    def with_targets(self, targets: Sequence[Sequence[int]]) -> "ParallelCorpus":
        """Same sources, replaced targets (e.g. a distilled corpus)."""
        if len(targets) != len(self.pairs):
            raise DataError(f"{len(targets)} targets for {len(self.pairs)} sources")
        pairs = [(src, list(tgt)) for src, tgt in zip(self.sources, targets, strict=True)]
        return ParallelCorpus(self.vocab, pairs)


def read_lines(path: Path) -> list[str]:
    with path.open(mode="r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def write_lines(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open(mode="w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def read_parallel_text(
    src_path: Path, tgt_path: Path, mode: TokenMode = TokenMode.WORD
) -> list[tuple[list[str], list[str]]]:
    """Tokenised pairs; pairs with an empty side are skipped with a warning.

    Raises:
        DataError: If the two files differ in line count.
    """
    src_lines, tgt_lines = read_lines(src_path), read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise DataError(
            f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}"
        )
    pairs: list[tuple[list[str], list[str]]] = []
    for line_num, (src, tgt) in enumerate(zip(src_lines, tgt_lines, strict=True), start=1):
        src_tokens, tgt_tokens = tokenize(src, mode), tokenize(tgt, mode)
        if not src_tokens or not tgt_tokens:
            logger.warning("Skipping line %d: empty side", line_num)
            continue
        pairs.append((src_tokens, tgt_tokens))
    return pairs


def load_corpus(
    src_path: Path,
    tgt_path: Path,
    *,
    mode: TokenMode = TokenMode.WORD,
    vocab: Vocab | None = None,
) -> ParallelCorpus:
    """Read and encode a parallel corpus, building a vocabulary if none is given.

    Raises:
        RefusalError: If the corpus has no usable pairs, or a sentence shares
            no token with ``vocab``.
    """
    text_pairs = read_parallel_text(src_path, tgt_path, mode)
    if not text_pairs:
        raise RefusalError(f"no usable sentence pairs in {src_path} / {tgt_path}")
    if vocab is None:
        vocab = build_vocab(tokens for pair in text_pairs for tokens in pair)
    sources = encode_known(vocab, [s for s, _ in text_pairs], origin=str(src_path))
    targets = encode_known(vocab, [t for _, t in text_pairs], origin=str(tgt_path))
    return ParallelCorpus(vocab, list(zip(sources, targets, strict=True)))


def write_parallel_text(
    src_path: Path,
    tgt_path: Path,
    pairs: Iterable[tuple[Sequence[str], Sequence[str]]],
    mode: TokenMode = TokenMode.WORD,
) -> None:
    materialised = list(pairs)
    write_lines(src_path, (detokenize(src, mode) for src, _ in materialised))
    write_lines(tgt_path, (detokenize(tgt, mode) for _, tgt in materialised))
