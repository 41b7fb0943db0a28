"""Length rules, candidate decoding and rescoring.

A source of length T is decoded at every length in
``[T + C - B, T + C + B]`` (clamped to ``[1, max_len]``). Each length yields
one candidate, by per-position argmax (``nar``) or by Viterbi over the
beam lattice (``crf``), and a scorer picks the winner.
"""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, Field

from structured_nart.crf_approx import beam_viterbi, build_beam
from structured_nart.data import EOS, ParallelCorpus
from structured_nart.errors import ContractError, RefusalError
from structured_nart.model import NartModel, TeacherModel, teacher_logprob
from structured_nart.tensor import Array, Tensor

logger = logging.getLogger(__name__)

Scorer = Callable[["Candidate"], float]


class DecodeMode(StrEnum):
    NAR = "nar"
    CRF = "crf"


class LengthRule(BaseModel):
    """``T' = T + bias``, widened to ``2 * half_width + 1`` candidate lengths."""

    bias: int = 0
    half_width: int = Field(default=0, ge=0)
    max_len: int = Field(default=64, gt=0)


class Candidate(BaseModel):
    tokens: list[int] = Field(min_length=1)
    decode_score: float
    rescore: float | None = None


def predict_length(source_length: int, rule: LengthRule) -> int:
    if source_length < 1:
        raise ContractError(f"source length must be positive, got {source_length}")
    return min(max(source_length + rule.bias, 1), rule.max_len)


def candidate_lengths(source_length: int, rule: LengthRule) -> list[int]:
    """Distinct clamped lengths around ``T + C``, ascending."""
    centre = source_length + rule.bias
    span = range(centre - rule.half_width, centre + rule.half_width + 1)
    return sorted({min(max(length, 1), rule.max_len) for length in span})


def decode_nar(scores: Tensor | Array) -> list[int]:
    """Independent per-position argmax; ties go to the smaller id."""
    data = scores.data if isinstance(scores, Tensor) else scores
    return [int(i) for i in np.argmax(data, axis=-1)]


def _nar_candidate(scores: Tensor) -> Candidate:
    tokens = decode_nar(scores)
    score = float(scores.data[np.arange(len(tokens)), tokens].sum())
    return Candidate(tokens=tokens, decode_score=score)


def _crf_candidate(model: NartModel, hidden: Tensor, scores: Tensor, k: int) -> Candidate:
    lattice = build_beam(scores, k, transitions=model.crf, hidden=hidden)
    tokens, score = beam_viterbi(lattice)
    return Candidate(tokens=tokens, decode_score=score)


def decode_crf(model: NartModel, src: Sequence[int], length: int, k: int) -> Candidate:
    """Viterbi decode of one source at one target length over a width-``k`` beam."""
    hidden, scores = model.forward(src, length)
    return _crf_candidate(model, hidden, scores, k)


class TeacherScorer:
    """Scores candidates by teacher log-probability of ``tokens + <eos>``.

    With ``normalize`` the sum is divided by the candidate length, so short
    candidates are not favoured just for having fewer terms.
    """

    def __init__(self, teacher: TeacherModel, *, normalize: bool = True) -> None:
        self.teacher = teacher
        self.normalize = normalize

    def __call__(self, src: Sequence[int], candidate: Candidate) -> float:
        logprob = teacher_logprob(self.teacher, src, [*candidate.tokens, EOS])
        return logprob / len(candidate.tokens) if self.normalize else logprob

    def bind(self, src: Sequence[int]) -> Scorer:
        return lambda candidate: self(src, candidate)


def length_normalized_score(candidate: Candidate) -> float:
    """Fallback scorer when no teacher is configured."""
    return candidate.decode_score / len(candidate.tokens)


def rescore_select(candidates: Sequence[Candidate], scorer: Scorer) -> Candidate:
    """Highest-scoring candidate, ties to the shorter then the smaller sequence.

    Raises:
        ContractError: If ``candidates`` is empty.
    """
    if not candidates:
        raise ContractError("rescoring needs at least one candidate")
    scored = [(scorer(c), c) for c in candidates]
    value, best = min(scored, key=lambda item: (-item[0], len(item[1].tokens), item[1].tokens))
    return best.model_copy(update={"rescore": value})


def decode_sentence(
    model: NartModel,
    src: Sequence[int],
    rule: LengthRule,
    *,
    mode: DecodeMode = DecodeMode.CRF,
    k: int = 64,
    teacher: TeacherScorer | None = None,
) -> Candidate:
    """Decode every candidate length from one encoder pass and select the best.

    A single candidate is returned unscored unless a teacher is given.
    """
    if mode is DecodeMode.CRF and k < 1:
        raise ContractError(f"beam size must be positive, got {k}")
    context = model.encode(src)
    candidates: list[Candidate] = []
    for length in candidate_lengths(len(src), rule):
        hidden = model.decode_hidden(context, length)
        scores = model.label_scores(hidden)
        if mode is DecodeMode.CRF:
            candidates.append(_crf_candidate(model, hidden, scores, k))
        else:
            candidates.append(_nar_candidate(scores))

    if teacher is not None:
        return rescore_select(candidates, teacher.bind(src))
    if len(candidates) == 1:
        return candidates[0]
    return rescore_select(candidates, length_normalized_score)


def estimate_length_bias(corpus: ParallelCorpus) -> int:
    """``round(mean(len(tgt) - len(src)))`` over the corpus.

    Raises:
        RefusalError: On an empty corpus.
    """
    if not corpus.pairs:
        raise RefusalError("cannot estimate a length bias from an empty corpus")
    diffs = [len(tgt) - len(src) for src, tgt in corpus.pairs]
    return int(round(float(np.mean(diffs))))


def decode_corpus(
    model: NartModel,
    sources: Sequence[Sequence[int]],
    rule: LengthRule,
    *,
    mode: DecodeMode = DecodeMode.CRF,
    k: int = 64,
    teacher: TeacherScorer | None = None,
    workers: int = 1,
) -> list[Candidate]:
    """Decode sentences in input order, on a thread pool when ``workers > 1``."""
    if workers < 1:
        raise ContractError(f"workers must be positive, got {workers}")

    def run(src: Sequence[int]) -> Candidate:
        return decode_sentence(model, src, rule, mode=mode, k=k, teacher=teacher)

    logger.info(
        "decoding %d sentences (mode=%s, k=%d, lengths=%d, workers=%d)",
        len(sources), mode, k, 2 * rule.half_width + 1, workers,
    )
    if workers == 1:
        return [run(src) for src in sources]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, sources))
