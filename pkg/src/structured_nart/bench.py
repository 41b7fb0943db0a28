"""Beam-size sweeps and decoding latency measurements.

Latency is the wall time of the decode call alone at batch size 1,
averaged over ``runs`` timed passes after ``warmup`` untimed ones.
"""

import logging
import statistics
import timeit
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import partial

import numpy as np

from structured_nart.bleu import bleu
from structured_nart.crf_approx import CrfTransitions, TransitionFactors, beam_viterbi, build_beam
from structured_nart.data import Pair, Vocab
from structured_nart.errors import ContractError
from structured_nart.inference import (
    DecodeMode,
    LengthRule,
    decode_crf,
    decode_nar,
    decode_sentence,
    predict_length,
)
from structured_nart.model import NartModel, TeacherModel
from structured_nart.records import LatencyRow, SweepRow
from structured_nart.tasks import MultimodalTask, consistency_rate
from structured_nart.tensor import Tensor

logger = logging.getLogger(__name__)

SWEEP_KS = (1, 2, 4, 8, 16, 32, 64, 128, 256)
KERNEL_KS = (8, 16, 32, 64, 128)


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    std_ms: float
    samples: tuple[float, ...]


def time_call(fn: Callable[[], object], runs: int = 5, warmup: int = 1) -> TimingStats:
    """Time ``fn`` ``runs`` times after ``warmup`` untimed calls."""
    if runs < 1:
        raise ContractError(f"runs must be positive, got {runs}")
    for _ in range(warmup):
        fn()
    samples: list[float] = []
    for _ in range(runs):
        start = timeit.default_timer()
        fn()
        samples.append((timeit.default_timer() - start) * 1000.0)
    return TimingStats(statistics.fmean(samples), statistics.pstdev(samples), tuple(samples))


def fit_exponent(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Slope of ``log y`` against ``log x``; ``y ~ x**slope``."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ContractError("need at least two matching points to fit an exponent")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), deg=1)
    return float(slope)


def sweep_ks(num_labels: int, ks: Sequence[int] = SWEEP_KS) -> list[int]:
    """``ks`` clamped to the vocabulary size, deduplicated, ascending."""
    return sorted({min(k, num_labels) for k in ks})


def bench_beam_kernel(
    num_labels: int = 1024,
    length: int = 16,
    ks: Sequence[int] = KERNEL_KS,
    *,
    transition_dim: int = 32,
    runs: int = 5,
    seed: int = 0,
) -> tuple[list[LatencyRow], float]:
    """Time beam construction plus Viterbi on random scores.

    Returns:
        One row per k and the fitted exponent of time against k.
    """
    rng = np.random.default_rng(seed)
    scores = Tensor(rng.normal(size=(length, num_labels)))
    factors = TransitionFactors(
        Tensor(rng.normal(size=(num_labels, transition_dim)) / np.sqrt(transition_dim)),
        Tensor(rng.normal(size=(num_labels, transition_dim))),
    )
    transitions = CrfTransitions(factors)

    rows: list[LatencyRow] = []
    for k in ks:
        stats = time_call(
            lambda k=k: beam_viterbi(build_beam(scores, k, transitions=transitions)), runs
        )
        rows.append(
            LatencyRow(
                decoder="beam-kernel", n=length, k=k, mean_ms=stats.mean_ms, std_ms=stats.std_ms
            )
        )
        logger.debug("kernel k=%d: %.3f ms", k, stats.mean_ms)
    exponent = fit_exponent([r.k for r in rows], [r.mean_ms for r in rows])
    logger.info("beam kernel time grows as k^%.2f at V=%d", exponent, num_labels)
    return rows, exponent


def bench_latency(
    model: NartModel,
    sources: Sequence[Sequence[int]],
    rule: LengthRule,
    *,
    ks: Sequence[int] = (1, 16, 64),
    teacher: TeacherModel | None = None,
    runs: int = 5,
    warmup: int = 1,
) -> list[LatencyRow]:
    """Per-sentence latency of NAR argmax, CRF Viterbi at each k and stepwise AR.

    Every sentence is timed on its own, ``runs`` times after ``warmup``
    untimed calls; a row's mean and std are over all those samples.
    """
    if not sources:
        raise ContractError("latency benchmark needs at least one sentence")
    lengths = [predict_length(len(src), rule) for src in sources]
    mean_len = int(round(float(np.mean(lengths))))
    work = list(zip(sources, lengths, strict=True))

    def row(
        decoder: str, decode_one: Callable[[Sequence[int], int], object], k: int = 0
    ) -> LatencyRow:
        samples: list[float] = []
        for src, length in work:
            stats = time_call(partial(decode_one, src, length), runs, warmup)
            samples.extend(stats.samples)
        result = LatencyRow(
            decoder=decoder,
            n=mean_len,
            k=k,
            mean_ms=statistics.fmean(samples),
            std_ms=statistics.pstdev(samples),
        )
        logger.info("%s k=%d: %.2f ms/sentence", decoder, k, result.mean_ms)
        return result

    def nar_one(src: Sequence[int], length: int) -> None:
        decode_nar(model.forward(src, length)[1])

    rows = [row("nar", nar_one)]
    for k in ks:

        def crf_one(src: Sequence[int], length: int, k: int = k) -> None:
            decode_crf(model, src, length, k)

        rows.append(row("crf", crf_one, k))

    if teacher is not None:

        def ar_one(src: Sequence[int], length: int) -> None:
            teacher.greedy_decode(src, length)

        rows.append(row("ar", ar_one))
    return rows


def sweep_beam(
    model: NartModel,
    pairs: Sequence[Pair],
    vocab: Vocab,
    rule: LengthRule,
    *,
    ks: Sequence[int] = SWEEP_KS,
    task: MultimodalTask | None = None,
) -> list[SweepRow]:
    """Decode ``pairs`` with one fixed checkpoint at every beam size.

    Consistency is reported when the multimodal ``task`` is given.
    """
    if not pairs:
        raise ContractError("beam sweep needs at least one sentence pair")
    references = [vocab.decode(tgt) for _, tgt in pairs]
    source_tokens = [vocab.decode(src) for src, _ in pairs]
    rows: list[SweepRow] = []
    for k in sweep_ks(model.config.vocab_size, ks):
        hypotheses: list[list[str]] = []
        elapsed: list[float] = []
        for src, _ in pairs:
            start = timeit.default_timer()
            candidate = decode_sentence(model, src, rule, mode=DecodeMode.CRF, k=k)
            elapsed.append((timeit.default_timer() - start) * 1000.0)
            hypotheses.append(vocab.decode(candidate.tokens))
        consistency = (
            consistency_rate(hypotheses, source_tokens, task) if task is not None else None
        )
        rows.append(
            SweepRow(
                k=k,
                bleu=bleu(hypotheses, references),
                consistency=consistency,
                mean_latency_ms=statistics.fmean(elapsed),
            )
        )
        logger.info("k=%d bleu=%.2f", k, rows[-1].bleu)
    return rows
