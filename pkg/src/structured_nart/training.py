"""Losses, the Adam optimiser, warm starting and the training loop.

A step draws a batch of sentence pairs, sums per-sentence losses on one
tape in a fixed order, back-propagates once and applies Adam. CRF models
optimise ``crf_nll + lambda * nar_loss`` with the gold path forced into
every beam.
"""

import logging
import math
import timeit
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from structured_nart.checkpoint import load_checkpoint
from structured_nart.crf_approx import build_beam, crf_nll
from structured_nart.csv_io import write_csv
from structured_nart.data import EOS, Pair, ParallelCorpus
from structured_nart.errors import ContractError, DataError, DivergenceError, RefusalError
from structured_nart.model import Model, NartModel, TeacherModel, save_model
from structured_nart.records import StepMetrics
from structured_nart.tensor import (
    Array,
    Tape,
    Tensor,
    concat,
    log_softmax,
    mean,
    mul,
    reduce_sum,
)

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"


class TrainConfig(BaseModel):
    """Optimisation settings; the model architecture lives in ``ModelConfig``."""

    lambda_weight: float = Field(default=0.5, ge=0, description="lambda of the joint loss")
    label_smoothing: float = Field(default=0.1, ge=0, lt=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=16, gt=0)
    max_steps: int = Field(default=200, gt=0)
    crf_beam: int = Field(default=64, ge=1, description="k of the beam approximation")
    seed: int = 0
    warmup: Path | None = None
    clip_norm: float | None = Field(default=None, gt=0)
    save_every: int = Field(default=0, ge=0, description="0 keeps only the final checkpoint")
    log_every: int = Field(default=10, gt=0)


def nar_loss(scores: Tensor, gold: Sequence[int], smoothing: float = 0.0) -> Tensor:
    """Mean label-smoothed cross-entropy over positions.

    The target puts ``1 - smoothing`` on the gold label and spreads
    ``smoothing`` uniformly over all V labels.

    Raises:
        ContractError: If ``gold`` does not match the number of positions.
    """
    n, num_labels = scores.shape
    labels = np.asarray(gold, dtype=np.int64)
    if labels.shape != (n,):
        raise ContractError(f"gold length {labels.size} does not match {n} positions")
    target = np.full((n, num_labels), smoothing / num_labels)
    target[np.arange(n), labels] += 1.0 - smoothing
    return -(reduce_sum(mul(log_softmax(scores, axis=-1), Tensor(target))) * (1.0 / n))


def joint_loss(crf: Tensor, nar: Tensor, weight: float) -> Tensor:
    """``crf + weight * nar``."""
    return crf + nar * weight


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Array],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    Raises:
        ContractError: If a gradient is missing or shaped unlike its parameter.
    """
    for name, param in params.items():
        if name not in grads or grads[name].shape != param.shape:
            got = grads[name].shape if name in grads else None
            raise ContractError(f"gradient for {name!r} has shape {got}, expected {param.shape}")

    state.step += 1
    correction1 = 1.0 - config.beta1**state.step
    correction2 = 1.0 - config.beta2**state.step
    for name, param in params.items():
        grad = grads[name]
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m *= config.beta1
        m += (1.0 - config.beta1) * grad
        v *= config.beta2
        v += (1.0 - config.beta2) * grad * grad
        param.data -= (
            config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
        )
    return state


def clip_gradients(grads: dict[str, Array], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns:
        The norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def warm_start(model: NartModel, checkpoint: Path) -> NartModel:
    """Load encoder, decoder and label projection from a vanilla NART checkpoint.

    CRF parameters keep their fresh initialisation.

    Raises:
        RefusalError: Naming the first shared parameter whose shape differs.
    """
    saved = load_checkpoint(checkpoint)
    names = model.shared_parameter_names()
    model.params.load_arrays(saved.arrays, names)
    logger.info("warm-started %d parameters from %s", len(names), checkpoint)
    return model


@dataclass
class SentenceLoss:
    total: Tensor
    nar: float
    crf: float = 0.0


def sentence_loss(
    model: Model, src: Sequence[int], tgt: Sequence[int], config: TrainConfig
) -> SentenceLoss:
    if isinstance(model, TeacherModel):
        logits = model.step_logits(model.encode(src), [EOS, *tgt])
        nar = nar_loss(logits, [*tgt, EOS], config.label_smoothing)
        return SentenceLoss(total=nar, nar=nar.item())

    hidden, scores = model.forward(src, len(tgt))
    nar = nar_loss(scores, tgt, config.label_smoothing)
    if model.crf is None:
        return SentenceLoss(total=nar, nar=nar.item())
    lattice = build_beam(scores, config.crf_beam, transitions=model.crf, gold=tgt, hidden=hidden)
    crf = crf_nll(lattice, tgt)
    return SentenceLoss(
        total=joint_loss(crf, nar, config.lambda_weight), nar=nar.item(), crf=crf.item()
    )


def mean_nar_loss(model: NartModel, pairs: Sequence[Pair], smoothing: float = 0.0) -> float:
    """Average NAR loss over ``pairs`` without recording gradients."""
    total = 0.0
    for src, tgt in pairs:
        _, scores = model.forward(src, len(tgt))
        total += nar_loss(scores, tgt, smoothing).item()
    return total / len(pairs)


def iterate_batches(
    pairs: Sequence[Pair], batch_size: int, rng: np.random.Generator
) -> Iterator[list[Pair]]:
    """Endless shuffled epochs; batches are bucketed by target length."""
    window = batch_size * 8
    while True:
        order = rng.permutation(len(pairs))
        batches: list[list[Pair]] = []
        for start in range(0, len(order), window):
            bucket = sorted(order[start : start + window], key=lambda i: len(pairs[i][1]))
            batches.extend(
                [pairs[i] for i in bucket[j : j + batch_size]]
                for j in range(0, len(bucket), batch_size)
            )
        for b in rng.permutation(len(batches)):
            yield batches[b]


@dataclass
class TrainResult:
    metrics: list[StepMetrics]
    checkpoint: Path | None = None


def _check_corpus(model: Model, corpus: ParallelCorpus) -> None:
    if not corpus.pairs:
        raise RefusalError("training needs a non-empty dataset")
    if len(corpus.vocab) != model.config.vocab_size:
        raise DataError(
            f"corpus vocab has {len(corpus.vocab)} tokens, model expects {model.config.vocab_size}"
        )
    # The teacher reads tgt + <eos> as a prefix.
    extra = 1 if isinstance(model, TeacherModel) else 0
    corpus.check_max_len(model.config.max_len - extra)


def train(
    model: Model,
    config: TrainConfig,
    corpus: ParallelCorpus,
    *,
    output_dir: Path | None = None,
) -> TrainResult:
    """Run ``config.max_steps`` optimisation steps.

    With ``output_dir``, the final checkpoint and ``metrics.csv`` are written
    there, and every ``save_every`` steps a snapshot goes to
    ``output_dir/checkpoints/step-N``.

    Raises:
        DivergenceError: As soon as a batch loss is not finite.
    """
    _check_corpus(model, corpus)
    if config.warmup is not None:
        if not isinstance(model, NartModel):
            raise ContractError("warm starting applies to non-autoregressive models only")
        warm_start(model, config.warmup)

    rng = np.random.default_rng(config.seed)
    batches = iterate_batches(corpus.pairs, config.batch_size, rng)
    state = AdamState()
    metrics: list[StepMetrics] = []
    model.train_mode(rng)
    params = dict(model.params.items())

    try:
        for step in range(1, config.max_steps + 1):
            batch = next(batches)
            started = timeit.default_timer()
            with Tape() as tape:
                losses = [sentence_loss(model, src, tgt, config) for src, tgt in batch]
                loss = mean(concat([item.total.reshape(1) for item in losses]))
            if not math.isfinite(loss.item()):
                raise DivergenceError(step, f"loss is {loss.item()}")

            model.params.zero_grad()
            tape.backward(loss)
            grads = {
                name: p.grad if p.grad is not None else np.zeros_like(p.data)
                for name, p in params.items()
            }
            if config.clip_norm is not None:
                norm = clip_gradients(grads, config.clip_norm)
                if norm > config.clip_norm:
                    logger.warning("step %d: clipped gradient norm %.3f", step, norm)
            adam_step(params, grads, state, config)

            row = StepMetrics(
                step=step,
                crf_nll=float(np.mean([item.crf for item in losses])),
                nar_loss=float(np.mean([item.nar for item in losses])),
                joint_loss=loss.item(),
                wall_ms=(timeit.default_timer() - started) * 1000.0,
            )
            metrics.append(row)
            if step % config.log_every == 0 or step == config.max_steps:
                logger.info(
                    "step %d crf_nll=%.4f nar_loss=%.4f joint_loss=%.4f (%.0f ms)",
                    step, row.crf_nll, row.nar_loss, row.joint_loss, row.wall_ms,
                )
            if output_dir is not None and config.save_every and step % config.save_every == 0:
                save_model(model, output_dir / "checkpoints" / f"step-{step}", corpus.vocab)
    finally:
        model.eval_mode()

    result = TrainResult(metrics=metrics)
    if output_dir is not None:
        result.checkpoint = save_model(model, output_dir, corpus.vocab)
        run_config = {**model.config.to_kv(), **config.model_dump(mode="json")}
        write_csv(output_dir / METRICS_FILE, metrics, StepMetrics, run_config)
        logger.info("wrote checkpoint and metrics to %s", output_dir)
    return result
