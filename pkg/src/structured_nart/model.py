"""Toy-scale Transformer encoder-decoders.

``NartModel`` decodes every target position in one parallel pass from a
decoder input of ``<pad>`` symbols followed by ``<eos>``, optionally with a
CRF transition scorer on top. ``TeacherModel`` is a causal decoder used
to rescore candidates and as the autoregressive latency baseline.
"""

import logging
from collections.abc import Mapping, Sequence
from enum import StrEnum
from pathlib import Path
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from structured_nart.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from structured_nart.crf_approx import CrfTransitions, DynamicTransitionNet, TransitionFactors
from structured_nart.data import EOS, PAD, Vocab
from structured_nart.errors import ContractError, DataError, RefusalError
from structured_nart.nn import (
    FeedForward,
    Linear,
    MultiHeadAttention,
    ParameterStore,
    Residual,
    causal_mask,
    sinusoidal_encoding,
)
from structured_nart.tensor import Tensor, embedding, gather, log_softmax, reduce_sum

logger = logging.getLogger(__name__)

CRF_PREFIX = "crf."


class Variant(StrEnum):
    NAR = "nar"
    TEACHER = "teacher"


class TransitionMode(StrEnum):
    NONE = "none"
    STATIC = "static"
    DYNAMIC = "dynamic"


class ModelConfig(BaseModel):
    """Architecture of one model; saved as ``model.cfg`` in checkpoints."""

    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(gt=0, description="Shared source/target vocabulary size")
    num_layers: int = Field(default=2, gt=0)
    d_model: int = Field(default=64, gt=0)
    num_heads: int = Field(default=4, gt=0)
    d_ffn: int = Field(default=128, gt=0)
    max_len: int = Field(default=64, gt=0)
    variant: Variant = Variant.NAR
    transition: TransitionMode = TransitionMode.NONE
    transition_dim: int = Field(default=32, gt=0, description="d_t")
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    length_bias: int = Field(default=0, description="C, estimated from the training corpus")
    seed: int = 0

    @model_validator(mode="after")
    def _check_shapes(self) -> Self:
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.variant is Variant.TEACHER and self.transition is not TransitionMode.NONE:
            raise ValueError("the autoregressive teacher has no CRF transitions")
        return self

    @classmethod
    def from_kv(cls, values: Mapping[str, str]) -> "ModelConfig":
        return cls.model_validate(dict(values))

    def to_kv(self) -> dict[str, object]:
        return self.model_dump(mode="json")


class EncoderLayer:
    def __init__(self, store: ParameterStore, name: str, config: ModelConfig) -> None:
        d = config.d_model
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", d, config.num_heads)
        self.ffn = FeedForward(store, f"{name}.ffn", d, config.d_ffn, d)
        self.res_attn = Residual(store, f"{name}.res_attn", d, config.dropout)
        self.res_ffn = Residual(store, f"{name}.res_ffn", d, config.dropout)

    def __call__(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        x = self.res_attn(x, self.self_attn(x, x, x), rng)
        return self.res_ffn(x, self.ffn(x), rng)


class NarDecoderLayer:
    """Unmasked self-attention, positional attention, cross-attention, FFN."""

    def __init__(self, store: ParameterStore, name: str, config: ModelConfig) -> None:
        d, heads = config.d_model, config.num_heads
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", d, heads)
        self.pos_attn = MultiHeadAttention(store, f"{name}.pos_attn", d, heads)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", d, heads)
        self.ffn = FeedForward(store, f"{name}.ffn", d, config.d_ffn, d)
        self.res = [Residual(store, f"{name}.res{i}", d, config.dropout) for i in range(4)]

    def __call__(
        self, x: Tensor, positions: Tensor, context: Tensor, rng: np.random.Generator | None
    ) -> Tensor:
        x = self.res[0](x, self.self_attn(x, x, x), rng)
        x = self.res[1](x, self.pos_attn(positions, positions, x), rng)
        x = self.res[2](x, self.cross_attn(x, context, context), rng)
        return self.res[3](x, self.ffn(x), rng)


class CausalDecoderLayer:
    def __init__(self, store: ParameterStore, name: str, config: ModelConfig) -> None:
        d, heads = config.d_model, config.num_heads
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", d, heads)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", d, heads)
        self.ffn = FeedForward(store, f"{name}.ffn", d, config.d_ffn, d)
        self.res = [Residual(store, f"{name}.res{i}", d, config.dropout) for i in range(3)]

    def __call__(self, x: Tensor, context: Tensor, rng: np.random.Generator | None) -> Tensor:
        x = self.res[0](x, self.self_attn(x, x, x, causal_mask(x.shape[0])), rng)
        x = self.res[1](x, self.cross_attn(x, context, context), rng)
        return self.res[2](x, self.ffn(x), rng)


def label_scores(hidden: Tensor, proj: Linear) -> Tensor:
    """Emission scores ``hidden @ W + b``, shape ``n x V``."""
    return proj(hidden)


class _Seq2Seq:
    """Shared embedding table, position encodings and encoder stack."""

    def __init__(self, config: ModelConfig) -> None:
        self.config = config
        self.params = ParameterStore(config.seed)
        self.embed = self.params.weight("embed", (config.vocab_size, config.d_model))
        self.encoder = [
            EncoderLayer(self.params, f"enc.{i}", config) for i in range(config.num_layers)
        ]
        self.positions = sinusoidal_encoding(config.max_len, config.d_model)
        self.dropout_rng: np.random.Generator | None = None

    def train_mode(self, rng: np.random.Generator) -> None:
        self.dropout_rng = rng if self.config.dropout > 0 else None

    def eval_mode(self) -> None:
        self.dropout_rng = None

    def _check_length(self, length: int, what: str) -> None:
        if length < 1:
            raise ContractError(f"{what} length must be positive, got {length}")
        if length > self.config.max_len:
            raise RefusalError(f"{what} length {length} exceeds max_len {self.config.max_len}")

    def _embed(self, ids: Sequence[int]) -> Tensor:
        return embedding(self.embed, ids) + Tensor(self.positions[: len(ids)])

    def encode(self, src: Sequence[int]) -> Tensor:
        """Context states ``T x d_model`` for source ids."""
        self._check_length(len(src), "source")
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, self.dropout_rng)
        return x


class NartModel(_Seq2Seq):
    """Non-autoregressive decoder with optional CRF transitions."""

    def __init__(self, config: ModelConfig) -> None:
        if config.variant is not Variant.NAR:
            raise ContractError(f"NartModel needs variant 'nar', got {config.variant}")
        super().__init__(config)
        self.decoder = [
            NarDecoderLayer(self.params, f"dec.{i}", config) for i in range(config.num_layers)
        ]
        self.proj = Linear(self.params, "proj", config.d_model, config.vocab_size)
        self.crf: CrfTransitions | None = None
        if config.transition is not TransitionMode.NONE:
            factors = TransitionFactors.create(
                self.params, "crf", config.vocab_size, config.transition_dim
            )
            dynamic = None
            if config.transition is TransitionMode.DYNAMIC:
                dynamic = DynamicTransitionNet(
                    self.params, "crf.dynamic", config.d_model, config.transition_dim
                )
            self.crf = CrfTransitions(factors, dynamic)

    def decode_hidden(self, context: Tensor, length: int) -> Tensor:
        """Decoder states ``length x d_model``; the input never sees target tokens."""
        self._check_length(length, "target")
        x = self._embed([PAD] * (length - 1) + [EOS])
        positions = Tensor(self.positions[:length])
        for layer in self.decoder:
            x = layer(x, positions, context, self.dropout_rng)
        return x

    def label_scores(self, hidden: Tensor) -> Tensor:
        return label_scores(hidden, self.proj)

    def forward(self, src: Sequence[int], length: int) -> tuple[Tensor, Tensor]:
        """Return ``(hidden, label_scores)`` for one source sentence."""
        hidden = self.decode_hidden(self.encode(src), length)
        return hidden, self.label_scores(hidden)

    def shared_parameter_names(self) -> list[str]:
        """Parameters a vanilla NART checkpoint can provide."""
        return [name for name in self.params if not name.startswith(CRF_PREFIX)]


class TeacherModel(_Seq2Seq):
    """Left-to-right decoder; ``<eos>`` doubles as the start symbol."""

    def __init__(self, config: ModelConfig) -> None:
        if config.variant is not Variant.TEACHER:
            raise ContractError(f"TeacherModel needs variant 'teacher', got {config.variant}")
        super().__init__(config)
        self.decoder = [
            CausalDecoderLayer(self.params, f"dec.{i}", config) for i in range(config.num_layers)
        ]
        self.proj = Linear(self.params, "proj", config.d_model, config.vocab_size)

    def step_logits(self, context: Tensor, prefix: Sequence[int]) -> Tensor:
        """Next-token logits after each prefix position, ``len(prefix) x V``."""
        self._check_length(len(prefix), "target")
        x = self._embed(prefix)
        for layer in self.decoder:
            x = layer(x, context, self.dropout_rng)
        return self.proj(x)

    def token_logprobs(self, src: Sequence[int], tgt: Sequence[int]) -> Tensor:
        """``log p(tgt_i | tgt_<i, src)`` for every position i."""
        context = self.encode(src)
        logp = log_softmax(self.step_logits(context, [EOS, *tgt[:-1]]), axis=-1)
        return gather(logp, (np.arange(len(tgt)), np.asarray(tgt, dtype=np.int64)))

    def greedy_decode(self, src: Sequence[int], max_len: int | None = None) -> list[int]:
        """Step-by-step argmax decoding until ``<eos>``; recomputes the prefix each step."""
        limit = min(max_len or self.config.max_len, self.config.max_len - 1)
        context = self.encode(src)
        prefix = [EOS]
        while len(prefix) <= limit:
            logits = self.step_logits(context, prefix).data[-1]
            token = int(np.argmax(logits))
            if token == EOS:
                break
            prefix.append(token)
        return prefix[1:]


Model = NartModel | TeacherModel


def teacher_logprob(model: Model, src: Sequence[int], tgt: Sequence[int]) -> float:
    """Sum of causal log-probabilities of ``tgt`` given ``src``.

    Raises:
        ContractError: If ``model`` is not the autoregressive teacher.
    """
    if not isinstance(model, TeacherModel):
        raise ContractError("teacher_logprob needs the autoregressive teacher variant")
    if not tgt:
        raise ContractError("target must not be empty")
    return reduce_sum(model.token_logprobs(src, tgt)).item()


def build_model(config: ModelConfig) -> Model:
    if config.variant is Variant.TEACHER:
        return TeacherModel(config)
    return NartModel(config)


def save_model(model: Model, directory: Path, vocab: Vocab) -> Path:
    if len(vocab) != model.config.vocab_size:
        raise DataError(
            f"vocab has {len(vocab)} tokens but the model expects {model.config.vocab_size}"
        )
    return save_checkpoint(directory, model.params.arrays(), model.config.to_kv(), vocab.tokens)


def model_from_checkpoint(checkpoint: Checkpoint) -> tuple[Model, Vocab]:
    config = ModelConfig.from_kv(checkpoint.config)
    model = build_model(config)
    model.params.load_arrays(checkpoint.arrays)
    vocab = Vocab(checkpoint.vocab_tokens)
    if len(vocab) != config.vocab_size:
        raise DataError(f"checkpoint vocab has {len(vocab)} tokens, config says {config.vocab_size}")
    return model, vocab


def load_model(directory: Path) -> tuple[Model, Vocab]:
    model, vocab = model_from_checkpoint(load_checkpoint(directory))
    logger.info("loaded %s model from %s", model.config.variant, directory)
    return model, vocab
