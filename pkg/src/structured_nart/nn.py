"""Transformer building blocks on top of ``structured_nart.tensor``.

Layers are small callables that fetch their weights from a shared
``ParameterStore`` under dotted names (``enc.0.attn.wq.weight``). The
store is the single source of truth for saving, loading and optimising.
"""

import math
import zlib
from collections.abc import Iterable, Iterator, Mapping

import numpy as np
from numpy.typing import NDArray

from structured_nart.errors import ContractError, RefusalError
from structured_nart.tensor import (
    MASK_VALUE,
    Array,
    Tensor,
    dropout,
    glorot_uniform,
    layer_norm,
    masked_fill,
    matmul,
    parameter,
    relu,
    softmax,
)


class ParameterStore:
    """Named learnable tensors with order-independent, seeded initialisation.

    Each parameter draws from its own generator seeded by ``(seed, crc32(name))``,
    so adding or removing one parameter never changes the others.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self._params: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def _add(self, name: str, data: Array) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} registered twice")
        tensor = parameter(data, name=name)
        self._params[name] = tensor
        return tensor

    def rng_for(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def weight(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, glorot_uniform(self.rng_for(name), shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(name, np.ones(shape))

    def arrays(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, Array], names: Iterable[str] | None = None) -> None:
        """Overwrite parameters in place from ``arrays``.

        Raises:
            RefusalError: Naming the first parameter that is missing or has a
                different shape.
        """
        selected = list(self._params) if names is None else list(names)
        for name in selected:
            if name not in arrays:
                raise RefusalError(f"checkpoint has no parameter {name!r}")
            target = self._params[name]
            if arrays[name].shape != target.shape:
                raise RefusalError(
                    f"parameter {name!r}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {target.shape}"
                )
        for name in selected:
            self._params[name].data[...] = arrays[name]

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None


class Linear:
    """``x @ weight + bias`` with a ``d_in x d_out`` weight."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int) -> None:
        self.weight = store.weight(f"{name}.weight", (d_in, d_out))
        self.bias = store.zeros(f"{name}.bias", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int) -> None:
        self.gain = store.ones(f"{name}.gain", (dim,))
        self.bias = store.zeros(f"{name}.bias", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two linear maps with a ReLU between: ``max(0, x W1 + b1) W2 + b2``."""
    return relu(x @ w1 + b1) @ w2 + b2


class FeedForward:
    def __init__(
        self, store: ParameterStore, name: str, d_in: int, d_hidden: int, d_out: int
    ) -> None:
        self.inner = Linear(store, f"{name}.inner", d_in, d_hidden)
        self.outer = Linear(store, f"{name}.outer", d_hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ffn(x, self.inner.weight, self.inner.bias, self.outer.weight, self.outer.bias)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: NDArray[np.bool_] | None = None) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    ``mask`` is true at disallowed (query, key) pairs.

    Raises:
        ContractError: If some query row has every key masked.
    """
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        if mask.all(axis=-1).any():
            raise ContractError("attention mask disallows every key for some query")
        logits = masked_fill(logits, np.broadcast_to(mask, logits.shape), MASK_VALUE)
    return matmul(softmax(logits, axis=-1), v)


def causal_mask(length: int) -> NDArray[np.bool_]:
    """True above the diagonal: query i may not see key j > i."""
    return np.triu(np.ones((length, length), dtype=np.bool_), k=1)


def sinusoidal_encoding(length: int, dim: int) -> Array:
    """Fixed sine/cosine position encodings, ``length x dim``."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table


class MultiHeadAttention:
    """Heads split the model dimension; each runs ``attention`` independently."""

    def __init__(self, store: ParameterStore, name: str, d_model: int, num_heads: int) -> None:
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.wq = Linear(store, f"{name}.wq", d_model, d_model)
        self.wk = Linear(store, f"{name}.wk", d_model, d_model)
        self.wv = Linear(store, f"{name}.wv", d_model, d_model)
        self.wo = Linear(store, f"{name}.wo", d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        length = x.shape[0]
        return x.reshape(length, self.num_heads, self.head_dim).swapaxes(0, 1)

    def __call__(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        mask: NDArray[np.bool_] | None = None,
    ) -> Tensor:
        heads = attention(
            self._split(self.wq(query)),
            self._split(self.wk(key)),
            self._split(self.wv(value)),
            mask,
        )
        merged = heads.swapaxes(0, 1).reshape(query.shape[0], self.num_heads * self.head_dim)
        return self.wo(merged)


class Residual:
    """Post-norm residual wrapper: ``norm(x + dropout(sublayer_out))``."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rate: float) -> None:
        self.norm = LayerNorm(store, f"{name}.norm", dim)
        self.rate = rate

    def __call__(self, x: Tensor, out: Tensor, rng: np.random.Generator | None) -> Tensor:
        if rng is not None:
            out = dropout(out, self.rate, rng)
        return self.norm(x + out)
