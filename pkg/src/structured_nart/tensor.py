"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap float64 numpy arrays. Ops always compute eagerly; when a
``Tape`` is active and one of the inputs requires gradients, the op also
appends a record holding a closure that maps the output gradient onto
input gradients. ``Tape.backward`` replays those records in reverse.

Outside a tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from contextvars import ContextVar, Token
from dataclasses import dataclass
from types import TracebackType
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from structured_nart.errors import ContractError, ShapeError

Array = NDArray[np.float64]
Index = Any
BackwardFn = Callable[[Array], Sequence[Array | None]]

# Added before softmax at disallowed positions; exp() of it underflows to 0.
MASK_VALUE = -1e9

_ACTIVE_TAPE: ContextVar[Tape | None] = ContextVar("active_tape", default=None)


class Tensor:
    """An immutable dense array with an optional gradient slot."""

    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(
        self,
        data: ArrayLike,
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError(f"empty tensor of shape {arr.shape}")
        self.data: Array = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, _lift(other))

    def __radd__(self, other: float) -> Tensor:
        return add(_lift(other), self)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return add(self, neg(_lift(other)))

    def __rsub__(self, other: float) -> Tensor:
        return add(_lift(other), neg(self))

    def __mul__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other: float) -> Tensor:
        return scale(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: Index) -> Tensor:
        return gather(self, index)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def _lift(value: Tensor | float) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass(frozen=True, slots=True)
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of the ops applied while it is active.

    A tape belongs to one training step on one thread. Use it as a context
    manager, then call ``backward`` on a scalar produced inside it.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._token: Token[Tape | None] | None = None

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> Tape:
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], fn: BackwardFn) -> None:
        self._records.append(_Record(output, inputs, fn))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

        Raises:
            ContractError: If ``loss`` is not a scalar produced on this tape.
        """
        if loss.data.size != 1 or loss.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any parameter on this tape")

        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        produced = {id(rec.output) for rec in self._records}

        for rec in reversed(self._records):
            grad_out = grads.pop(id(rec.output), None)
            if grad_out is None:
                continue
            for tensor, grad in zip(rec.inputs, rec.backward(grad_out), strict=True):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
                if key not in produced:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            tensor.grad = grads[key]


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def apply_op(data: Array, inputs: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of an op, recording it when a tape is active.

    ``fn`` receives the gradient of the output and returns one gradient (or
    None) per input, in order.
    """
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    if tracked and tape is not None:
        tape.record(out, inputs, fn)
    return out


def parameter(data: ArrayLike, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)) over the last two dims."""
    fan_in, fan_out = (shape[0], shape[0]) if len(shape) == 1 else shape[-2:]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from e


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return apply_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return apply_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return apply_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    return apply_op(a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def backward(g: Array) -> tuple[Array, Array]:
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return apply_op(a.data @ b.data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return apply_op(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,))


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    def backward(g: Array) -> tuple[Array]:
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return apply_op(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a: Tensor) -> Tensor:
    return scale(reduce_sum(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from e
    return apply_op(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))
    return apply_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def np_logsumexp(x: Array, axis: int | None = None) -> Array:
    """Max-shifted log-sum-exp over ``axis`` (all entries when None)."""
    if x.size == 0:
        raise ShapeError("logsumexp of an empty array")
    peak = np.max(x, axis=axis, keepdims=True)
    total = np.log(np.sum(np.exp(x - peak), axis=axis, keepdims=True)) + peak
    return total.reshape(()) if axis is None else np.squeeze(total, axis=axis)


def np_softmax(x: Array, axis: int = -1) -> Array:
    shifted = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    probs = np_softmax(a.data, axis)

    def backward(g: Array) -> tuple[Array]:
        return (probs * (g - np.sum(g * probs, axis=axis, keepdims=True)),)

    return apply_op(probs, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = a.data - np.expand_dims(np_logsumexp(a.data, axis), axis)
    probs = np.exp(out)

    def backward(g: Array) -> tuple[Array]:
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return apply_op(out, (a,), backward)


def logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    out = np_logsumexp(a.data, axis)

    def backward(g: Array) -> tuple[Array]:
        expanded_out = out if axis is None else np.expand_dims(out, axis)
        expanded_g = g if axis is None else np.expand_dims(g, axis)
        return (expanded_g * np.exp(a.data - expanded_out),)

    return apply_op(np.asarray(out), (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} vs input {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd

    def backward(g: Array) -> tuple[Array, Array, Array]:
        dxhat = g * gain.data
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply_op(xhat * gain.data + bias.data, (x, gain, bias), backward)


def gather(a: Tensor, index: Index) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in the gradient."""
    try:
        data = np.array(a.data[index], dtype=np.float64)
    except IndexError as e:
        raise ContractError(f"index out of range for shape {a.shape}: {e}") from e

    def backward(g: Array) -> tuple[Array]:
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return apply_op(data, (a,), backward)


def embedding(table: Tensor, ids: Sequence[int] | NDArray[np.int64]) -> Tensor:
    """Row lookup ``table[ids]``."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"embedding id out of range [0, {table.shape[0]})")
    return gather(table, idx)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of no tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat shapes incompatible: {[t.shape for t in tensors]}") from e
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: Array) -> list[Array]:
        return list(np.split(g, splits, axis=axis))

    return apply_op(data, tuple(tensors), backward)


def masked_fill(a: Tensor, mask: NDArray[np.bool_], value: float) -> Tensor:
    """Replace entries where ``mask`` is true; those entries get zero gradient."""
    try:
        data = np.where(mask, value, a.data)
    except ValueError as e:
        raise ShapeError(f"mask {mask.shape} does not fit {a.shape}") from e
    if data.shape != a.shape:
        raise ShapeError(f"mask {mask.shape} does not fit {a.shape}")
    return apply_op(data, (a,), lambda g: (np.where(mask, 0.0, g),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip it entirely when not training."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return apply_op(a.data * keep, (a,), lambda g: (g * keep,))
