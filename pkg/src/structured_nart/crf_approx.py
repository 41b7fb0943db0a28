"""Scalable CRF for large label sets.

Transitions are never stored as a ``V x V`` matrix. They are factored as
``E1 @ E2.T`` (optionally with a position-dependent ``d_t x d_t`` matrix
produced from adjacent decoder states in between), and only the
``k x k`` blocks between the beams of adjacent positions are computed.

The partition function and Viterbi decoding then run on that beam
lattice in ``O(n k^2)``.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from structured_nart.crf_exact import chain_marginals, max_plus
from structured_nart.errors import ContractError, RefusalError, ShapeError
from structured_nart.nn import FeedForward, ParameterStore
from structured_nart.tensor import (
    Array,
    Tensor,
    apply_op,
    concat,
    embedding,
    gather,
    reduce_sum,
)

logger = logging.getLogger(__name__)

# Largest label set for which ``CrfTransitions.dense`` will build full matrices.
DENSE_LIMIT = 4096


def _as_ids(ids: Sequence[int] | NDArray[np.int64], num_labels: int) -> NDArray[np.int64]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= num_labels):
        raise ContractError(f"label ids must lie in [0, {num_labels})")
    return arr


class TransitionFactors:
    """Transition embeddings ``E1, E2`` of shape ``V x d_t``; ``M = E1 @ E2.T``."""

    def __init__(self, e1: Tensor, e2: Tensor) -> None:
        if e1.ndim != 2 or e1.shape != e2.shape:
            raise ShapeError(f"transition embeddings differ: {e1.shape} vs {e2.shape}")
        self.e1 = e1
        self.e2 = e2

    @classmethod
    def create(
        cls, store: ParameterStore, name: str, num_labels: int, dim: int
    ) -> "TransitionFactors":
        return cls(
            store.weight(f"{name}.e1", (num_labels, dim)),
            store.weight(f"{name}.e2", (num_labels, dim)),
        )

    @property
    def num_labels(self) -> int:
        return self.e1.shape[0]

    @property
    def dim(self) -> int:
        return self.e1.shape[1]


def static_transition_block(
    e1: Tensor,
    e2: Tensor,
    rows: Sequence[int] | NDArray[np.int64],
    cols: Sequence[int] | NDArray[np.int64],
) -> Tensor:
    """``block[a, b] = <E1[rows[a]], E2[cols[b]]>`` without forming ``E1 @ E2.T``.

    ``rows``/``cols`` may carry a leading batch axis, giving one block per entry.
    """
    left = embedding(e1, _as_ids(rows, e1.shape[0]))
    right = embedding(e2, _as_ids(cols, e2.shape[0]))
    return left @ right.swapaxes(-1, -2)


class DynamicTransitionNet:
    """Two-layer FFN ``f: R^(2 d_model) -> R^(d_t x d_t)`` over adjacent states."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        d_model: int,
        transition_dim: int,
        d_hidden: int | None = None,
    ) -> None:
        self.d_model = d_model
        self.transition_dim = transition_dim
        self.ff = FeedForward(
            store, name, 2 * d_model, d_hidden or d_model, transition_dim * transition_dim
        )

    def __call__(self, h_prev: Tensor, h_cur: Tensor) -> Tensor:
        for h in (h_prev, h_cur):
            if h.data.size != self.d_model:
                raise ShapeError(f"decoder state has {h.data.size} entries, expected {self.d_model}")
        pair = concat([h_prev.reshape(1, self.d_model), h_cur.reshape(1, self.d_model)], axis=1)
        return self.ff(pair).reshape(self.transition_dim, self.transition_dim)

    def matrices(self, hidden: Tensor) -> Tensor:
        """One ``d_t x d_t`` matrix per adjacent pair of rows of ``hidden``."""
        n = hidden.shape[0]
        if hidden.ndim != 2 or hidden.shape[1] != self.d_model:
            raise ShapeError(f"hidden states {hidden.shape} do not have width {self.d_model}")
        pairs = concat([hidden[:-1], hidden[1:]], axis=1)
        return self.ff(pairs).reshape(n - 1, self.transition_dim, self.transition_dim)


def dynamic_transition_block(
    net: DynamicTransitionNet,
    e1: Tensor,
    e2: Tensor,
    h_prev: Tensor,
    h_cur: Tensor,
    rows: Sequence[int] | NDArray[np.int64],
    cols: Sequence[int] | NDArray[np.int64],
) -> Tensor:
    """``block[a, b] = E1[rows[a]] @ f([h_prev, h_cur]) @ E2[cols[b]]``."""
    left = embedding(e1, _as_ids(rows, e1.shape[0]))
    right = embedding(e2, _as_ids(cols, e2.shape[0]))
    return left @ net(h_prev, h_cur) @ right.swapaxes(-1, -2)


class CrfTransitions:
    """Transition scorer of a model: static factors plus an optional dynamic net."""

    def __init__(
        self, factors: TransitionFactors, dynamic: DynamicTransitionNet | None = None
    ) -> None:
        self.factors = factors
        self.dynamic = dynamic

    def blocks(self, cand: NDArray[np.int64], hidden: Tensor | None = None) -> Tensor | None:
        """Cropped ``(n-1) x k x k`` blocks between adjacent beams, or None if n == 1."""
        if cand.shape[0] < 2:
            return None
        left = embedding(self.factors.e1, cand[:-1])
        right = embedding(self.factors.e2, cand[1:])
        if self.dynamic is not None:
            if hidden is None:
                raise ContractError("dynamic transitions need decoder hidden states")
            left = left @ self.dynamic.matrices(hidden)
        return left @ right.swapaxes(-1, -2)

    def dense(self, length: int, hidden: Tensor | None = None) -> Array:
        """Full transition matrix (static) or ``(n-1) x V x V`` stack (dynamic).

        Raises:
            RefusalError: If V exceeds ``DENSE_LIMIT``.
        """
        num_labels = self.factors.num_labels
        if num_labels > DENSE_LIMIT:
            raise RefusalError(f"refusing to materialise a {num_labels}^2 transition matrix")
        e1, e2 = self.factors.e1.data, self.factors.e2.data
        if self.dynamic is None:
            return e1 @ e2.T
        if hidden is None:
            raise ContractError("dynamic transitions need decoder hidden states")
        if length < 2:
            return np.zeros((0, num_labels, num_labels))
        middle = self.dynamic.matrices(hidden).data
        return e1[None] @ middle @ e2.T[None]


@dataclass(frozen=True)
class BeamLattice:
    """Per-position candidate labels with the transition blocks between them.

    ``cand`` is ``n x k_eff`` (descending label score, except that a forced
    gold label takes the last slot), ``cand_scores`` the matching emission
    scores, ``trans_blocks`` the ``(n-1) x k_eff x k_eff`` transition scores
    (None when ``n == 1`` or when the model has no transitions).
    """

    cand: NDArray[np.int64]
    cand_scores: Tensor
    trans_blocks: Tensor | None
    gold_index: NDArray[np.int64] | None = None

    @property
    def length(self) -> int:
        return int(self.cand.shape[0])

    @property
    def width(self) -> int:
        return int(self.cand.shape[1])

    def transition_data(self) -> Array:
        if self.trans_blocks is None:
            return np.zeros((self.length - 1, self.width, self.width))
        return self.trans_blocks.data


def select_candidates(
    scores: Array, k: int, gold: Sequence[int] | None = None
) -> tuple[NDArray[np.int64], NDArray[np.int64] | None]:
    """Top-``k`` labels per row (ties to the smaller id), with gold forcing.

    Returns:
        ``(cand, gold_index)``; ``gold_index`` is None without gold.
    """
    if k < 1:
        raise ContractError(f"beam size must be positive, got {k}")
    n, num_labels = scores.shape
    k_eff = min(k, num_labels)
    cand = np.argsort(-scores, axis=1, kind="stable")[:, :k_eff].astype(np.int64)
    if gold is None:
        return cand, None

    labels = _as_ids(gold, num_labels)
    if labels.shape != (n,):
        raise ContractError(f"gold length {labels.size} does not match sequence length {n}")
    gold_index = np.empty(n, dtype=np.int64)
    for i in range(n):
        hits = np.flatnonzero(cand[i] == labels[i])
        if hits.size:
            gold_index[i] = hits[0]
        else:
            cand[i, -1] = labels[i]
            gold_index[i] = k_eff - 1
    return cand, gold_index


def build_beam(
    scores: Tensor,
    k: int,
    *,
    transitions: CrfTransitions | None = None,
    gold: Sequence[int] | None = None,
    hidden: Tensor | None = None,
) -> BeamLattice:
    """Truncate each position to its ``k`` best labels and crop the transitions.

    With ``gold``, each gold label replaces the lowest-scoring candidate of
    its position unless already present, so the lattice contains the gold path.
    """
    if scores.ndim != 2:
        raise ShapeError(f"label scores must be n x V, got {scores.shape}")
    cand, gold_index = select_candidates(scores.data, k, gold)
    rows = np.arange(cand.shape[0])[:, None]
    cand_scores = gather(scores, (rows, cand))
    blocks = transitions.blocks(cand, hidden) if transitions is not None else None
    return BeamLattice(cand=cand, cand_scores=cand_scores, trans_blocks=blocks, gold_index=gold_index)


def chain_log_partition(emissions: Tensor, blocks: Tensor | None) -> Tensor:
    """Log partition of an ``n x k`` chain; gradients are the posterior marginals."""
    n, k = emissions.shape
    trans = blocks.data if blocks is not None else np.zeros((n - 1, k, k))
    log_z, unary, pairwise = chain_marginals(emissions.data, trans)

    if blocks is None:
        return apply_op(np.asarray(log_z), (emissions,), lambda g: (g * unary,))
    return apply_op(
        np.asarray(log_z), (emissions, blocks), lambda g: (g * unary, g * pairwise)
    )


def beam_log_partition(lattice: BeamLattice) -> Tensor:
    """Forward algorithm over the ``k_eff^n`` paths confined to the lattice."""
    return chain_log_partition(lattice.cand_scores, lattice.trans_blocks)


def beam_viterbi(lattice: BeamLattice) -> tuple[list[int], float]:
    """Best lattice path as label ids, and its score; ties to the smaller id."""
    n = lattice.length
    order = np.argsort(lattice.cand, axis=1, kind="stable")
    cand = np.take_along_axis(lattice.cand, order, axis=1)
    emissions = np.take_along_axis(lattice.cand_scores.data, order, axis=1)
    trans = lattice.transition_data()
    if n > 1:
        trans = trans[
            np.arange(n - 1)[:, None, None], order[:-1][:, :, None], order[1:][:, None, :]
        ]
    index, score = max_plus(emissions, trans)
    return [int(cand[i, j]) for i, j in enumerate(index)], score


def lattice_path_score(lattice: BeamLattice, index: NDArray[np.int64]) -> Tensor:
    """Score of the path picking beam slot ``index[i]`` at each position."""
    n = lattice.length
    total = reduce_sum(gather(lattice.cand_scores, (np.arange(n), index)))
    if lattice.trans_blocks is not None:
        total = total + reduce_sum(
            gather(lattice.trans_blocks, (np.arange(n - 1), index[:-1], index[1:]))
        )
    return total


def locate_gold(lattice: BeamLattice, gold: Sequence[int]) -> NDArray[np.int64]:
    """Beam slot of each gold label.

    Raises:
        ContractError: If a gold label is missing from its position's beam.
    """
    labels = np.asarray(gold, dtype=np.int64)
    if labels.shape != (lattice.length,):
        raise ContractError(
            f"gold length {labels.size} does not match lattice length {lattice.length}"
        )
    hits = lattice.cand == labels[:, None]
    missing = np.flatnonzero(~hits.any(axis=1))
    if missing.size:
        raise ContractError(f"gold label missing from beam at positions {missing.tolist()}")
    return np.argmax(hits, axis=1).astype(np.int64)


def crf_nll(lattice: BeamLattice, gold: Sequence[int]) -> Tensor:
    """Beam-approximated negative log-likelihood of ``gold``; differentiable."""
    index = locate_gold(lattice, gold)
    return beam_log_partition(lattice) - lattice_path_score(lattice, index)
