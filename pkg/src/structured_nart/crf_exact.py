"""Exact linear-chain CRF over a full transition matrix.

Scores are an ``n x V`` array of emission scores; transitions are either a
single ``V x V`` matrix shared by every adjacent pair, or a stack of
``n-1`` matrices (one per pair), which is what dynamic transitions
materialise to. All dynamic programs run in log space.

The chain kernels (``forward_log_alpha``, ``backward_log_beta``,
``chain_marginals``, ``max_plus``) work on any chain of width ``k`` and are
shared with the beam lattice in ``crf_approx``.
"""

import itertools
from collections.abc import Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field

from structured_nart.errors import ContractError, RefusalError, ShapeError
from structured_nart.tensor import Array, np_logsumexp, np_softmax

BRUTE_FORCE_LIMIT = 10**7


class CRFResult(BaseModel):
    """Exact decoding summary for one sequence."""

    log_partition: float
    best_path: list[int] = Field(min_length=1)
    best_path_score: float


def _check_scores(scores: Array) -> tuple[int, int]:
    if scores.ndim != 2 or scores.size == 0:
        raise ShapeError(f"label scores must be a non-empty n x V matrix, got {scores.shape}")
    return scores.shape[0], scores.shape[1]


def position_transitions(scores: Array, transitions: Array) -> Array:
    """Return transitions as an ``(n-1) x V x V`` stack.

    Raises:
        ShapeError: If the transitions fit neither the shared nor the stacked form.
    """
    n, num_labels = _check_scores(scores)
    if transitions.shape == (num_labels, num_labels):
        return np.broadcast_to(transitions, (n - 1, num_labels, num_labels))
    if transitions.shape == (n - 1, num_labels, num_labels):
        return transitions
    raise ShapeError(
        f"transitions {transitions.shape} fit neither {(num_labels, num_labels)} "
        f"nor {(n - 1, num_labels, num_labels)}"
    )


def _check_path(path: Sequence[int], n: int, num_labels: int) -> NDArray[np.int64]:
    labels = np.asarray(path, dtype=np.int64)
    if labels.shape != (n,):
        raise ContractError(f"path length {labels.size} does not match sequence length {n}")
    if labels.min() < 0 or labels.max() >= num_labels:
        raise ContractError(f"path labels must lie in [0, {num_labels})")
    return labels


def forward_log_alpha(emissions: Array, transitions: Array) -> Array:
    """Log forward messages ``alpha[i, b]`` for an ``n x k`` chain."""
    n = emissions.shape[0]
    alpha = np.empty_like(emissions)
    alpha[0] = emissions[0]
    for i in range(1, n):
        alpha[i] = np_logsumexp(alpha[i - 1][:, None] + transitions[i - 1], axis=0) + emissions[i]
    return alpha


def backward_log_beta(emissions: Array, transitions: Array) -> Array:
    """Log backward messages; ``beta[n-1] = 0``."""
    n = emissions.shape[0]
    beta = np.zeros_like(emissions)
    for i in range(n - 2, -1, -1):
        beta[i] = np_logsumexp(transitions[i] + (emissions[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def chain_marginals(emissions: Array, transitions: Array) -> tuple[float, Array, Array]:
    """Log partition plus unary ``n x k`` and pairwise ``(n-1) x k x k`` posteriors."""
    alpha = forward_log_alpha(emissions, transitions)
    beta = backward_log_beta(emissions, transitions)
    log_z = float(np_logsumexp(alpha[-1]))
    unary = np.exp(alpha + beta - log_z)
    pairwise = np.exp(
        alpha[:-1, :, None]
        + transitions
        + (emissions[1:] + beta[1:])[:, None, :]
        - log_z
    )
    return log_z, unary, pairwise


def max_plus(emissions: Array, transitions: Array) -> tuple[list[int], float]:
    """Viterbi over an ``n x k`` chain; ties go to the smallest column index."""
    n = emissions.shape[0]
    delta = emissions[0].copy()
    pointers = np.zeros((max(n - 1, 0), emissions.shape[1]), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + transitions[i - 1]
        pointers[i - 1] = np.argmax(cand, axis=0)
        delta = cand[pointers[i - 1], np.arange(cand.shape[1])] + emissions[i]

    last = int(np.argmax(delta))
    best_score = float(delta[last])
    path = [last]
    for i in range(n - 2, -1, -1):
        path.append(int(pointers[i][path[-1]]))
    path.reverse()
    return path, best_score


def path_score(scores: Array, transitions: Array, path: Sequence[int]) -> float:
    """Unnormalised score: emissions along ``path`` plus adjacent transitions.

    Raises:
        ContractError: On a wrong-length path or out-of-range label.
    """
    n, num_labels = _check_scores(scores)
    labels = _check_path(path, n, num_labels)
    stack = position_transitions(scores, transitions)
    total = float(scores[np.arange(n), labels].sum())
    if n > 1:
        total += float(stack[np.arange(n - 1), labels[:-1], labels[1:]].sum())
    return total


def enumerate_path_scores(scores: Array, transitions: Array) -> Array:
    """Score of every label path as an array of shape ``(V,) * n``.

    Raises:
        RefusalError: If ``V**n`` exceeds ``BRUTE_FORCE_LIMIT``.
    """
    n, num_labels = _check_scores(scores)
    if num_labels**n > BRUTE_FORCE_LIMIT:
        raise RefusalError(
            f"brute force over {num_labels}^{n} paths exceeds {BRUTE_FORCE_LIMIT}"
        )
    stack = position_transitions(scores, transitions)
    totals = scores[0].copy()
    for i in range(1, n):
        # totals[..., a] -> totals[..., a, b]
        totals = totals[..., None] + stack[i - 1] + scores[i]
    return totals


def log_partition_bruteforce(scores: Array, transitions: Array) -> float:
    return float(np_logsumexp(enumerate_path_scores(scores, transitions)))


def log_partition_forward(scores: Array, transitions: Array) -> float:
    _check_scores(scores)
    alpha = forward_log_alpha(scores, position_transitions(scores, transitions))
    return float(np_logsumexp(alpha[-1]))


def viterbi_exact(scores: Array, transitions: Array) -> tuple[list[int], float]:
    """Highest-scoring path; ties go to the smaller label id."""
    _check_scores(scores)
    return max_plus(scores, position_transitions(scores, transitions))


def bruteforce_argmax(scores: Array, transitions: Array) -> tuple[list[int], float]:
    """Best path by exhaustive enumeration (lexicographically first on ties)."""
    totals = enumerate_path_scores(scores, transitions)
    flat = int(np.argmax(totals))
    return [int(i) for i in np.unravel_index(flat, totals.shape)], float(totals.flat[flat])


def marginals(scores: Array, transitions: Array) -> tuple[Array, Array]:
    """Posterior unary ``n x V`` and pairwise ``(n-1) x V x V`` marginals."""
    n, _ = _check_scores(scores)
    if n == 1:
        return np_softmax(scores, axis=-1), np.zeros((0, scores.shape[1], scores.shape[1]))
    _, unary, pairwise = chain_marginals(scores, position_transitions(scores, transitions))
    return unary, pairwise


def bruteforce_marginals(scores: Array, transitions: Array) -> tuple[Array, Array]:
    """Marginals by summing enumerated path posteriors."""
    n, num_labels = _check_scores(scores)
    totals = enumerate_path_scores(scores, transitions)
    posterior = np.exp(totals - np_logsumexp(totals))
    unary = np.zeros((n, num_labels))
    pairwise = np.zeros((max(n - 1, 0), num_labels, num_labels))
    for path in itertools.product(range(num_labels), repeat=n):
        p = posterior[path]
        for i, label in enumerate(path):
            unary[i, label] += p
        for i in range(n - 1):
            pairwise[i, path[i], path[i + 1]] += p
    return unary, pairwise


def solve(scores: Array, transitions: Array) -> CRFResult:
    path, best = viterbi_exact(scores, transitions)
    return CRFResult(
        log_partition=log_partition_forward(scores, transitions),
        best_path=path,
        best_path_score=best,
    )


def nll_and_grad(
    scores: Array, transitions: Array, gold: Sequence[int]
) -> tuple[float, Array, Array]:
    """Negative log-likelihood of ``gold`` and its analytic gradient.

    The gradient is expected feature counts minus gold counts. It has the
    same shape as ``transitions``: summed over positions for a shared
    matrix, per position for a stack.

    Returns:
        ``(nll, grad_scores, grad_transitions)``.
    """
    n, num_labels = _check_scores(scores)
    labels = _check_path(gold, n, num_labels)

    unary, pairwise = marginals(scores, transitions)
    log_z = log_partition_forward(scores, transitions)
    nll = log_z - path_score(scores, transitions, labels.tolist())

    grad_scores = unary.copy()
    grad_scores[np.arange(n), labels] -= 1.0
    grad_stack = pairwise.copy()
    if n > 1:
        grad_stack[np.arange(n - 1), labels[:-1], labels[1:]] -= 1.0
    grad_transitions = grad_stack if transitions.ndim == 3 else grad_stack.sum(axis=0)
    return nll, grad_scores, grad_transitions
