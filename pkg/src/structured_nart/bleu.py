"""Corpus-level BLEU-4 on tokenised, case-sensitive text, unsmoothed."""

import warnings
from collections.abc import Hashable, Sequence

from nltk.translate.bleu_score import corpus_bleu

from structured_nart.errors import ContractError

# Below this, an unsmoothed score only reflects an order with no matches.
ZERO_MATCH_FLOOR = 1e-50


def bleu(
    hypotheses: Sequence[Sequence[Hashable]],
    references: Sequence[Sequence[Hashable]],
) -> float:
    """BLEU in [0, 100] from corpus-summed clipped n-gram counts.

    Any n-gram order without a single match gives 0.0.

    Raises:
        ContractError: If the lists differ in length.
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses for {len(references)} references")
    if not any(hypotheses):
        return 0.0
    with warnings.catch_warnings():
        # nltk warns on zero-count orders.
        warnings.simplefilter("ignore", UserWarning)
        score = float(
            corpus_bleu([[list(ref)] for ref in references], [list(h) for h in hypotheses])  # pyright: ignore[reportUnknownArgumentType]
        )
    return 0.0 if score < ZERO_MATCH_FLOOR else 100.0 * score
