"""Unit tests for structured_nart.crf_exact module."""

import math

import numpy as np
import pytest

from structured_nart.crf_exact import (
    BRUTE_FORCE_LIMIT,
    bruteforce_argmax,
    bruteforce_marginals,
    enumerate_path_scores,
    log_partition_bruteforce,
    log_partition_forward,
    marginals,
    nll_and_grad,
    path_score,
    position_transitions,
    solve,
    viterbi_exact,
)
from structured_nart.errors import ContractError, RefusalError, ShapeError
from structured_nart.tensor import Array
from tests.fixtures.gradcheck import numeric_grad, relative_error
from tests.fixtures.sample_data import make_crf_instance


def _random_instances(count: int = 200) -> list[tuple[Array, Array]]:
    rng = np.random.default_rng(123)
    instances: list[tuple[Array, Array]] = []
    for seed in range(count):
        n = int(rng.integers(1, 6))
        num_labels = int(rng.integers(1, 7))
        instances.append(make_crf_instance(n, num_labels, seed, stacked=seed % 3 == 0))
    return instances


class TestOracleEquivalence:
    """Forward-backward and Viterbi against exhaustive enumeration."""

    def test_log_partition_matches_enumeration(self) -> None:
        """200 random instances agree within 1e-9."""
        for scores, transitions in _random_instances():
            forward = log_partition_forward(scores, transitions)
            brute = log_partition_bruteforce(scores, transitions)
            assert forward == pytest.approx(brute, abs=1e-9)

    def test_viterbi_score_is_enumerated_maximum(self) -> None:
        """Viterbi path score equals the best enumerated score."""
        for scores, transitions in _random_instances():
            path, best = viterbi_exact(scores, transitions)
            _, brute_best = bruteforce_argmax(scores, transitions)
            assert best == pytest.approx(brute_best, abs=1e-9)
            assert path_score(scores, transitions, path) == pytest.approx(best, abs=1e-9)

    def test_marginals_match_enumerated_posteriors(self) -> None:
        """Unary and pairwise marginals agree within 1e-8."""
        for scores, transitions in _random_instances():
            unary, pairwise = marginals(scores, transitions)
            brute_unary, brute_pairwise = bruteforce_marginals(scores, transitions)
            np.testing.assert_allclose(unary, brute_unary, atol=1e-8)
            np.testing.assert_allclose(pairwise, brute_pairwise, atol=1e-8)


class TestKnownValues:
    """Hand-computed instances."""

    def test_zero_scores_uniform(self) -> None:
        """All-zero scores give log Z = n log V."""
        scores, transitions = np.zeros((3, 4)), np.zeros((4, 4))
        assert log_partition_forward(scores, transitions) == pytest.approx(3 * math.log(4))

    def test_single_position_is_logsumexp(self) -> None:
        """n=1 reduces to logsumexp of the row."""
        scores = np.array([[1.0, 2.0, 3.0]])
        expected = math.log(math.exp(1) + math.exp(2) + math.exp(3))
        assert log_partition_forward(scores, np.zeros((3, 3))) == pytest.approx(expected)

    def test_transitions_override_emissions(self) -> None:
        """A strong transition pulls the path away from the emission argmax."""
        scores = np.array([[1.0, 0.0], [1.0, 0.0]])
        transitions = np.array([[-10.0, 5.0], [0.0, 0.0]])
        path, best = viterbi_exact(scores, transitions)
        assert path == [0, 1]
        assert best == pytest.approx(6.0)

    def test_ties_go_to_smaller_id(self) -> None:
        """Equal scores everywhere decode to all zeros."""
        path, _ = viterbi_exact(np.zeros((4, 3)), np.zeros((3, 3)))
        assert path == [0, 0, 0, 0]

    def test_single_position_marginals_softmax(self) -> None:
        """n=1 marginals are the softmax and pairwise is empty."""
        unary, pairwise = marginals(np.array([[0.0, math.log(3.0)]]), np.zeros((2, 2)))
        np.testing.assert_allclose(unary, [[0.25, 0.75]])
        assert pairwise.shape == (0, 2, 2)

    def test_solve_summary(self) -> None:
        """solve bundles partition and Viterbi results."""
        scores, transitions = make_crf_instance(3, 4, seed=5)
        result = solve(scores, transitions)
        path, best = viterbi_exact(scores, transitions)
        assert result.best_path == path
        assert result.best_path_score == pytest.approx(best)
        assert result.log_partition >= result.best_path_score


class TestGuards:
    """Tests for shape checks and refusals."""

    def test_bruteforce_refuses_large_instances(self) -> None:
        """More than BRUTE_FORCE_LIMIT paths is refused."""
        assert 10**8 > BRUTE_FORCE_LIMIT
        with pytest.raises(RefusalError):
            enumerate_path_scores(np.zeros((8, 10)), np.zeros((10, 10)))

    def test_bad_transition_shape(self) -> None:
        """Transitions that fit no form raise ShapeError."""
        with pytest.raises(ShapeError):
            position_transitions(np.zeros((3, 4)), np.zeros((4, 3)))

    def test_stack_shape_kept(self) -> None:
        """A per-position stack passes through."""
        stack = np.zeros((2, 4, 4))
        assert position_transitions(np.zeros((3, 4)), stack).shape == (2, 4, 4)

    def test_path_label_out_of_range(self) -> None:
        """Labels outside [0, V) raise ContractError."""
        scores, transitions = make_crf_instance(3, 4)
        with pytest.raises(ContractError):
            path_score(scores, transitions, [0, 4, 1])

    def test_path_wrong_length(self) -> None:
        """Path length must equal n."""
        scores, transitions = make_crf_instance(3, 4)
        with pytest.raises(ContractError):
            path_score(scores, transitions, [0, 1])


class TestNllAndGrad:
    """Tests for the analytic NLL gradient."""

    @pytest.mark.parametrize("stacked", [False, True])
    def test_gradient_matches_finite_differences(self, stacked: bool) -> None:
        """Score and transition gradients agree with central differences."""
        scores, transitions = make_crf_instance(4, 3, seed=7, stacked=stacked)
        gold = [2, 0, 1, 1]
        nll, grad_scores, grad_trans = nll_and_grad(scores, transitions, gold)

        def loss() -> float:
            return nll_and_grad(scores, transitions, gold)[0]

        assert nll > 0
        assert relative_error(grad_scores, numeric_grad(loss, scores)) < 1e-6
        assert relative_error(grad_trans, numeric_grad(loss, transitions)) < 1e-6

    def test_gradient_rows_sum_to_zero(self) -> None:
        """Marginals minus one-hot sum to zero per position."""
        scores, transitions = make_crf_instance(3, 5, seed=2)
        _, grad_scores, _ = nll_and_grad(scores, transitions, [1, 2, 3])
        np.testing.assert_allclose(grad_scores.sum(axis=1), 0.0, atol=1e-12)


class TestInvariants:
    """Shift invariance and bounds of the NLL."""

    def test_row_shift_moves_partition_not_path(self) -> None:
        """Adding c to one row adds c to log Z and keeps the Viterbi path."""
        for seed, (scores, transitions) in enumerate(_random_instances(50)):
            row = seed % scores.shape[0]
            shifted = scores.copy()
            shifted[row] += 2.5
            assert log_partition_forward(shifted, transitions) == pytest.approx(
                log_partition_forward(scores, transitions) + 2.5, abs=1e-9
            )
            assert viterbi_exact(shifted, transitions)[0] == viterbi_exact(scores, transitions)[0]

    def test_nll_non_negative(self) -> None:
        """The NLL of any gold path is at least zero."""
        rng = np.random.default_rng(4)
        for scores, transitions in _random_instances():
            n, num_labels = scores.shape
            gold = rng.integers(0, num_labels, size=n).tolist()
            assert nll_and_grad(scores, transitions, gold)[0] >= -1e-12

    def test_dominant_gold_has_zero_nll(self) -> None:
        """A gold margin of 1e3 on every position drives the NLL to zero."""
        gold = [2, 0, 3, 1]
        scores = np.zeros((4, 4))
        scores[np.arange(4), gold] = 1e3
        nll, _, _ = nll_and_grad(scores, np.zeros((4, 4)), gold)
        assert nll == pytest.approx(0.0, abs=1e-9)

    def test_zero_inputs_give_n_log_v(self) -> None:
        """All-zero scores and transitions make every path equally likely."""
        nll, _, _ = nll_and_grad(np.zeros((5, 3)), np.zeros((3, 3)), [0, 2, 1, 1, 0])
        assert nll == pytest.approx(5 * math.log(3))
