"""Unit tests for structured_nart.tensor module."""

from collections.abc import Callable

import numpy as np
import pytest

from structured_nart.errors import ContractError, ShapeError
from structured_nart.tensor import (
    Array,
    Tape,
    Tensor,
    active_tape,
    concat,
    dropout,
    embedding,
    gather,
    layer_norm,
    log_softmax,
    logsumexp,
    masked_fill,
    matmul,
    mean,
    np_logsumexp,
    parameter,
    reduce_sum,
    relu,
    softmax,
)
from tests.fixtures.gradcheck import numeric_grad, relative_error


def _grad_of(build: Callable[[], Tensor], *leaves: Tensor) -> list[Array]:
    """Run ``build()`` on a fresh tape and return the leaves' gradients."""
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


class TestTensor:
    """Tests for the Tensor type."""

    def test_empty_data_rejected(self) -> None:
        """Empty arrays raise ShapeError."""
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_stores_float64(self) -> None:
        """Integer input is stored as float64."""
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64

    def test_item_on_non_scalar_fails(self) -> None:
        """item() needs exactly one element."""
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_operators(self) -> None:
        """Arithmetic operators match numpy."""
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        np.testing.assert_allclose((a + b).data, [4.0, 7.0])
        np.testing.assert_allclose((a - b).data, [-2.0, -3.0])
        np.testing.assert_allclose((a * b).data, [3.0, 10.0])
        np.testing.assert_allclose((2.0 * a).data, [2.0, 4.0])
        np.testing.assert_allclose((-a).data, [-1.0, -2.0])


class TestTape:
    """Tests for Tape recording and backward."""

    def test_nothing_recorded_without_tape(self) -> None:
        """Ops outside a tape produce untracked tensors."""
        p = parameter([1.0, 2.0])
        out = reduce_sum(p * p)
        assert active_tape() is None
        assert not out.requires_grad

    def test_tape_deactivates_on_exit(self) -> None:
        """The active tape is reset after the with block."""
        with Tape() as tape:
            assert active_tape() is tape
        assert active_tape() is None

    def test_non_scalar_loss_rejected(self) -> None:
        """backward requires a scalar."""
        p = parameter([1.0, 2.0])
        with Tape() as tape:
            out = p * 2.0
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_untracked_loss_rejected(self) -> None:
        """A loss that does not depend on parameters is refused."""
        with Tape() as tape:
            out = reduce_sum(Tensor([1.0, 2.0]))
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_shared_input_accumulates(self) -> None:
        """A tensor used twice receives the sum of both gradients."""
        p = parameter([3.0])
        (grad,) = _grad_of(lambda: reduce_sum(p * p + p), p)
        np.testing.assert_allclose(grad, [7.0])

    def test_constant_inputs_get_no_grad(self) -> None:
        """Tensors without requires_grad keep grad None."""
        p, c = parameter([1.0]), Tensor([2.0])
        _grad_of(lambda: reduce_sum(p * c), p)
        assert c.grad is None


class TestOpGradients:
    """Finite-difference checks of individual op gradients."""

    @pytest.mark.parametrize(
        "op",
        [
            lambda x: reduce_sum(softmax(x, axis=-1) * Tensor(np.arange(12.0).reshape(3, 4))),
            lambda x: reduce_sum(log_softmax(x, axis=-1) * Tensor(np.arange(12.0).reshape(3, 4))),
            lambda x: logsumexp(x),
            lambda x: reduce_sum(logsumexp(x, axis=1) * Tensor([1.0, -2.0, 0.5])),
            lambda x: reduce_sum(relu(x) * x),
            lambda x: mean(x * x),
            lambda x: reduce_sum(x.swapaxes(0, 1) @ x),
            lambda x: reduce_sum(gather(x, ([0, 0, 2], [1, 1, 3])) * Tensor([1.0, 2.0, 3.0])),
            lambda x: reduce_sum(concat([x, x * 2.0], axis=1) * Tensor(np.ones((3, 8)))),
        ],
        ids=["softmax", "log_softmax", "logsumexp", "logsumexp_axis", "relu", "mean", "matmul", "gather", "concat"],
    )
    def test_matches_finite_differences(self, op: Callable[[Tensor], Tensor]) -> None:
        """Analytic gradient agrees with central differences."""
        rng = np.random.default_rng(1)
        x = parameter(rng.normal(size=(3, 4)))
        (grad,) = _grad_of(lambda: op(x), x)
        numeric = numeric_grad(lambda: float(op(Tensor(x.data)).data), x.data)
        assert relative_error(grad, numeric) < 1e-6

    def test_layer_norm_gradients(self) -> None:
        """layer_norm gradients for input, gain and bias."""
        rng = np.random.default_rng(2)
        x = parameter(rng.normal(size=(2, 5)))
        gain = parameter(rng.normal(size=5))
        bias = parameter(rng.normal(size=5))
        weights = Tensor(rng.normal(size=(2, 5)))

        def loss() -> Tensor:
            return reduce_sum(layer_norm(x, gain, bias) * weights)

        grads = _grad_of(loss, x, gain, bias)
        for leaf, grad in zip((x, gain, bias), grads, strict=True):
            numeric = numeric_grad(lambda: loss().item(), leaf.data)
            assert relative_error(grad, numeric) < 1e-5


class TestShapes:
    """Tests for shape errors and index checks."""

    def test_matmul_inner_mismatch(self) -> None:
        """Mismatched inner dimensions raise ShapeError."""
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batched_matmul(self) -> None:
        """Leading axes broadcast as a batch."""
        out = matmul(Tensor(np.ones((4, 2, 3))), Tensor(np.ones((3, 5))))
        assert out.shape == (4, 2, 5)

    def test_broadcast_failure(self) -> None:
        """Incompatible shapes in add raise ShapeError."""
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_embedding_out_of_range(self) -> None:
        """Ids beyond the table raise ContractError."""
        with pytest.raises(ContractError):
            embedding(Tensor(np.ones((3, 2))), [0, 3])

    def test_gather_out_of_range(self) -> None:
        """Bad numpy indices become ContractError."""
        with pytest.raises(ContractError):
            gather(Tensor(np.ones((3, 2))), ([5], [0]))

    def test_reshape_failure(self) -> None:
        """Impossible reshape raises ShapeError."""
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))).reshape(4, 2)


class TestNumerics:
    """Tests for stable reductions and masking."""

    def test_logsumexp_large_values(self) -> None:
        """Max shifting keeps huge scores finite."""
        result = np_logsumexp(np.array([1000.0, 1000.0]))
        assert result == pytest.approx(1000.0 + np.log(2.0))

    def test_masked_fill_zero_gradient(self) -> None:
        """Masked entries receive no gradient."""
        x = parameter([1.0, 2.0, 3.0])
        mask = np.array([False, True, False])
        (grad,) = _grad_of(lambda: reduce_sum(masked_fill(x, mask, -1e9) * Tensor([1.0, 1.0, 1.0])), x)
        np.testing.assert_array_equal(grad, [1.0, 0.0, 1.0])

    def test_dropout_zero_rate_is_identity(self) -> None:
        """Rate 0 returns the same tensor."""
        x = Tensor([1.0, 2.0])
        assert dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_dropout_preserves_expectation(self) -> None:
        """Kept entries are scaled by 1 / (1 - rate)."""
        x = Tensor(np.ones(10_000))
        out = dropout(x, 0.5, np.random.default_rng(0))
        assert set(np.unique(out.data)) <= {0.0, 2.0}
        assert out.data.mean() == pytest.approx(1.0, abs=0.05)
