"""Exception hierarchy for structured-nart.

The CLI maps these onto process exit codes, see ``structured_nart.cli``.
"""


class StructuredNartError(Exception):
    """Base class for all library errors."""


class ShapeError(StructuredNartError, ValueError):
    """Tensor dimensions are incompatible or empty."""


class ContractError(StructuredNartError, ValueError):
    """A documented precondition of an operation was violated."""


class RefusalError(StructuredNartError):
    """An operation refused to run on valid but unsupported input."""


class DataError(StructuredNartError):
    """Corpus, vocabulary or checkpoint content is unusable."""


class DivergenceError(StructuredNartError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step
