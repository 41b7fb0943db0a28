"""Shared pytest fixtures for structured-nart tests."""

from pathlib import Path

import pytest

from structured_nart.data import ParallelCorpus
from structured_nart.model import ModelConfig, NartModel, TransitionMode
from tests.fixtures.sample_data import (
    make_copy_corpus,
    make_corpus,
    make_model_config,
    make_toy_pairs,
    write_pairs,
)


@pytest.fixture
def toy_corpus() -> ParallelCorpus:
    """Four hand-written pairs; nine vocabulary entries with the specials."""
    return make_corpus(make_toy_pairs())


@pytest.fixture
def copy_corpus() -> ParallelCorpus:
    """Fifty copy-task pairs."""
    return make_copy_corpus()


@pytest.fixture
def micro_config(toy_corpus: ParallelCorpus) -> ModelConfig:
    """Micro NART-CRF configuration sized for the toy corpus."""
    return make_model_config(
        vocab_size=len(toy_corpus.vocab), transition=TransitionMode.STATIC
    )


@pytest.fixture
def crf_model(micro_config: ModelConfig) -> NartModel:
    return NartModel(micro_config)


@pytest.fixture
def dcrf_model(toy_corpus: ParallelCorpus) -> NartModel:
    return NartModel(
        make_model_config(vocab_size=len(toy_corpus.vocab), transition=TransitionMode.DYNAMIC)
    )


@pytest.fixture
def toy_files(tmp_path: Path) -> tuple[Path, Path]:
    """The toy pairs written as parallel text files."""
    return write_pairs(tmp_path, make_toy_pairs())
