"""Row models for every CSV the tools write.

Each row type maps one-to-one onto a CSV line; field order is column order.
"""

from pydantic import BaseModel, Field


class StepMetrics(BaseModel):
    """One optimisation step of a training run."""

    step: int = Field(ge=1)
    crf_nll: float
    nar_loss: float
    joint_loss: float
    wall_ms: float = Field(ge=0)


class SweepRow(BaseModel):
    """Quality and speed of one fixed checkpoint decoded with CRF beam size k."""

    k: int = Field(ge=1)
    bleu: float = Field(ge=0, le=100)
    consistency: float | None = Field(default=None, ge=0, le=1)
    mean_latency_ms: float = Field(ge=0)


class LatencyRow(BaseModel):
    """Per-sentence decoding latency at batch size 1."""

    decoder: str
    n: int = Field(ge=0, description="Mean target length of the timed sentences")
    k: int = Field(default=0, ge=0, description="CRF beam size, 0 for beam-free decoders")
    mean_ms: float = Field(ge=0)
    std_ms: float = Field(ge=0, description="Spread of single-sentence latencies")


class DecodeRow(BaseModel):
    """One decoded sentence for the optional TSV output."""

    src: str
    hyp: str
    decode_score: float
    rescore: float | None = None


class EvalSummary(BaseModel):
    """Corpus-level quality of one hypotheses file."""

    sentences: int = Field(ge=0)
    bleu: float = Field(ge=0, le=100)
    consistency: float | None = Field(default=None, ge=0, le=1)
