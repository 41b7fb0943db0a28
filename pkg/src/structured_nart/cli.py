"""Command-line interface for training, decoding and benchmarking.

Exit codes: 0 success, 1 usage error, 2 data error or refusal,
3 numerical divergence during training.
"""

import logging
import sys
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any

import typer
from pydantic import BaseModel, ValidationError

from structured_nart import __version__
from structured_nart.bench import (
    KERNEL_KS,
    SWEEP_KS,
    bench_beam_kernel,
    bench_latency,
    sweep_beam,
    sweep_ks,
)
from structured_nart.bleu import bleu
from structured_nart.checkpoint import load_checkpoint
from structured_nart.csv_io import read_columns, read_config_row, read_csv, write_csv
from structured_nart.data import (
    TokenMode,
    Vocab,
    detokenize,
    encode_known,
    load_corpus,
    read_lines,
    tokenize,
    write_lines,
    write_parallel_text,
)
from structured_nart.errors import (
    ContractError,
    DataError,
    DivergenceError,
    RefusalError,
    ShapeError,
)
from structured_nart.inference import (
    DecodeMode,
    LengthRule,
    TeacherScorer,
    decode_corpus,
    estimate_length_bias,
)
from structured_nart.model import (
    Model,
    ModelConfig,
    NartModel,
    TeacherModel,
    TransitionMode,
    Variant,
    build_model,
    load_model,
)
from structured_nart.records import DecodeRow, EvalSummary, LatencyRow, StepMetrics, SweepRow
from structured_nart.renderer import (
    render_eval_table,
    render_latency_table,
    render_metrics_table,
    render_sweep_table,
)
from structured_nart.tasks import (
    MultimodalTask,
    MultimodalTaskSpec,
    consistency_rate,
    gen_copy_task,
    gen_multimodal,
)
from structured_nart.training import TrainConfig, train

logger = logging.getLogger(__name__)

TASK_FILE = "task.cfg"

app = typer.Typer(
    name="snart",
    help="Non-autoregressive translation with structured (CRF) decoding.",
    add_completion=False,
)


@contextmanager
def _exit_on_error() -> Iterator[None]:
    """Translate library errors into the documented exit codes."""
    try:
        yield
    except DivergenceError as e:
        typer.echo(f"Training diverged at step {e.step}: {e}", err=True)
        raise typer.Exit(code=3) from e
    except (DataError, RefusalError) as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=2) from e
    except (ContractError, ShapeError, ValidationError) as e:
        typer.echo(f"Invalid arguments: {e}", err=True)
        raise typer.Exit(code=1) from e


def _usage_error(message: str) -> typer.Exit:
    typer.echo(f"Invalid arguments: {message}", err=True)
    return typer.Exit(code=1)


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise _usage_error(f"{path} is not a file")
    return path


def _require_dir(path: Path) -> Path:
    if not path.is_dir():
        raise _usage_error(f"{path} is not a directory")
    return path


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise _usage_error(f"beam sizes must be comma-separated integers, got {text!r}") from e
    if not ks or min(ks) < 1:
        raise _usage_error(f"beam sizes must be positive, got {text!r}")
    return ks


def _load_nart(checkpoint: Path) -> tuple[NartModel, Vocab]:
    model, vocab = load_model(_require_dir(checkpoint))
    if not isinstance(model, NartModel):
        raise _usage_error(f"{checkpoint} holds an autoregressive teacher, not a NART model")
    return model, vocab


def _load_teacher(checkpoint: Path, vocab: Vocab) -> TeacherModel:
    model, teacher_vocab = load_model(_require_dir(checkpoint))
    if not isinstance(model, TeacherModel):
        raise _usage_error(f"{checkpoint} is not an autoregressive teacher checkpoint")
    if teacher_vocab != vocab:
        raise DataError(f"teacher vocabulary in {checkpoint} differs from the model's")
    return model


def _read_sources(path: Path, vocab: Vocab, mode: TokenMode) -> tuple[list[str], list[list[int]]]:
    lines = read_lines(_require_file(path))
    sentences = [tokenize(line, mode) for line in lines]
    for line_num, tokens in enumerate(sentences, start=1):
        if not tokens:
            raise DataError(f"{path}:{line_num}: empty source sentence")
    return lines, encode_known(vocab, sentences, origin=str(path))


def _length_rule(model: Model, bias: int | None, half_width: int, teacher: Model | None) -> LengthRule:
    max_len = model.config.max_len
    if teacher is not None:
        # Teacher scoring appends <eos>.
        max_len = min(max_len, teacher.config.max_len - 1)
    return LengthRule(
        bias=model.config.length_bias if bias is None else bias,
        half_width=half_width,
        max_len=max_len,
    )


def _load_task(task_file: Path | None) -> MultimodalTask | None:
    if task_file is None:
        return None
    return MultimodalTask.build(MultimodalTaskSpec.from_file(_require_file(task_file)))


@app.callback()
def main_callback(
    verbose: Annotated[
        bool, typer.Option("--verbose", "-v", help="Log debug output to stderr.")
    ] = False,
) -> None:
    """Train and evaluate NART, NART-CRF and NART-DCRF models on toy tasks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


@app.command("train")
def train_command(
    src: Annotated[Path, typer.Option("--src", help="Training source sentences, one per line.")],
    tgt: Annotated[Path, typer.Option("--tgt", help="Training target sentences, one per line.")],
    output: Annotated[
        Path, typer.Option("--output", "-o", help="Checkpoint directory to write.")
    ],
    variant: Annotated[Variant, typer.Option("--variant", help="nar or teacher.")] = Variant.NAR,
    transition: Annotated[
        TransitionMode,
        typer.Option("--transition", help="CRF transitions: none, static or dynamic."),
    ] = TransitionMode.NONE,
    transition_dim: Annotated[
        int, typer.Option("--transition-dim", help="Transition embedding size d_t.")
    ] = 32,
    lambda_weight: Annotated[
        float, typer.Option("--lambda", help="Weight of the NAR loss in the joint loss.")
    ] = 0.5,
    crf_beam: Annotated[int, typer.Option("--crf-beam", help="Beam size k during training.")] = 64,
    label_smoothing: Annotated[float, typer.Option("--label-smoothing")] = 0.1,
    learning_rate: Annotated[float, typer.Option("--lr")] = 1e-3,
    batch_size: Annotated[int, typer.Option("--batch-size")] = 16,
    steps: Annotated[int, typer.Option("--steps")] = 200,
    seed: Annotated[int, typer.Option("--seed")] = 0,
    warmup: Annotated[
        Path | None,
        typer.Option("--warmup", help="Vanilla NART checkpoint to initialise shared weights."),
    ] = None,
    vocab_from: Annotated[
        Path | None,
        typer.Option("--vocab-from", help="Reuse the vocabulary of this checkpoint."),
    ] = None,
    num_layers: Annotated[int, typer.Option("--layers")] = 2,
    d_model: Annotated[int, typer.Option("--d-model")] = 64,
    num_heads: Annotated[int, typer.Option("--heads")] = 4,
    d_ffn: Annotated[int, typer.Option("--d-ffn")] = 128,
    max_len: Annotated[int, typer.Option("--max-len")] = 64,
    dropout: Annotated[float, typer.Option("--dropout")] = 0.0,
    clip_norm: Annotated[
        float | None, typer.Option("--clip-norm", help="Clip gradients to this L2 norm.")
    ] = None,
    save_every: Annotated[
        int, typer.Option("--save-every", help="Snapshot every N steps (0: final only).")
    ] = 0,
    token_mode: Annotated[TokenMode, typer.Option("--token-mode")] = TokenMode.WORD,
) -> None:
    """Train a model and write its checkpoint and metrics.csv."""
    _require_file(src)
    _require_file(tgt)
    if warmup is not None and variant is Variant.TEACHER:
        raise _usage_error("--warmup applies to NART models only")

    with _exit_on_error():
        vocab = None
        vocab_source = vocab_from or warmup
        if vocab_source is not None:
            vocab = Vocab(load_checkpoint(_require_dir(vocab_source)).vocab_tokens)
        corpus = load_corpus(src, tgt, mode=token_mode, vocab=vocab)
        model_config = ModelConfig(
            vocab_size=len(corpus.vocab),
            num_layers=num_layers,
            d_model=d_model,
            num_heads=num_heads,
            d_ffn=d_ffn,
            max_len=max_len,
            variant=variant,
            transition=transition,
            transition_dim=transition_dim,
            dropout=dropout,
            length_bias=estimate_length_bias(corpus),
            seed=seed,
        )
        train_config = TrainConfig(
            lambda_weight=lambda_weight,
            label_smoothing=label_smoothing,
            learning_rate=learning_rate,
            batch_size=batch_size,
            max_steps=steps,
            crf_beam=crf_beam,
            seed=seed,
            warmup=warmup,
            clip_norm=clip_norm,
            save_every=save_every,
        )
        result = train(build_model(model_config), train_config, corpus, output_dir=output)

    final = result.metrics[-1]
    typer.echo(
        f"Trained {len(result.metrics)} steps: joint_loss={final.joint_loss:.4f} "
        f"crf_nll={final.crf_nll:.4f} nar_loss={final.nar_loss:.4f}"
    )
    typer.echo(f"Checkpoint written to {output}")


@app.command("decode")
def decode_command(
    checkpoint: Annotated[Path, typer.Option("--checkpoint", "-c", help="NART checkpoint.")],
    src: Annotated[Path, typer.Option("--src", help="Source sentences to translate.")],
    output: Annotated[
        Path, typer.Option("--output", "-o", help="Hypotheses file, one sentence per line.")
    ],
    mode: Annotated[DecodeMode, typer.Option("--mode", help="nar or crf.")] = DecodeMode.CRF,
    crf_beam: Annotated[int, typer.Option("--crf-beam", help="Beam size k.")] = 64,
    length_bias: Annotated[
        int | None,
        typer.Option("--length-bias", help="C; defaults to the value estimated at training."),
    ] = None,
    half_width: Annotated[
        int, typer.Option("--half-width", help="B; decode 2B+1 candidate lengths.")
    ] = 0,
    rescore: Annotated[
        Path | None, typer.Option("--rescore", help="Teacher checkpoint to rescore candidates.")
    ] = None,
    normalize: Annotated[
        bool,
        typer.Option("--normalize/--no-normalize", help="Length-normalise teacher scores."),
    ] = True,
    tsv: Annotated[
        Path | None, typer.Option("--tsv", help="Also write src, hyp and scores as TSV.")
    ] = None,
    workers: Annotated[int, typer.Option("--workers", help="Decoding threads.")] = 1,
    token_mode: Annotated[TokenMode, typer.Option("--token-mode")] = TokenMode.WORD,
) -> None:
    """Translate a source file with a trained NART checkpoint."""
    if workers < 1:
        raise _usage_error("--workers must be at least 1")
    if half_width < 0:
        raise _usage_error("--half-width must not be negative")
    with _exit_on_error():
        model, vocab = _load_nart(checkpoint)
        teacher = _load_teacher(rescore, vocab) if rescore is not None else None
        lines, sources = _read_sources(src, vocab, token_mode)
        rule = _length_rule(model, length_bias, half_width, teacher)
        scorer = TeacherScorer(teacher, normalize=normalize) if teacher is not None else None
        candidates = decode_corpus(
            model, sources, rule, mode=mode, k=crf_beam, teacher=scorer, workers=workers
        )

    hypotheses = [detokenize(vocab.decode(c.tokens), token_mode) for c in candidates]
    write_lines(output, hypotheses)
    if tsv is not None:
        rows = [
            DecodeRow(src=line, hyp=hyp, decode_score=c.decode_score, rescore=c.rescore)
            for line, hyp, c in zip(lines, hypotheses, candidates, strict=True)
        ]
        config: dict[str, Any] = {
            "checkpoint": checkpoint,
            "mode": mode,
            "crf_beam": crf_beam,
            "length_bias": rule.bias,
            "half_width": half_width,
            "rescore": rescore or "",
        }
        write_csv(tsv, rows, DecodeRow, config, delimiter="\t")
    typer.echo(f"Decoded {len(hypotheses)} sentences to {output}")


@app.command("evaluate")
def evaluate_command(
    hyp: Annotated[Path, typer.Option("--hyp", help="Hypotheses, one sentence per line.")],
    ref: Annotated[Path, typer.Option("--ref", help="References, one sentence per line.")],
    src: Annotated[
        Path | None, typer.Option("--src", help="Sources, needed for consistency.")
    ] = None,
    task_file: Annotated[
        Path | None, typer.Option("--task", help="Multimodal task spec for consistency.")
    ] = None,
    output: Annotated[Path | None, typer.Option("--output", "-o", help="Summary CSV.")] = None,
    token_mode: Annotated[TokenMode, typer.Option("--token-mode")] = TokenMode.WORD,
) -> None:
    """Score a hypotheses file with BLEU and, for the toy task, consistency."""
    if (src is None) != (task_file is None):
        raise _usage_error("--src and --task must be given together")
    hyp_tokens = [tokenize(line, token_mode) for line in read_lines(_require_file(hyp))]
    ref_tokens = [tokenize(line, token_mode) for line in read_lines(_require_file(ref))]

    with _exit_on_error():
        if len(hyp_tokens) != len(ref_tokens):
            raise DataError(f"{hyp} has {len(hyp_tokens)} lines but {ref} has {len(ref_tokens)}")
        consistency = None
        task = _load_task(task_file)
        if src is not None and task is not None:
            src_tokens = [tokenize(line, token_mode) for line in read_lines(_require_file(src))]
            consistency = consistency_rate(hyp_tokens, src_tokens, task)
        summary = EvalSummary(
            sentences=len(hyp_tokens),
            bleu=bleu(hyp_tokens, ref_tokens),
            consistency=consistency,
        )

    typer.echo(render_eval_table(summary))
    if output is not None:
        write_csv(output, [summary], EvalSummary, {"hyp": hyp, "ref": ref, "task": task_file or ""})
        typer.echo(f"Output written to {output}")


@app.command("sweep-beam")
def sweep_beam_command(
    checkpoint: Annotated[Path, typer.Option("--checkpoint", "-c", help="NART-CRF checkpoint.")],
    src: Annotated[Path, typer.Option("--src", help="Test sources.")],
    tgt: Annotated[Path, typer.Option("--tgt", help="Test references.")],
    output: Annotated[Path, typer.Option("--output", "-o", help="CSV to write.")],
    ks: Annotated[
        str, typer.Option("--ks", help="Comma-separated beam sizes, clamped to V.")
    ] = ",".join(str(k) for k in SWEEP_KS),
    task_file: Annotated[
        Path | None, typer.Option("--task", help="Multimodal task spec for consistency.")
    ] = None,
    length_bias: Annotated[int | None, typer.Option("--length-bias")] = None,
    half_width: Annotated[int, typer.Option("--half-width")] = 0,
    token_mode: Annotated[TokenMode, typer.Option("--token-mode")] = TokenMode.WORD,
) -> None:
    """Evaluate one checkpoint at every CRF beam size."""
    beam_sizes = _parse_ks(ks)
    _require_file(src)
    _require_file(tgt)
    with _exit_on_error():
        model, vocab = _load_nart(checkpoint)
        corpus = load_corpus(src, tgt, mode=token_mode, vocab=vocab)
        rule = _length_rule(model, length_bias, half_width, None)
        rows = sweep_beam(model, corpus.pairs, vocab, rule, ks=beam_sizes, task=_load_task(task_file))

    config = {
        "checkpoint": checkpoint,
        "transition": model.config.transition,
        "length_bias": rule.bias,
        "half_width": half_width,
        "ks": beam_sizes,
    }
    write_csv(output, rows, SweepRow, config)
    typer.echo(render_sweep_table(rows))
    typer.echo(f"Output written to {output}")


@app.command("bench-latency")
def bench_latency_command(
    checkpoint: Annotated[Path, typer.Option("--checkpoint", "-c", help="NART checkpoint.")],
    src: Annotated[Path, typer.Option("--src", help="Sentences to time.")],
    output: Annotated[Path, typer.Option("--output", "-o", help="CSV to write.")],
    teacher: Annotated[
        Path | None, typer.Option("--teacher", help="Teacher checkpoint for the AR baseline.")
    ] = None,
    ks: Annotated[str, typer.Option("--ks", help="CRF beam sizes to time.")] = "1,16,64",
    runs: Annotated[int, typer.Option("--runs", help="Timed runs per decoder.")] = 5,
    limit: Annotated[int, typer.Option("--limit", help="Time at most this many sentences.")] = 50,
    kernel: Annotated[
        bool,
        typer.Option("--kernel/--no-kernel", help="Also time the beam kernel on random scores."),
    ] = False,
    kernel_labels: Annotated[int, typer.Option("--kernel-labels", help="V of the kernel run.")] = 1024,
    token_mode: Annotated[TokenMode, typer.Option("--token-mode")] = TokenMode.WORD,
) -> None:
    """Per-sentence decoding latency at batch size 1."""
    beam_sizes = _parse_ks(ks)
    if runs < 1 or limit < 1:
        raise _usage_error("--runs and --limit must be at least 1")
    with _exit_on_error():
        model, vocab = _load_nart(checkpoint)
        ar_model = _load_teacher(teacher, vocab) if teacher is not None else None
        _, sources = _read_sources(src, vocab, token_mode)
        rule = _length_rule(model, None, 0, None)
        rows: list[LatencyRow] = bench_latency(
            model, sources[:limit], rule, ks=beam_sizes, teacher=ar_model, runs=runs
        )
        exponent = None
        if kernel:
            kernel_rows, exponent = bench_beam_kernel(
                kernel_labels, ks=sweep_ks(kernel_labels, KERNEL_KS), runs=runs
            )
            rows.extend(kernel_rows)

    config = {
        "checkpoint": checkpoint,
        "teacher": teacher or "",
        "runs": runs,
        "sentences": min(limit, len(sources)),
        "kernel_exponent": "" if exponent is None else f"{exponent:.4f}",
    }
    write_csv(output, rows, LatencyRow, config)
    typer.echo(render_latency_table(rows, exponent))
    typer.echo(f"Output written to {output}")


@app.command("gen-task")
def gen_task_command(
    output: Annotated[Path, typer.Option("--output", "-o", help="Directory for the corpus.")],
    spec_file: Annotated[
        Path | None, typer.Option("--spec", help="Task spec (key=value); overrides flags.")
    ] = None,
    copy: Annotated[
        bool, typer.Option("--copy", help="Generate the copy task instead.")
    ] = False,
    num_symbols: Annotated[int, typer.Option("--num-symbols")] = 20,
    phrases: Annotated[int, typer.Option("--phrases", help="Synonym phrases per symbol.")] = 3,
    train_size: Annotated[int, typer.Option("--train-size")] = 5000,
    test_size: Annotated[int, typer.Option("--test-size")] = 500,
    seed: Annotated[int, typer.Option("--seed")] = 0,
) -> None:
    """Write a synthetic parallel corpus as train/test .src/.tgt files."""
    with _exit_on_error():
        if copy:
            pairs = gen_copy_task(train_size + test_size, seed=seed)
            train_pairs, test_pairs = pairs[:train_size], pairs[train_size:]
        else:
            if spec_file is not None:
                spec = MultimodalTaskSpec.from_file(_require_file(spec_file))
            else:
                spec = MultimodalTaskSpec(
                    num_symbols=num_symbols,
                    phrases_per_symbol=phrases,
                    train_size=train_size,
                    test_size=test_size,
                    seed=seed,
                )
            generated = gen_multimodal(spec)
            train_pairs, test_pairs = generated.train, generated.test
            spec.to_file(output / TASK_FILE)

    write_parallel_text(output / "train.src", output / "train.tgt", train_pairs)
    write_parallel_text(output / "test.src", output / "test.tgt", test_pairs)
    typer.echo(f"Wrote {len(train_pairs)} train / {len(test_pairs)} test pairs to {output}")


@app.command("report")
def report_command(
    result_file: Annotated[
        Path,
        typer.Option(
            "--file",
            "-f",
            help="metrics.csv, a sweep or latency CSV, or an evaluation summary.",
        ),
    ],
    output_file: Annotated[
        Path | None,
        typer.Option("--output", "-o", help="Write the table to a file instead of stdout."),
    ] = None,
    every: Annotated[
        int, typer.Option("--every", help="Show every Nth step of a training curve.")
    ] = 1,
) -> None:
    """Render a result CSV written by train, sweep-beam, bench-latency or evaluate.

    The file kind is recognised from its header row; malformed rows are
    skipped with a warning.
    """
    if every < 1:
        raise _usage_error("--every must be at least 1")
    _require_file(result_file)

    with _exit_on_error():
        columns = read_columns(result_file)
        if columns == list(StepMetrics.model_fields):
            steps = read_csv(result_file, StepMetrics)
            shown = steps[every - 1 :: every]
            if len(steps) % every:
                shown.append(steps[-1])
            rows: Sequence[BaseModel] = steps
            table = render_metrics_table(shown)
        elif columns == list(SweepRow.model_fields):
            rows = sweeps = read_csv(result_file, SweepRow)
            table = render_sweep_table(sweeps)
        elif columns == list(LatencyRow.model_fields):
            rows = latencies = read_csv(result_file, LatencyRow)
            exponent = read_config_row(result_file).get("kernel_exponent", "")
            table = render_latency_table(latencies, float(exponent) if exponent else None)
        elif columns == list(EvalSummary.model_fields):
            rows = summaries = read_csv(result_file, EvalSummary)
            table = "\n".join(render_eval_table(summary) for summary in summaries)
        else:
            raise DataError(f"{result_file} is not a result file written by snart")
        if not rows:
            raise DataError(f"no valid rows in {result_file}")

    if output_file:
        output_file.write_text(table + "\n", encoding="utf-8")
        typer.echo(f"Output written to {output_file}")
    else:
        typer.echo(table)


@app.command("version")
def version_command() -> None:
    """Print the package version."""
    typer.echo(__version__)


def main() -> None:
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
