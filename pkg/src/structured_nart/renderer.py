"""Result tables drawn with box-drawing characters.

Sweep, latency and evaluation results are echoed to the terminal in this
form; the CSV files written next to them stay the primary output.
"""

from collections.abc import Sequence

from structured_nart.formatter import format_float, format_ms, format_number, format_percent
from structured_nart.records import EvalSummary, LatencyRow, StepMetrics, SweepRow

BOX_TL = "┌"
BOX_TR = "┐"
BOX_BL = "└"
BOX_BR = "┘"
BOX_H = "─"
BOX_V = "│"
BOX_LJ = "├"
BOX_RJ = "┤"
BOX_TJ = "┬"
BOX_BJ = "┴"
BOX_X = "┼"

# (name, width, is_numeric)
Column = tuple[str, int, bool]

SWEEP_COLUMNS: list[Column] = [
    ("k", 7, True),
    ("BLEU", 9, True),
    ("Consistency", 14, True),
    ("Latency", 14, True),
]

LATENCY_COLUMNS: list[Column] = [
    ("Decoder", 14, False),
    ("n", 6, True),
    ("k", 7, True),
    ("Mean", 14, True),
    ("Std", 14, True),
]

METRICS_COLUMNS: list[Column] = [
    ("Step", 8, True),
    ("CRF NLL", 10, True),
    ("NAR loss", 10, True),
    ("Joint", 10, True),
    ("Time", 12, True),
]

EVAL_COLUMNS: list[Column] = [
    ("Sentences", 12, True),
    ("BLEU", 9, True),
    ("Consistency", 14, True),
]


def render_table(
    columns: list[Column],
    rows: Sequence[list[str]],
    *,
    footer: list[str] | None = None,
) -> str:
    """Render pre-formatted cell values as a table.

    Cells wider than their column widen it, so values are never cut.
    """
    every_row = [*rows, footer] if footer is not None else list(rows)
    columns = [
        (name, max(width, len(name) + 2, *(len(row[i]) + 2 for row in every_row)), numeric)
        for i, (name, width, numeric) in enumerate(columns)
    ]

    lines = [render_border("top", columns), render_header(columns)]
    for row in rows:
        lines.append(render_separator(columns))
        lines.append(_format_row(row, columns))
    if footer is not None:
        lines.append(render_separator(columns))
        lines.append(_format_row(footer, columns))
    lines.append(render_border("bottom", columns))
    return "\n".join(lines)


def render_border(position: str, columns: list[Column]) -> str:
    """Render top or bottom border line."""
    if position == "top":
        left, mid, right = BOX_TL, BOX_TJ, BOX_TR
    else:
        left, mid, right = BOX_BL, BOX_BJ, BOX_BR
    return left + mid.join(BOX_H * width for _, width, _ in columns) + right


def render_separator(columns: list[Column]) -> str:
    return BOX_LJ + BOX_X.join(BOX_H * width for _, width, _ in columns) + BOX_RJ


def render_header(columns: list[Column]) -> str:
    return _format_row([name for name, _, _ in columns], columns, header=True)


def render_sweep_table(rows: Sequence[SweepRow]) -> str:
    """One line per beam size: quality, consistency and mean latency."""
    cells = [
        [
            format_number(row.k),
            format_float(row.bleu),
            format_percent(row.consistency),
            format_ms(row.mean_latency_ms),
        ]
        for row in rows
    ]
    return render_table(SWEEP_COLUMNS, cells)


def render_latency_table(rows: Sequence[LatencyRow], exponent: float | None = None) -> str:
    """Latency rows, with the fitted growth exponent in a footer when given."""
    cells = [
        [
            row.decoder,
            format_number(row.n),
            format_number(row.k) if row.k else "-",
            format_ms(row.mean_ms),
            format_ms(row.std_ms),
        ]
        for row in rows
    ]
    footer = None
    if exponent is not None:
        footer = ["time ~ k^x", "", "", f"x = {format_float(exponent)}", ""]
    return render_table(LATENCY_COLUMNS, cells, footer=footer)


def render_metrics_table(rows: Sequence[StepMetrics]) -> str:
    """Training curve, one line per step row given."""
    cells = [
        [
            format_number(row.step),
            format_float(row.crf_nll, 4),
            format_float(row.nar_loss, 4),
            format_float(row.joint_loss, 4),
            format_ms(row.wall_ms),
        ]
        for row in rows
    ]
    return render_table(METRICS_COLUMNS, cells)


def render_eval_table(summary: EvalSummary) -> str:
    cells = [
        format_number(summary.sentences),
        format_float(summary.bleu),
        format_percent(summary.consistency),
    ]
    return render_table(EVAL_COLUMNS, [cells])


def _format_row(values: list[str], columns: list[Column], *, header: bool = False) -> str:
    """Format a list of values into a table row; numeric cells align right."""
    cells: list[str] = []
    for (_, width, is_numeric), value in zip(columns, values, strict=True):
        if is_numeric and (value or header):
            cells.append(f" {value:>{width - 2}} ")
        else:
            cells.append(f" {value:<{width - 2}} ")
    return BOX_V + BOX_V.join(cells) + BOX_V
