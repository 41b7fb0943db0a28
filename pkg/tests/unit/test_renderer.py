"""Unit tests for structured_nart.renderer module."""

from structured_nart.records import EvalSummary, LatencyRow, SweepRow
from structured_nart.renderer import (
    BOX_BL,
    BOX_TL,
    LATENCY_COLUMNS,
    SWEEP_COLUMNS,
    Column,
    render_border,
    render_eval_table,
    render_header,
    render_latency_table,
    render_separator,
    render_sweep_table,
    render_table,
)


class TestBorders:
    """Tests for border and separator lines."""

    def test_top_border(self) -> None:
        """Top border starts with the top-left corner and spans every column."""
        columns: list[Column] = [("a", 4, False), ("b", 3, True)]
        assert render_border("top", columns) == "┌────┬───┐"

    def test_bottom_border(self) -> None:
        """Bottom border uses the bottom corners."""
        assert render_border("bottom", [("a", 2, False)]) == "└──┘"

    def test_separator(self) -> None:
        """Separators join columns with crosses."""
        assert render_separator([("a", 2, False), ("b", 2, False)]) == "├──┼──┤"

    def test_header_alignment(self) -> None:
        """Numeric headers align right, text headers left."""
        header = render_header([("Name", 8, False), ("k", 5, True)])
        assert header == "│ Name   │   k │"


class TestRenderTable:
    """Tests for render_table."""

    def test_lines_share_width(self) -> None:
        """Every line of the table has the same width."""
        table = render_table(SWEEP_COLUMNS, [["1", "20.00", "50.0%", "1.00 ms"]])
        widths = {len(line) for line in table.split("\n")}
        assert len(widths) == 1

    def test_wide_cells_widen_column(self) -> None:
        """A value longer than its column is never cut."""
        table = render_table([("x", 3, False)], [["a-much-longer-value"]])
        assert "a-much-longer-value" in table
        assert len({len(line) for line in table.split("\n")}) == 1

    def test_footer_rendered_last(self) -> None:
        """The footer row sits just above the bottom border."""
        table = render_table([("x", 6, False)], [["row"]], footer=["total"])
        lines = table.split("\n")
        assert "total" in lines[-2]
        assert lines[-1].startswith(BOX_BL)
        assert lines[0].startswith(BOX_TL)


class TestResultTables:
    """Tests for the sweep, latency and evaluation tables."""

    def test_sweep_table(self) -> None:
        """Sweep rows show k, BLEU, consistency and latency."""
        rows = [
            SweepRow(k=1, bleu=20.5, consistency=0.5, mean_latency_ms=1.2),
            SweepRow(k=64, bleu=25.25, consistency=None, mean_latency_ms=12.0),
        ]
        table = render_sweep_table(rows)
        assert "20.50" in table
        assert "50.0%" in table
        assert "12.00 ms" in table
        assert " - " in table

    def test_latency_table_with_exponent(self) -> None:
        """The fitted exponent appears in a footer row."""
        rows = [
            LatencyRow(decoder="nar", n=10, mean_ms=1.0, std_ms=0.1),
            LatencyRow(decoder="crf", n=10, k=16, mean_ms=2.0, std_ms=0.2),
        ]
        table = render_latency_table(rows, exponent=0.95)
        assert "time ~ k^x" in table
        assert "x = 0.95" in table
        assert "crf" in table

    def test_latency_table_without_exponent(self) -> None:
        """No exponent, no footer; beam-free rows show a dash for k."""
        rows = [LatencyRow(decoder="ar", n=7, mean_ms=3.0, std_ms=0.0)]
        table = render_latency_table(rows)
        assert "k^x" not in table
        assert len(table.split("\n")) == 5
        assert len(LATENCY_COLUMNS) == 5

    def test_eval_table(self) -> None:
        """Evaluation summary shows BLEU and sentence count."""
        table = render_eval_table(EvalSummary(sentences=1200, bleu=31.0, consistency=0.9))
        assert "1,200" in table
        assert "31.00" in table
        assert "90.0%" in table
