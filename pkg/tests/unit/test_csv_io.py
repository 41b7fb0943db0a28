"""Unit tests for structured_nart.csv_io module."""

from io import StringIO
from pathlib import Path

import pytest

from structured_nart.csv_io import (
    format_config,
    parse_csv_stream,
    parse_row,
    read_config_row,
    read_csv,
    write_csv,
)
from structured_nart.model import TransitionMode
from structured_nart.records import LatencyRow, StepMetrics, SweepRow


class TestParseRow:
    """Tests for parse_row function."""

    def test_parse_valid_row(self) -> None:
        """String cells are coerced to the row's field types."""
        row = parse_row(
            {"step": "3", "crf_nll": "1.5", "nar_loss": "2.0", "joint_loss": "2.5", "wall_ms": "4"},
            StepMetrics,
        )
        assert row.step == 3
        assert row.joint_loss == pytest.approx(2.5)

    def test_empty_cell_is_none(self) -> None:
        """An empty optional cell becomes None."""
        row = parse_row(
            {"k": "4", "bleu": "10", "consistency": "", "mean_latency_ms": "1"}, SweepRow
        )
        assert row.consistency is None


class TestParseCsvStream:
    """Tests for parse_csv_stream function."""

    def test_skips_comments(self) -> None:
        """Lines starting with '#' are ignored."""
        stream = StringIO("# config: a=1\ndecoder,n,k,mean_ms,std_ms\nnar,5,0,1.0,0.1\n")
        rows = list(parse_csv_stream(stream, LatencyRow))
        assert [row.decoder for row in rows] == ["nar"]

    def test_skips_malformed_rows(self, caplog: pytest.LogCaptureFixture) -> None:
        """Invalid rows are skipped with a warning."""
        stream = StringIO("decoder,n,k,mean_ms,std_ms\nnar,x,0,1.0,0.1\ncrf,5,4,2.0,0.2\n")
        rows = list(parse_csv_stream(stream, LatencyRow))
        assert [row.decoder for row in rows] == ["crf"]
        assert "Skipping row 2" in caplog.text


class TestWriteCsv:
    """Tests for writing result files."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Rows written then read back compare equal."""
        rows = [
            SweepRow(k=1, bleu=12.5, consistency=0.25, mean_latency_ms=1.0),
            SweepRow(k=8, bleu=14.0, consistency=None, mean_latency_ms=3.5),
        ]
        path = write_csv(tmp_path / "out" / "sweep.csv", rows, SweepRow, {"task": "copy"})
        assert read_csv(path, SweepRow) == rows

    def test_config_and_header_rows(self, tmp_path: Path) -> None:
        """The file starts with the config row, then the column header."""
        path = write_csv(
            tmp_path / "m.csv",
            [],
            StepMetrics,
            {"lambda_weight": 0.5, "transition": TransitionMode.STATIC, "lengths": (1, 2)},
        )
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# config: lambda_weight=0.5 transition=static lengths=1,2"
        assert lines[1] == "step,crf_nll,nar_loss,joint_loss,wall_ms"

    def test_read_config_row(self, tmp_path: Path) -> None:
        """The config row parses back into strings."""
        path = write_csv(tmp_path / "m.csv", [], StepMetrics, {"seed": 3, "lr": 0.001})
        assert read_config_row(path) == {"seed": "3", "lr": "0.001"}

    def test_missing_config_row(self, tmp_path: Path) -> None:
        """A plain CSV has no config."""
        path = tmp_path / "plain.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        assert read_config_row(path) == {}

    def test_format_config(self) -> None:
        """Config values render as space-separated key=value pairs."""
        assert format_config({"a": 1, "b": "x"}) == "a=1 b=x"

    def test_read_missing_file(self, tmp_path: Path) -> None:
        """Reading a missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            read_csv(tmp_path / "none.csv", SweepRow)
