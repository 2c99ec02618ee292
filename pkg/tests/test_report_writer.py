"""
Tests for the CSV and summary writer.
"""

import asyncio

import pytest

from services.report_writer import ReportWriter


def _write(writer: ReportWriter, rows):
    async def go():
        await writer.start_run()
        await writer.start_table("trace", ReportWriter.TRACE_HEADERS)
        await writer.log_rows("trace", rows)
        await writer.write_summary(["mode = k-sweep", "outcome = ok"])
        return await writer.read_rows("trace")

    return asyncio.run(go())


def test_rows_round_trip_in_header_order(tmp_path):
    writer = ReportWriter(str(tmp_path / "run"))
    rows = _write(writer, [
        {"parameter": 0.1, "sup_phi": 1.25, "res_lich": 1e-12, "res_vector": 0.0, "iterations": 4, "branch": "small"},
        {"branch": "large", "parameter": 0.2},
    ])
    assert rows[0]["sup_phi"] == "1.25"
    assert rows[0]["res_lich"] == "1e-12"
    assert rows[1]["branch"] == "large"
    assert rows[1]["sup_phi"] == ""
    header = (tmp_path / "run" / "trace.csv").read_text().splitlines()[0]
    assert header == ",".join(ReportWriter.TRACE_HEADERS)


def test_values_with_commas_are_quoted(tmp_path):
    writer = ReportWriter(str(tmp_path))
    assert writer._format("1.0, 2.0") == '"1.0, 2.0"'
    assert writer._format(0.1) == "0.1"


def test_csv_disabled_still_writes_summary(tmp_path):
    writer = ReportWriter(str(tmp_path), csv_enabled=False)
    rows = _write(writer, [{"parameter": 0.1}])
    assert rows == []
    assert not (tmp_path / "trace.csv").exists()
    assert (tmp_path / "summary.txt").read_text() == "mode = k-sweep\noutcome = ok\n"


def test_unstarted_table_rejected(tmp_path):
    writer = ReportWriter(str(tmp_path))
    with pytest.raises(KeyError):
        asyncio.run(writer.log_row("missing", {}))
