"""
Report writer service.
Writes run results to CSV files and a plain-text summary per run.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import aiofiles
import aiofiles.os

logger = logging.getLogger(__name__)


class ReportWriter:
    """
    Writes one CSV file per table plus summary.txt into the output directory.
    Rows carry no timestamps; floats are written with repr so identical
    runs produce identical files.
    """

    # Columns of continuation traces and single solve reports
    TRACE_HEADERS = [
        "parameter",
        "sup_phi",
        "res_lich",
        "res_vector",
        "iterations",
        "branch",
    ]

    def __init__(self, output_dir: str = "output", csv_enabled: bool = True):
        """
        Initialize report writer.

        Args:
            output_dir: Directory for CSV files and summary.txt
            csv_enabled: When False only summary.txt is written
        """
        self.output_dir = Path(output_dir)
        self.csv_enabled = csv_enabled
        self.headers: Dict[str, List[str]] = {}
        self.written: List[Path] = []

    async def start_run(self) -> Path:
        """Create the output directory."""
        await aiofiles.os.makedirs(self.output_dir, exist_ok=True)
        logger.info(f"Writing results to {self.output_dir}")
        return self.output_dir

    async def start_table(self, name: str, headers: Sequence[str]) -> Optional[Path]:
        """
        Create `<name>.csv` with its header row.

        Returns:
            Path to the CSV file, or None when CSV output is disabled
        """
        self.headers[name] = list(headers)
        if not self.csv_enabled:
            return None
        path = self.output_dir / f"{name}.csv"
        async with aiofiles.open(path, mode="w", newline="", encoding="utf-8") as f:
            await f.write(",".join(headers) + "\n")
        self.written.append(path)
        return path

    async def log_row(self, name: str, row: Dict[str, object]) -> None:
        """
        Append a row to `<name>.csv` in header order.

        Args:
            name: Table started with start_table
            row: Mapping from column to value
        """
        if not self.csv_enabled:
            return
        if name not in self.headers:
            raise KeyError(f"table '{name}' was not started")
        values = [self._format(row.get(column, "")) for column in self.headers[name]]
        async with aiofiles.open(self.output_dir / f"{name}.csv", mode="a", newline="", encoding="utf-8") as f:
            await f.write(",".join(values) + "\n")

    async def log_rows(self, name: str, rows: Iterable[Dict[str, object]]) -> None:
        for row in rows:
            await self.log_row(name, row)

    async def write_summary(self, lines: Sequence[str]) -> Path:
        """Write summary.txt (always written, independent of csv_enabled)."""
        path = self.output_dir / "summary.txt"
        async with aiofiles.open(path, mode="w", encoding="utf-8") as f:
            await f.write("\n".join(lines) + "\n")
        logger.info(f"Summary written to {path}")
        return path

    async def read_rows(self, name: str) -> List[Dict[str, str]]:
        """Read a written table back as dictionaries."""
        path = self.output_dir / f"{name}.csv"
        if not path.exists():
            return []
        async with aiofiles.open(path, mode="r", encoding="utf-8") as f:
            text = await f.read()
        return list(csv.DictReader(text.splitlines()))

    def _format(self, value: object) -> str:
        """repr for floats, str otherwise, quoted when needed."""
        if isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        if any(c in text for c in [",", '"', "\n", "\r"]):
            escaped = text.replace('"', '""')
            return f'"{escaped}"'
        return text
