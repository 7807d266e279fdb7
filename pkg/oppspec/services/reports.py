"""
CSV report emission.

Every report starts with `# key=value` header lines (version, command, seed,
config echo) followed by a CSV table. Floats carry 9 significant digits and
nothing time-dependent is written, so a rerun with the same config and seed
reproduces the file byte for byte.
"""

import csv
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np
import structlog

from oppspec import __version__
from oppspec.services.ingest import format_number


logger = structlog.get_logger()


def format_cell(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_number(float(value))
    if value is None:
        return ""
    return str(value)


def write_report(path: Path, command: str, seed: int, config_echo: str,
                 columns: Sequence[str], rows: Iterable[Sequence[Any]],
                 extra_header: Optional[Mapping[str, Any]] = None) -> Path:
    """
    Write one report file.

    Args:
        path: Destination file
        command: Command that produced the report
        seed: Root seed of the run
        config_echo: Compact JSON of the run configuration
        columns: CSV column names
        rows: Table rows, one value per column
        extra_header: Additional header key/value pairs

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"version": __version__, "command": command, "seed": seed}
    header.update(extra_header or {})
    header["config"] = config_echo

    count = 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={format_cell(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} values for {len(columns)} columns")
            writer.writerow([format_cell(value) for value in row])
            count += 1

    logger.info("Report written", path=str(path), command=command, rows=count)
    return path


def write_record(path: Path, command: str, seed: int, config_echo: str,
                 record: Mapping[str, Any]) -> Path:
    """Single-record report as a two-column key/value table."""
    return write_report(path, command, seed, config_echo, ("key", "value"), list(record.items()))


def read_report(path: Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header pairs and table rows of a report."""
    header: dict[str, str] = {}
    table: list[str] = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("# ") and not table:
                key, _, value = line[2:].rstrip("\n").partition("=")
                header[key] = value
            else:
                table.append(line)
    return header, list(csv.DictReader(table))
