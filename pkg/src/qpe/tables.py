"""CSV-with-JSON-header output tables (same convention as ``.qpetraj``).

Line 1 is a JSON object describing the run (sorted keys, so equal configs
serialize to equal bytes); line 2 names the columns; the rest are CSV rows
with floats at 17 significant digits.
"""

from __future__ import annotations

import json
from typing import Sequence

from .errors import FormatError


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_table(path, header: dict, columns: Sequence[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_table(path) -> tuple[dict, list, list]:
    """Returns (header, columns, rows-of-strings)."""
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad table header: {exc}") from exc
        columns = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    for i, row in enumerate(rows):
        if len(row) != len(columns):
            raise FormatError(f"row {i + 3}: expected {len(columns)} columns, got {len(row)}")
    return header, columns, rows
