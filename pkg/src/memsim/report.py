"""CSV and text-table output with a stable column order."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


@dataclass
class Table:
    name: str
    columns: Sequence[str]
    rows: list = field(default_factory=list)


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float) or hasattr(v, "dtype"):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)  # shortest string that round-trips exactly
    return str(v)


def to_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        if len(r) != len(table.columns):
            raise ValueError(f"{table.name}: row of {len(r)} values for {len(table.columns)} columns")
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def to_text(table: Table) -> str:
    cells = [list(table.columns)] + [[_text_cell(v) for v in r] for r in table.rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(table.columns))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _text_cell(v) -> str:
    if isinstance(v, float) or hasattr(v, "dtype"):
        v = float(v)
        return f"{v:.6g}"
    return str(v)


def read_csv(path) -> Table:
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        columns = next(r)
        rows = [[_parse(v) for v in row] for row in r]
    return Table(path.stem, columns, rows)


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def emit_report(results: Iterable[Table] | Table, out_dir, formats=("csv",)) -> list[Path]:
    """Write each table as ``<name>.csv`` and/or ``<name>.txt``; returns the written paths."""
    if isinstance(results, Table):
        results = [results]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in results:
        for fmt in formats:
            if fmt == "csv":
                p = out / f"{t.name}.csv"
                p.write_text(to_csv(t))
            elif fmt == "text":
                p = out / f"{t.name}.txt"
                p.write_text(to_text(t))
            else:
                raise ValueError(f"unknown report format {fmt!r}")
            written.append(p)
    return written
