"""Serialize experiment reports as CSV, JSON or whitespace-separated plot data."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

EXTENSIONS = {"csv": "csv", "json": "json", "plotdata": "dat"}


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, list):
        return [_clean(v) for v in value]
    return value


def _cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, list):
        return json.dumps(value)
    return repr(value) if isinstance(value, float) else str(value)


def _widths(columns, records) -> dict[str, int]:
    widths = {}
    for rec in records:
        for col in columns:
            if isinstance(rec[col], list):
                widths[col] = max(widths.get(col, 0), len(rec[col]))
    return widths


def _flat(columns, record, widths) -> tuple[list[str], list[str]]:
    names, cells = [], []
    for col in columns:
        val = record[col]
        if col in widths:
            vals = val if isinstance(val, list) else [None] * widths[col]
            for k in range(widths[col]):
                names.append(f"{col}_{k}")
                cells.append(_cell(vals[k]))
        else:
            names.append(col)
            cells.append(_cell(val))
    return names, cells


def emit_report(report, fmt: str, path) -> Path:
    """Write ``report`` to ``path`` (a file, or a directory to hold ``report.<ext>``)."""
    if fmt not in EXTENSIONS:
        raise ValueError(f"unknown format {fmt!r}; choose from {sorted(EXTENSIONS)}")
    path = Path(path)
    if path.is_dir():
        path = path / f"report.{EXTENSIONS[fmt]}"
    columns = list(report.columns)
    records = report.records()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            if fmt == "csv":
                writer = csv.writer(fh)
                writer.writerow(columns)
                for rec in records:
                    writer.writerow([_cell(rec[c]) for c in columns])
            elif fmt == "json":
                rows = [{c: _clean(rec[c]) for c in columns} for rec in records]
                json.dump({"columns": columns, "rows": rows}, fh, indent=1)
                fh.write("\n")
            else:
                widths = _widths(columns, records)
                header = _flat(columns, {c: None for c in columns}, widths)[0]
                lines = [" ".join(_flat(columns, rec, widths)[1]) for rec in records]
                fh.write("# " + " ".join(header) + "\n")
                fh.writelines(line + "\n" for line in lines)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_csv_report(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
