"""CSV helpers: comma separated, header row, UTF-8, LF endings, 9 significant digits."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.9g"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    """Write ``rows`` (iterable of sequences or a 2-D array) under ``header``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, rows)`` with numeric cells converted to float where possible."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            out = []
            for v in row:
                try:
                    out.append(float(v))
                except ValueError:
                    out.append(v)
            rows.append(out)
    return header, rows


def read_columns(path):
    """Numeric CSV as a dict of column name to array."""
    header, rows = read_csv(path)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, k] for k, name in enumerate(header)}
