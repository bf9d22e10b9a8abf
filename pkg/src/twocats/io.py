"""CSV and key=value config helpers.

CSV files are UTF-8 with a header row, comma separators and ``.`` as the
decimal mark.  Floats are written with ``repr`` (shortest round-trip
form), so a write/read cycle reproduces every value exactly.
"""

import csv

import numpy as np


class CsvFormatError(ValueError):
    """Malformed CSV input (bad header, ragged row, non-numeric cell)."""


class ConfigFormatError(ValueError):
    pass


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path, header, rows):
    """Write a header plus rows of mixed values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def write_csv(path, array, header=("x1", "x2")):
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[1] != len(header):
        raise ValueError("header length does not match the number of columns")
    write_table(path, header, arr.tolist())


def read_csv(path, columns=2):
    """Read a numeric CSV with a header row into an ``(n, columns)`` float array."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if len(header) != columns:
            raise CsvFormatError(f"{path}: expected {columns} columns, header has {len(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != columns:
                raise CsvFormatError(f"{path}:{lineno}: expected {columns} fields, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def read_config(path):
    """Parse a flat ``key = value`` file; blank lines and ``#`` comments are ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigFormatError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigFormatError(f"{path}:{lineno}: empty key")
            out[key.replace("-", "_")] = value
    return out
