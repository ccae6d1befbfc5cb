"""Small file helpers shared by the stage readers."""

from __future__ import annotations

import csv

import numpy as np


class ParseError(ValueError):
    """Malformed input file; the message carries file, line and field context."""


def read_numeric_csv(path, ncols: int, header=None) -> np.ndarray:
    """Read a headed CSV of floats into an (N, ncols) array.

    ``header`` optionally pins the exact column names.
    """
    path = str(path)
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: line 1: empty file, expected a header row") from None
        if len(head) != ncols:
            raise ParseError(f"{path}: line 1: header has {len(head)} columns, expected {ncols}")
        if header is not None and [h.strip() for h in head] != list(header):
            raise ParseError(f"{path}: line 1: unexpected header {head}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncols:
                raise ParseError(f"{path}: line {line}: {len(row)} fields, expected {ncols}")
            vals = []
            for j, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: line {line}, field {j + 1} ({head[j].strip()}): "
                                     f"not a number: {cell!r}") from None
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncols)
