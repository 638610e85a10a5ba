import csv
import logging
import math
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np

from engine.errors import InputValidationError

logger = logging.getLogger('app_utils')


def format_float(value: Any) -> str:
    """17 significant digits, enough to read back the same double."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _parse_cell(cell: str) -> Optional[float]:
    """None for text that is not a number; nan and inf parse."""
    try:
        return float(cell)
    except ValueError:
        return None


def read_matrix(path: str) -> np.ndarray:
    """Read an n x d numeric CSV; rows are observations.

    A first line with any non-numeric cell is taken as a header. Errors name
    the 1-based file line and column.
    """
    rows: List[List[float]] = []
    width: Optional[int] = None
    try:
        with open(path, newline="") as f:
            for line_no, record in enumerate(csv.reader(f), start=1):
                cells = [cell.strip() for cell in record]
                if not cells or all(cell == "" for cell in cells):
                    continue
                parsed = [_parse_cell(cell) for cell in cells]
                if not rows and width is None and any(value is None for value in parsed):
                    logger.debug("%s: treating line %d as header", path, line_no)
                    width = len(cells)
                    continue
                if width is not None and len(cells) != width:
                    raise InputValidationError(
                        f"{path}: ragged row at line {line_no}: expected {width} columns, got {len(cells)}",
                        row=line_no,
                    )
                width = len(cells)
                for col_no, (cell, value) in enumerate(zip(cells, parsed), start=1):
                    if value is None or not math.isfinite(value):
                        kind = "non-numeric" if value is None else "non-finite"
                        raise InputValidationError(
                            f"{path}: {kind} cell {cell!r} at row {line_no}, column {col_no}",
                            row=line_no,
                            column=col_no,
                        )
                rows.append(parsed)
    except OSError as e:
        logger.error("Failed to read %s: %s", path, e)
        raise InputValidationError(f"cannot read {path}: {e.strerror or e}") from e

    if not rows:
        raise InputValidationError(f"{path}: no numeric rows")
    logger.info("Read %d x %d matrix from %s", len(rows), width, path)
    return np.array(rows, dtype=float)


def write_matrix(path: str, values: np.ndarray, header: Optional[Sequence[str]] = None) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if header:
            writer.writerow(header)
        for row in values:
            writer.writerow([format_float(v) for v in row])
    logger.info("Wrote %d x %d matrix to %s", values.shape[0], values.shape[1], path)


def rows_to_csv(rows: Iterable[dict], fieldnames: Sequence[str], stream) -> None:
    writer = csv.DictWriter(stream, fieldnames=list(fieldnames), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: format_float(row.get(key)) for key in fieldnames})
