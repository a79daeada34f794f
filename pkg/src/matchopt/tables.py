"""CSV and SVG helpers shared by the command-line tools.

Files are RFC-4180 CSV in UTF-8 with a mandatory header row. Floats are
written with 17 significant digits so that they re-parse to the same double.
Every file is written to a temporary sibling and moved into place, so a
reader never sees a half-written output.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from ._errors import InvalidInputError
from .ot_core import Coupling


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: list[str], rows) -> None:
    atomic_write_text(path, csv_text(header, rows))


def write_records(path, records: list[dict], columns: list[str] | None = None) -> list[str]:
    """Write dicts as rows; columns default to the union of keys in first-seen order."""
    if columns is None:
        columns = []
        for rec in records:
            for key in rec:
                if key not in columns:
                    columns.append(key)
    write_csv(path, columns, ([rec.get(c) for c in columns] for rec in records))
    return columns


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise InvalidInputError(f"{path}: cannot read CSV: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path}: file is empty")
    return rows[0], rows[1:]


def _parse_float(text: str, path, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise InvalidInputError(f"{path}:{line}: not a number: {text!r}") from None


def _is_numeric_row(row: list[str]) -> bool:
    try:
        [float(v) for v in row]
    except ValueError:
        return False
    return True


def read_matrix(path) -> np.ndarray:
    """Read a square numeric matrix.

    The first row is a header of column labels. A first row that is entirely
    numeric is taken as data, so bare matrices are accepted too.
    """
    header, body = read_rows(path)
    first_line = 2
    if _is_numeric_row(header):
        body = [header] + body
        first_line = 1
    if not body:
        raise InvalidInputError(f"{path}: no data rows")
    width = len(body[0])
    values = []
    for offset, row in enumerate(body):
        line = first_line + offset
        if len(row) != width:
            raise InvalidInputError(f"{path}:{line}: expected {width} fields, got {len(row)}")
        values.append([_parse_float(v.strip(), path, line) for v in row])
    matrix = np.array(values, dtype=float)
    if matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"{path}: matrix is {matrix.shape[0]}x{matrix.shape[1]}, must be square")
    if not np.all(np.isfinite(matrix)):
        bad = int(np.argwhere(~np.isfinite(matrix))[0][0])
        raise InvalidInputError(f"{path}:{first_line + bad}: non-finite value")
    return matrix


def write_matrix(path, matrix: np.ndarray, prefix: str = "w_") -> None:
    n_cols = matrix.shape[1]
    write_csv(path, [f"{prefix}{j}" for j in range(n_cols)], matrix.tolist())


LONG_COLUMNS = ("x_index", "w_index", "mass")


def coupling_long_rows(mass: np.ndarray, x_values=None, w_values=None):
    n = mass.shape[0]
    for i in range(n):
        for j in range(n):
            row = [i, j, float(mass[i, j])]
            if x_values is not None:
                row += [float(x_values[i]), float(w_values[j])]
            yield row


def write_coupling_long(path, mass: np.ndarray, x_values=None, w_values=None) -> None:
    header = list(LONG_COLUMNS)
    if x_values is not None:
        header += ["x_value", "w_value"]
    write_csv(path, header, coupling_long_rows(mass, x_values, w_values))


def read_coupling(path) -> Coupling:
    """Read a coupling in matrix form or long form (``x_index, w_index, mass``)."""
    header, body = read_rows(path)
    names = [h.strip() for h in header]
    if all(c in names for c in LONG_COLUMNS):
        ix, iw, im = (names.index(c) for c in LONG_COLUMNS)
        n = math.isqrt(len(body))
        if n * n != len(body) or n == 0:
            raise InvalidInputError(f"{path}: {len(body)} long-format rows is not a square grid")
        mass = np.full((n, n), np.nan)
        for offset, row in enumerate(body):
            line = offset + 2
            if len(row) != len(names):
                raise InvalidInputError(f"{path}:{line}: expected {len(names)} fields, got {len(row)}")
            try:
                i, j = int(row[ix]), int(row[iw])
            except ValueError:
                raise InvalidInputError(f"{path}:{line}: indices must be integers") from None
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidInputError(f"{path}:{line}: index ({i}, {j}) outside a {n}x{n} grid")
            if not np.isnan(mass[i, j]):
                raise InvalidInputError(f"{path}:{line}: duplicate cell ({i}, {j})")
            mass[i, j] = _parse_float(row[im], path, line)
        if np.any(np.isnan(mass)):
            raise InvalidInputError(f"{path}: grid has missing or NaN cells")
    else:
        mass = read_matrix(path)
    try:
        return Coupling(mass)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc


def _ramp(t: float) -> str:
    # White to dark blue; each channel decreases with t, so lightness is monotone.
    lo, hi = (255, 255, 255), (8, 48, 107)
    rgb = [round(a + (b - a) * t) for a, b in zip(lo, hi)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_svg(mass: np.ndarray, cell: int | None = None, title: str = "") -> str:
    """Standalone SVG of a coupling, darker meaning more mass."""
    n = mass.shape[0]
    cell = cell or max(2, 600 // n)
    top = 24 if title else 0
    size = n * cell
    peak = float(mass.max())
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + top}" '
        f'viewBox="0 0 {size} {size + top}" shape-rendering="crispEdges">',
    ]
    if title:
        parts.append(f'<text x="4" y="16" font-family="sans-serif" font-size="13">{_escape(title)}</text>')
    for i in range(n):
        for j in range(n):
            t = float(mass[i, j]) / peak if peak > 0 else 0.0
            parts.append(
                f'<rect x="{j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" fill="{_ramp(t)}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
