"""CSV import/export and atomic file output.

Every CSV written here starts with one ``#`` comment line naming the index
convention, followed by a header row. Floats are written with ``repr`` so a
value read back is bit-identical; event timestamps use 12 significant digits.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .counting import EventStream
from .errors import DomainError
from .powerflow import CouplingMatrix

MODE_CONVENTION = "flat index p=1..M ordered by group then descending m (HG00; HG10, HG01; ...)"


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_json(path, data) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def fmt(value) -> str:
    """Deterministic cell text: blank for missing/NaN, ``repr`` for floats."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "" if math.isnan(v) else repr(v)
    return str(value)


def csv_text(comment: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _read_rows(source):
    """Header and data rows of a CSV (path or text), skipping ``#`` lines."""
    if isinstance(source, (str, os.PathLike)) and "\n" not in str(source):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = str(source)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise DomainError("CSV has no header row")
    return rows[0], rows[1:]


def _cell(text):
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DomainError(f"non-numeric CSV cell {text!r}") from None


def _matrix_from(source, name):
    header, rows = _read_rows(source)
    values = np.array([[_cell(c) for c in r[1:]] for r in rows], dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] != len(header) - 1:
        raise DomainError(f"{name} must be a square table with one label column")
    return values


def matrix_csv(matrix, comment: str, labels) -> str:
    """Square matrix with row labels in the first column."""
    matrix = np.asarray(matrix, dtype=float)
    header = ["row"] + list(labels)
    return csv_text(comment, header, ([lab] + list(row) for lab, row in zip(labels, matrix)))


# ---------------------------------------------------------------------------
# coupling matrices and group tables
# ---------------------------------------------------------------------------
def coupling_matrix_to_csv(cm: CouplingMatrix) -> str:
    labels = [str(p) for p in range(1, cm.mode_count + 1)]
    return matrix_csv(cm.d, f"d[p,q] in 1/m, row p, column q; {MODE_CONVENTION}", labels)


def coupling_matrix_from_csv(source, group_of) -> CouplingMatrix:
    return CouplingMatrix(_matrix_from(source, "coupling matrix"), tuple(group_of))


def group_table_to_csv(table, unit: str = "fraction") -> str:
    table = np.asarray(table, dtype=float)
    labels = [f"g{g}" for g in range(1, table.shape[0] + 1)]
    return matrix_csv(table, f"group table ({unit}), row = input group, column = output group", labels)


def group_table_from_csv(source) -> np.ndarray:
    return _matrix_from(source, "group table")


def read_targets_csv(source) -> np.ndarray:
    """Q x Q calibration targets in dB; empty cells come back as NaN (masked).

    A leading label column is detected by a non-numeric first header cell.
    """
    header, rows = _read_rows(source)
    try:
        float(header[0])
        # no header: the first row is data
        rows = [header] + rows
        skip = 0
    except ValueError:
        skip = 1 if header[0].strip().lower() in ("", "row", "group", "g") else 0
    values = np.array([[_cell(c) for c in r[skip:]] for r in rows], dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DomainError(f"targets must be square, got {values.shape}")
    return values


def transfer_matrix_to_csv(t, wavelength_band=None) -> str:
    band = getattr(t, "wavelength_band", wavelength_band)
    t = np.asarray(getattr(t, "t", t), dtype=float)
    note = f"; band {band[0]:g}-{band[1]:g} nm" if band else ""
    labels = [str(p) for p in range(1, t.shape[0] + 1)]
    return matrix_csv(t, f"t[q,p] power transmittance, row = output q, column = input p{note}; {MODE_CONVENTION}",
                      labels)


# ---------------------------------------------------------------------------
# event streams and statistics
# ---------------------------------------------------------------------------
def event_stream_to_csv(stream: EventStream) -> str:
    buf = io.StringIO()
    buf.write(f"# event stream '{stream.label}', duration {stream.duration!r} s; index, timestamp (s)\n")
    buf.write("index,timestamp\n")
    for i, t in enumerate(stream.timestamps):
        buf.write(f"{i},{t:.12g}\n")
    return buf.getvalue()


def event_stream_from_csv(source, duration: float, label: str = "") -> EventStream:
    _, rows = _read_rows(source)
    return EventStream(np.array([float(r[1]) for r in rows]), duration, label)


STATS_COLUMNS = ("p", "mode", "group", "R_1p", "R_2p", "R_cp", "R_ap", "L_p", "eps_Lp", "FQP", "eps_FQP")


def stats_to_csv(rows) -> str:
    """Per-mode statistics table from ``SimulationResult.rate_table()``."""
    return csv_text(f"per-mode coincidence statistics, rates in Hz; {MODE_CONVENTION}", STATS_COLUMNS,
                    ([r[c] for c in STATS_COLUMNS] for r in rows))


def plot_csv(comment: str, x, y, y_err=None) -> str:
    """Flat ``x, y, y_err`` plot data."""
    y_err = [None] * len(x) if y_err is None else y_err
    return csv_text(comment, ("x", "y", "y_err"), zip(x, y, y_err))
