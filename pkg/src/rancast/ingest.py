"""CSV ingestion and emission for cell datasets and handover tables.

Cell CSV schema: header ``timestamp,F1,...,F20``, ISO-8601 hourly timestamps,
strictly increasing. Handover CSV schema: ``target,neighbor,direction,rate_percent``
with direction in {in, out}.
"""

from __future__ import annotations

import csv
from datetime import datetime
from pathlib import Path

import numpy as np

from .dataset import FEATURE_LABELS, CellDataset, CellId, TimeGrid
from .errors import (
    DataError,
    GapTooLongError,
    MalformedCsvError,
    NonHourlyTimestampsError,
)
from .handover import DIRECTIONS, HandoverMatrix, HandoverRate

CELL_CSV_HEADER = ("timestamp", *FEATURE_LABELS)
HANDOVER_CSV_HEADER = ("target", "neighbor", "direction", "rate_percent")

DEFAULT_MAX_GAP_HOURS = 3


def _parse_timestamp(text: str, line: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise MalformedCsvError(f"line {line}: bad timestamp {text!r}") from None
    if (ts.minute, ts.second, ts.microsecond) != (0, 0, 0):
        raise NonHourlyTimestampsError(f"line {line}: timestamp {text!r} is not hour-aligned")
    return ts


def read_cell_csv(path, cell: CellId | None = None,
                  max_gap_hours: int = DEFAULT_MAX_GAP_HOURS) -> CellDataset:
    """Read one cell's feature CSV into a validated dataset.

    Gaps of up to ``max_gap_hours`` missing hours are filled by linear
    interpolation; longer gaps are an error. The cell id is parsed from the
    file stem unless given explicitly.
    """
    path = Path(path)
    if cell is None:
        cell = CellId.parse(path.stem)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsvError(f"{path}: empty file") from None
        if tuple(header) != CELL_CSV_HEADER:
            missing = set(CELL_CSV_HEADER) - set(header)
            detail = f" (missing columns: {sorted(missing)})" if missing else ""
            raise MalformedCsvError(f"{path}: unexpected header{detail}")
        timestamps: list[datetime] = []
        rows: list[list[float]] = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(CELL_CSV_HEADER):
                raise MalformedCsvError(
                    f"{path} line {line}: expected {len(CELL_CSV_HEADER)} fields, got {len(row)}"
                )
            ts = _parse_timestamp(row[0], line)
            if timestamps and ts <= timestamps[-1]:
                raise NonHourlyTimestampsError(
                    f"{path} line {line}: timestamps must be strictly increasing"
                )
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise MalformedCsvError(f"{path} line {line}: non-numeric value") from None
            timestamps.append(ts)
            rows.append(values)
    if not rows:
        raise MalformedCsvError(f"{path}: no data rows")

    start, end = timestamps[0], timestamps[-1]
    length = int((end - start).total_seconds() // 3600) + 1
    data = np.full((length, len(FEATURE_LABELS)), np.nan)
    for ts, values in zip(timestamps, rows):
        offset = (ts - start).total_seconds() / 3600
        if offset != int(offset):
            raise NonHourlyTimestampsError(f"{path}: timestamp {ts} is off the hourly grid")
        data[int(offset)] = values

    _fill_gaps(data, path, max_gap_hours)
    grid = TimeGrid(start, length)
    series = {label: data[:, j].copy() for j, label in enumerate(FEATURE_LABELS)}
    return CellDataset(cell, grid, series)


def _fill_gaps(data: np.ndarray, path, max_gap_hours: int) -> None:
    missing = np.isnan(data[:, 0])
    if not missing.any():
        return
    # First and last rows are always present, so every NaN run is interior.
    idx = np.flatnonzero(missing)
    run_start = idx[0]
    prev = idx[0]
    runs = []
    for i in idx[1:]:
        if i != prev + 1:
            runs.append((run_start, prev))
            run_start = i
        prev = i
    runs.append((run_start, prev))
    for a, b in runs:
        gap = b - a + 1
        if gap > max_gap_hours:
            raise GapTooLongError(
                f"{path}: gap of {gap} missing hours starting at row offset {a}"
                f" exceeds the {max_gap_hours}-hour fill limit"
            )
    present = np.flatnonzero(~missing)
    for j in range(data.shape[1]):
        data[missing, j] = np.interp(idx, present, data[present, j])


def write_cell_csv(path, ds: CellDataset) -> None:
    """Write a dataset in the cell CSV schema (deterministic formatting)."""
    path = Path(path)
    matrix = ds.matrix(FEATURE_LABELS)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CELL_CSV_HEADER)
        for i in range(len(ds)):
            ts = ds.grid.timestamp(i).isoformat()
            writer.writerow([ts] + [repr(float(v)) for v in matrix[i]])


def read_handover_csv(path) -> HandoverMatrix:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsvError(f"{path}: empty file") from None
        if tuple(header) != HANDOVER_CSV_HEADER:
            raise MalformedCsvError(f"{path}: unexpected handover header {header}")
        for line, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise MalformedCsvError(f"{path} line {line}: expected 4 fields")
            target, neighbor, direction, rate = row
            if direction not in DIRECTIONS:
                raise MalformedCsvError(f"{path} line {line}: bad direction {direction!r}")
            try:
                rate_val = float(rate)
            except ValueError:
                raise MalformedCsvError(f"{path} line {line}: bad rate {rate!r}") from None
            try:
                rows.append(
                    HandoverRate(CellId.parse(target), CellId.parse(neighbor), direction, rate_val)
                )
            except DataError as exc:
                raise MalformedCsvError(f"{path} line {line}: {exc}") from None
    return HandoverMatrix(tuple(rows))


def write_handover_csv(path, ho: HandoverMatrix) -> None:
    ordered = sorted(
        ho.rows,
        key=lambda r: (r.target.render(), r.direction, -r.rate_percent, r.neighbor.render()),
    )
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HANDOVER_CSV_HEADER)
        for r in ordered:
            writer.writerow(
                [r.target.render(), r.neighbor.render(), r.direction, repr(float(r.rate_percent))]
            )
