"""Loading daily price series, cleaning them to log returns, and cutting windows."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateDate,
    EmptyFile,
    MissingColumn,
    NonPositivePrice,
    SeriesTooShort,
    UnparsableRow,
)

TRANSFORMS = ("log_return", "identity")


@dataclass(frozen=True)
class RawSeries:
    """Dated positive price levels in ascending date order."""

    dates: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(values):
            raise ValueError("dates and values differ in length")
        if len(values) < 2:
            raise SeriesTooShort("a raw series needs at least 2 observations")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise NonPositivePrice("raw values must be finite and strictly positive")

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CleanSeries:
    """Model-space series every window is cut from.

    Built by :func:`clean` from a :class:`RawSeries`, or directly from an
    array with :meth:`from_values` for synthetic experiments.
    """

    values: np.ndarray
    transform: str = "identity"
    origin: RawSeries | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("series values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("series values must be finite")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values, transform="identity"):
        return cls(np.asarray(values, dtype=float), transform)

    def __len__(self):
        return len(self.values)

    def head(self, n):
        """The first ``n`` values as a new series (used to hold out a tail)."""
        return CleanSeries(self.values[:n], self.transform, self.origin)


@dataclass(frozen=True)
class WindowBatch:
    """B x T block of sequences; ``offsets`` records where each row starts."""

    data: np.ndarray
    offsets: np.ndarray | None = None

    @property
    def B(self):
        return self.data.shape[0]

    @property
    def T(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class ContextTargetPair:
    context: np.ndarray
    target: np.ndarray
    offset: int = 0


def _parse_date(text, line):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise UnparsableRow(line, f"bad date {text!r}") from exc


def _parse_value(text, line):
    try:
        value = float(text)
    except ValueError as exc:
        raise UnparsableRow(line, f"bad value {text!r}") from exc
    if not np.isfinite(value):
        raise UnparsableRow(line, f"non-finite value {text!r}")
    return value


def load_csv(path, date_column="date", value_column="value"):
    """Read a two-column (date, value) CSV into a :class:`RawSeries`.

    Rows may appear in any order; they are sorted by date. Line numbers in
    :class:`UnparsableRow` count the header as line 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path} is empty")
        for col in (date_column, value_column):
            if col not in reader.fieldnames:
                raise MissingColumn(f"column {col!r} not in {reader.fieldnames}")
        rows = []
        for row in reader:
            line = reader.line_num
            date_text, value_text = row[date_column], row[value_column]
            if date_text is None or value_text is None:
                raise UnparsableRow(line, "too few fields")
            rows.append((_parse_date(date_text, line), _parse_value(value_text, line)))
    if not rows:
        raise EmptyFile(f"{path} has a header but no data rows")

    rows.sort(key=lambda r: r[0])
    for (d0, _), (d1, _) in zip(rows, rows[1:]):
        if d0 == d1:
            raise DuplicateDate(f"date {d0.isoformat()} appears more than once")
    dates = [d for d, _ in rows]
    values = np.array([v for _, v in rows])
    if np.any(values <= 0):
        raise NonPositivePrice("prices must be strictly positive")
    return RawSeries(dates, values)


def clean(raw: RawSeries, transform="log_return") -> CleanSeries:
    """Map raw prices into model space.

    ``log_return`` gives ``ln(raw[i+1] / raw[i])`` (one element shorter);
    ``identity`` copies the levels.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}")
    values = np.asarray(raw.values, dtype=float)
    if np.any(values <= 0):
        raise NonPositivePrice("log of a non-positive price")
    if transform == "log_return":
        out = np.log(values[1:] / values[:-1])
    else:
        out = values.copy()
    return CleanSeries(out, transform, raw)


def sample_windows(series: CleanSeries, B: int, T: int, rng) -> WindowBatch:
    """Draw ``B`` contiguous length-``T`` slices at uniform offsets."""
    n = len(series)
    if T < 1 or B < 1:
        raise ValueError("B and T must be positive")
    if n < T:
        raise SeriesTooShort(f"series of length {n} is shorter than window {T}")
    offsets = rng.integers(0, n - T + 1, size=B)
    idx = offsets[:, None] + np.arange(T)[None, :]
    return WindowBatch(series.values[idx], offsets)


def pair_at(series: CleanSeries, offset: int, C: int, T: int) -> ContextTargetPair:
    v = series.values
    return ContextTargetPair(v[offset:offset + C], v[offset + C:offset + C + T], offset)


def context_target_pairs(series: CleanSeries, C: int, T: int, B: int, rng):
    """``B`` random (context, target) pairs where context ends where target starts."""
    n = len(series)
    if n < C + T:
        raise SeriesTooShort(f"series of length {n} cannot hold context {C} + target {T}")
    offsets = rng.integers(0, n - C - T + 1, size=B)
    return [pair_at(series, int(o), C, T) for o in offsets]
