"""Regular time series, search-intensity panels and the utilities around them.

Missing values are stored as NaN inside ``Series.values``; ``Series.missing``
exposes the mask.  All containers are immutable.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DomainError, GapError, ParseError

FREQUENCIES = ("monthly", "weekly", "annual")

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_WEEK_RE = re.compile(r"^(\d{4})-W(\d{2})$")
_YEAR_RE = re.compile(r"^(\d{4})$")
_DATE_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")

_PERIOD_HEADER = {"monthly": "Month", "weekly": "Week", "annual": "Year"}


def _to_ordinal(frequency: str, year: int, sub: int) -> int:
    if frequency == "monthly":
        return year * 12 + (sub - 1)
    if frequency == "annual":
        return year
    # ISO weeks, counted from the Monday of 0001-W01
    return (date.fromisocalendar(year, sub, 1).toordinal() - 1) // 7


def _from_ordinal(frequency: str, ordinal: int) -> tuple[int, int]:
    if frequency == "monthly":
        return divmod(ordinal, 12)[0], ordinal % 12 + 1
    if frequency == "annual":
        return ordinal, 1
    iso = date.fromordinal(ordinal * 7 + 1).isocalendar()
    return iso[0], iso[1]


def parse_period(text: str) -> tuple[str, tuple[int, int]]:
    """Parse ``YYYY-MM``, ``YYYY-Www`` or ``YYYY`` into (frequency, (year, sub))."""
    text = text.strip()
    if m := _MONTH_RE.match(text):
        year, month = int(m.group(1)), int(m.group(2))
        if not 1 <= month <= 12:
            raise ParseError(f"month out of range in period {text!r}")
        return "monthly", (year, month)
    if m := _WEEK_RE.match(text):
        year, week = int(m.group(1)), int(m.group(2))
        try:
            date.fromisocalendar(year, week, 1)
        except ValueError:
            raise ParseError(f"week out of range in period {text!r}") from None
        return "weekly", (year, week)
    if m := _YEAR_RE.match(text):
        return "annual", (int(m.group(1)), 1)
    raise ParseError(f"malformed period {text!r}")


@dataclass(frozen=True)
class TimeIndex:
    """Contiguous run of calendar periods.

    ``start`` is ``(year, sub_period)``: the month (1-12) for monthly data, the
    ISO week (1-53) for weekly data and always 1 for annual data.
    """

    frequency: str
    start: tuple[int, int]
    length: int

    def __post_init__(self):
        if self.frequency not in FREQUENCIES:
            raise ArgumentError(f"unknown frequency {self.frequency!r}")
        if self.length < 1:
            raise ArgumentError("a time index needs at least one period")
        year, sub = self.start
        object.__setattr__(self, "start", (int(year), int(sub)))
        if self.frequency == "monthly" and not 1 <= sub <= 12:
            raise ArgumentError(f"month {sub} outside 1..12")
        if self.frequency == "annual" and sub != 1:
            raise ArgumentError("annual periods carry sub-period 1")
        if self.frequency == "weekly":
            try:
                date.fromisocalendar(year, sub, 1)
            except ValueError:
                raise ArgumentError(f"week {sub} invalid for {year}") from None

    @classmethod
    def from_label(cls, label: str, length: int) -> "TimeIndex":
        frequency, start = parse_period(label)
        return cls(frequency, start, length)

    @property
    def first_ordinal(self) -> int:
        return _to_ordinal(self.frequency, *self.start)

    def __len__(self) -> int:
        return self.length

    def period(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.length:
            raise IndexError(i)
        return _from_ordinal(self.frequency, self.first_ordinal + i)

    def label(self, i: int) -> str:
        year, sub = self.period(i)
        if self.frequency == "monthly":
            return f"{year:04d}-{sub:02d}"
        if self.frequency == "weekly":
            return f"{year:04d}-W{sub:02d}"
        return f"{year:04d}"

    def labels(self) -> list[str]:
        return [self.label(i) for i in range(self.length)]

    def position(self, label: str) -> int:
        """Zero-based position of ``label``; raises ArgumentError when absent."""
        frequency, (year, sub) = parse_period(label)
        if frequency != self.frequency:
            raise ArgumentError(f"period {label!r} is not {self.frequency}")
        pos = _to_ordinal(frequency, year, sub) - self.first_ordinal
        if not 0 <= pos < self.length:
            raise ArgumentError(f"period {label!r} outside the index")
        return pos

    def shifted(self, offset: int, length: int) -> "TimeIndex":
        start = _from_ordinal(self.frequency, self.first_ordinal + offset)
        return TimeIndex(self.frequency, start, length)


@dataclass(frozen=True, eq=False)
class Series:
    index: TimeIndex
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.index.length:
            raise ArgumentError(
                f"{values.shape[0]} values for an index of length {self.index.length}"
            )
        if np.isinf(values).any():
            raise DomainError("non-missing values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values: Sequence[float], start: str = "2004-01", name: str = "") -> "Series":
        values = np.asarray(values, dtype=float)
        return cls(TimeIndex.from_label(start, len(values)), values, name)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def frequency(self) -> str:
        return self.index.frequency

    def __len__(self) -> int:
        return self.index.length

    def observed(self) -> np.ndarray:
        return self.values[~self.missing]

    def slice(self, start: int, stop: int) -> "Series":
        """Positions ``start`` (inclusive) to ``stop`` (exclusive)."""
        if not 0 <= start < stop <= len(self):
            raise ArgumentError(f"bad slice [{start}, {stop}) of length {len(self)}")
        return Series(self.index.shifted(start, stop - start), self.values[start:stop], self.name)

    def with_values(self, values: np.ndarray, name: str | None = None) -> "Series":
        return Series(self.index, values, self.name if name is None else name)

    def equals(self, other: "Series") -> bool:
        return self.index == other.index and np.array_equal(self.values, other.values, equal_nan=True)


@dataclass(frozen=True, eq=False)
class QueryPanel:
    """Several query series over one shared time index."""

    names: tuple[str, ...]
    series: tuple[Series, ...] = field(repr=False)

    def __post_init__(self):
        names = tuple(self.names)
        series = tuple(self.series)
        if len(names) != len(series):
            raise ArgumentError("one name per series is required")
        if len(set(names)) != len(names):
            raise ArgumentError("query names must be unique")
        if series and any(s.index != series[0].index for s in series[1:]):
            raise ArgumentError("panel members must share one time index")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "series", series)

    @classmethod
    def from_series(cls, members: Iterable[Series]) -> "QueryPanel":
        members = tuple(members)
        return cls(tuple(s.name for s in members), members)

    @property
    def index(self) -> TimeIndex:
        if not self.series:
            raise ArgumentError("empty panel has no index")
        return self.series[0].index

    def __len__(self) -> int:
        return len(self.series)

    def __getitem__(self, name: str) -> Series:
        try:
            return self.series[self.names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def matrix(self) -> np.ndarray:
        """Values as a (members, periods) array."""
        return np.vstack([s.values for s in self.series])


# ---------------------------------------------------------------- ingestion


def _parse_cell(cell: str, lineno: int, lt_value: float) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    if cell == "<1":
        return lt_value
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r}", lineno) from None
    if not 0.0 <= value <= 100.0:
        raise ParseError(f"search intensity {value} outside [0, 100]", lineno)
    return value


def ingest_trends_csv(text: str, lt_value: float = 0.5) -> QueryPanel:
    """Parse a Google Trends "interest over time" CSV export.

    The export may start with a ``Category:`` line followed by a blank line;
    then comes a header row (period column plus one column per query) and the
    data rows.  Cells reading ``<1`` become ``lt_value``; empty cells are
    missing.  Monthly (``YYYY-MM``) and annual (``YYYY``) rows are kept as is,
    weekly rows (``YYYY-MM-DD`` week starts) are averaged into calendar months.
    """
    text = text.lstrip("﻿")
    lines = text.splitlines()
    pos = 0
    while pos < len(lines) and not lines[pos].strip():
        pos += 1
    if pos < len(lines) and lines[pos].startswith("Category:"):
        pos += 1
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
    if pos >= len(lines):
        raise ParseError("no header row found")

    header_lineno = pos + 1
    header = next(csv.reader([lines[pos]]))
    if len(header) < 2:
        raise ParseError("header must name a period column and at least one query", header_lineno)
    names = [h.strip() for h in header[1:]]

    periods: list[str] = []
    rows: list[list[float]] = []
    row_lines: list[int] = []
    for offset, line in enumerate(lines[pos + 1:], start=pos + 2):
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(cells)}", offset)
        periods.append(cells[0].strip())
        rows.append([_parse_cell(c, offset, lt_value) for c in cells[1:]])
        row_lines.append(offset)
    if not rows:
        raise ParseError("export contains no data rows")

    data = np.array(rows, dtype=float)
    if _DATE_RE.match(periods[0]):
        index, data = _weekly_to_monthly(periods, row_lines, data)
    else:
        index = _index_from_labels(periods, row_lines)
    members = tuple(Series(index, data[:, j], names[j]) for j in range(len(names)))
    return QueryPanel(tuple(names), members)


def _index_from_labels(labels: list[str], linenos: list[int]) -> TimeIndex:
    parsed = []
    for label, lineno in zip(labels, linenos):
        try:
            parsed.append(parse_period(label))
        except ParseError as exc:
            raise ParseError(str(exc), lineno) from None
    frequency = parsed[0][0]
    prev = None
    for (freq, period), lineno in zip(parsed, linenos):
        if freq != frequency:
            raise ParseError(f"mixed period formats ({frequency} then {freq})", lineno)
        ordinal = _to_ordinal(freq, *period)
        if prev is not None and ordinal != prev + 1:
            raise GapError("periods are not contiguous", lineno)
        prev = ordinal
    return TimeIndex(frequency, parsed[0][1], len(parsed))


def _weekly_to_monthly(labels, linenos, data):
    dates = []
    for label, lineno in zip(labels, linenos):
        m = _DATE_RE.match(label)
        if not m:
            raise ParseError(f"malformed week start {label!r}", lineno)
        try:
            d = date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
        except ValueError:
            raise ParseError(f"invalid date {label!r}", lineno) from None
        if dates and d - dates[-1] != timedelta(days=7):
            raise GapError("weekly rows are not 7 days apart", lineno)
        dates.append(d)
    months = np.array([d.year * 12 + d.month - 1 for d in dates])
    first = months[0]
    n_months = months[-1] - first + 1
    out = np.full((n_months, data.shape[1]), np.nan)
    for k in range(n_months):
        block = data[months == first + k]
        with np.errstate(invalid="ignore"):
            counts = (~np.isnan(block)).sum(axis=0)
            sums = np.nansum(block, axis=0)
        out[k] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    year, month0 = divmod(int(first), 12)
    return TimeIndex("monthly", (year, month0 + 1), int(n_months)), out


def emit_trends_csv(panel: QueryPanel, category: str = "All categories") -> str:
    """Render a panel in the export layout, intensities to one decimal place."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(f"Category: {category}\n\n")
    writer.writerow([_PERIOD_HEADER[panel.index.frequency], *panel.names])
    matrix = panel.matrix()
    for i, label in enumerate(panel.index.labels()):
        cells = ["" if np.isnan(v) else f"{v:.1f}" for v in matrix[:, i]]
        writer.writerow([label, *cells])
    return buf.getvalue()


def read_series_csv(text: str) -> Series:
    """Parse a two-column ``period,value`` CSV; a header row is optional."""
    text = text.lstrip("﻿")
    records = []
    name = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        if len(cells) != 2:
            raise ParseError(f"expected 2 cells, found {len(cells)}", lineno)
        if not records and not name:
            try:
                parse_period(cells[0])
            except ParseError:
                name = cells[1].strip()
                continue
        cell = cells[1].strip()
        if cell in ("", "NA", "NaN", "nan"):
            value = math.nan
        else:
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", lineno) from None
        records.append((cells[0].strip(), value, lineno))
    if not records:
        raise ParseError("series file contains no data rows")
    index = _index_from_labels([r[0] for r in records], [r[2] for r in records])
    return Series(index, np.array([r[1] for r in records]), "" if name == "value" else name)


def emit_series_csv(s: Series) -> str:
    """Full-precision ``period,value`` CSV (``repr`` round-trips floats)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["period", s.name or "value"])
    for label, v in zip(s.index.labels(), s.values):
        writer.writerow([label, "" if np.isnan(v) else repr(float(v))])
    return buf.getvalue()


# --------------------------------------------------------------- transforms


def simple_average(panel: QueryPanel) -> Series:
    """Pointwise mean over the non-missing members of ``panel``."""
    if len(panel) == 0:
        raise ArgumentError("cannot average an empty panel")
    matrix = panel.matrix()
    observed = ~np.isnan(matrix)
    counts = observed.sum(axis=0)
    sums = np.where(observed, matrix, 0.0).sum(axis=0)
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return Series(panel.index, mean, "average")


def rescale_0_100(s: Series) -> Series:
    obs = s.observed()
    if obs.size == 0 or obs.max() <= 0:
        raise DomainError("rescaling needs at least one positive value")
    peak = obs.max()
    scaled = s.values * (100.0 / peak)
    # pin the peak itself, 100/peak*peak can miss by an ulp
    scaled[s.values == peak] = 100.0
    return s.with_values(scaled)


def to_annual(s: Series, how: str = "mean") -> Series:
    """Collapse a monthly series covering whole calendar years to one value per year.

    ``how="sum"`` propagates missing months; ``how="mean"`` skips them.
    """
    if how not in ("mean", "sum"):
        raise ArgumentError(f"unknown aggregation {how!r}")
    if s.frequency != "monthly":
        raise ArgumentError("to_annual expects a monthly series")
    if s.index.start[1] != 1 or len(s) % 12:
        raise ArgumentError("monthly series must cover whole calendar years")
    blocks = s.values.reshape(-1, 12)
    if how == "sum":
        out = blocks.sum(axis=1)
    else:
        observed = ~np.isnan(blocks)
        counts = observed.sum(axis=1)
        total = np.where(observed, blocks, 0.0).sum(axis=1)
        out = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return Series(TimeIndex("annual", (s.index.start[0], 1), len(out)), out, s.name)


def align(a: Series, b: Series) -> tuple[Series, Series]:
    """Restrict two same-frequency series to their common periods."""
    if a.frequency != b.frequency:
        raise ArgumentError(f"frequency mismatch: {a.frequency} vs {b.frequency}")
    lo = max(a.index.first_ordinal, b.index.first_ordinal)
    hi = min(a.index.first_ordinal + len(a), b.index.first_ordinal + len(b))
    if hi <= lo:
        raise ArgumentError("series do not overlap")
    sa = a.slice(lo - a.index.first_ordinal, hi - a.index.first_ordinal)
    sb = b.slice(lo - b.index.first_ordinal, hi - b.index.first_ordinal)
    return sa, sb


def pearson_correlation(a: Series, b: Series) -> float:
    """Sample Pearson correlation with pairwise deletion of missing positions."""
    if len(a) != len(b) or a.frequency != b.frequency:
        raise ArgumentError("series must share length and frequency")
    keep = ~(a.missing | b.missing)
    if keep.sum() < 3:
        raise ArgumentError("at least three paired observations are required")
    x = a.values[keep]
    y = b.values[keep]
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DomainError("correlation undefined for a constant series")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def rank_queries(candidates: QueryPanel, target: Series) -> list[tuple[str, float | None]]:
    """Order candidate queries by correlation with ``target``.

    Monthly candidates are annualised (mean) when the target is annual.
    Candidates whose correlation cannot be computed are listed last with a
    ``None`` score.
    """
    members = list(candidates.series)
    if target.frequency == "annual" and candidates.index.frequency == "monthly":
        members = [to_annual(s, "mean") for s in members]
    scored, failed = [], []
    for name, s in zip(candidates.names, members):
        try:
            sa, sb = align(s, target)
            scored.append((name, pearson_correlation(sa, sb)))
        except (ArgumentError, DomainError):
            failed.append((name, None))
    scored.sort(key=lambda item: (-item[1], item[0]))
    failed.sort(key=lambda item: item[0])
    return scored + failed
