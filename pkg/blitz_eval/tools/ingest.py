"""
Ingest Tools: crime and blitz records to cell-period aggregates

Parses the crimes/blitzes CSV inputs, bins timestamps into day x period of
day, apportions blitz hours on the 30-minute grid and sums everything per
(cell, day, period). Records that cannot be placed are kept in a drop ledger.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from blitz_eval.exceptions import (
    ColumnNotFoundError,
    InputFileError,
    InvalidRecordError,
    OutOfWindowError,
)
from blitz_eval.tools.fixed_effects import EstimationData
from blitz_eval.tools.spatial import GeoPoint, HexGrid, locate_many
from blitz_eval.utils.logger import get_logger

logger = get_logger()

N_PERIODS = 4
PERIOD_HOURS = 6
SLOT = timedelta(minutes=30)
MAX_CELL_PERIOD_HOURS = 6.0
MAX_BLITZ_DURATION = timedelta(hours=24)

CRIME_COLUMNS = ["kind", "lat", "lon", "timestamp"]
BLITZ_COLUMNS = [
    "lat",
    "lon",
    "start",
    "end",
    "officers",
    "vehicles",
    "type",
    "stopped",
    "tickets",
    "seizures",
    "weapons",
    "drugs",
]

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"


class Period(IntEnum):
    DAWN = 0
    MORNING = 1
    AFTERNOON = 2
    NIGHT = 3


class CrimeKind(str, Enum):
    MURDER = "murder"
    ROBBERY = "robbery"


class BlitzType(str, Enum):
    FIXED = "fixed"
    MOBILE = "mobile"


class DropReason(str, Enum):
    OUTSIDE_GRID = "outside_grid"
    OUTSIDE_WINDOW = "outside_window"
    MALFORMED = "malformed"


class PeriodIndex(NamedTuple):
    day_ordinal: int
    period: Period

    @property
    def flat(self) -> int:
        """Flattened day-period index dt = day * 4 + period"""
        return self.day_ordinal * N_PERIODS + int(self.period)


class CrimeEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: CrimeKind
    location: GeoPoint
    timestamp: datetime


class BlitzRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    location: GeoPoint
    start: datetime
    end: datetime
    officers: int = Field(0, ge=0)
    police_vehicles: int = Field(0, ge=0)
    blitz_type: BlitzType = BlitzType.FIXED
    vehicles_stopped: int = Field(0, ge=0)
    tickets: int = Field(0, ge=0)
    seizures: int = Field(0, ge=0)
    weapons_found: bool = False
    drugs_found: bool = False

    @property
    def duration_hours(self) -> float:
        return (self.end - self.start).total_seconds() / 3600.0

    @property
    def is_mobile(self) -> bool:
        return self.blitz_type == BlitzType.MOBILE


@dataclass(frozen=True)
class StudyWindow:
    """Consecutive calendar days starting at ``start`` (local civil time)"""

    start: date
    n_days: int

    @property
    def begin(self) -> datetime:
        return datetime.combine(self.start, time.min)

    @property
    def end(self) -> datetime:
        return self.begin + timedelta(days=self.n_days)

    @property
    def n_slices(self) -> int:
        return self.n_days * N_PERIODS

    def contains(self, t: datetime) -> bool:
        return self.begin <= t < self.end

    def day_of_week(self, day_ordinal) -> np.ndarray:
        """Monday=0 .. Sunday=6 for day ordinals"""
        return (np.asarray(day_ordinal) + self.start.weekday()) % 7


@dataclass(frozen=True)
class DropRecord:
    source: str
    row: int
    reason: DropReason
    detail: str = ""


def period_index_unchecked(t: datetime, study_start: date) -> PeriodIndex:
    return PeriodIndex((t.date() - study_start).days, Period(t.hour // PERIOD_HOURS))


def period_of(t: datetime, window: StudyWindow) -> PeriodIndex:
    """
    Day ordinal and period of day for a timestamp.

    Periods are half-open: Dawn [00:00, 06:00), Morning [06:00, 12:00),
    Afternoon [12:00, 18:00), Night [18:00, 24:00).

    Raises:
        OutOfWindowError: timestamp before the window start or after its end
    """
    if not window.contains(t):
        raise OutOfWindowError(
            f"Timestamp {t.isoformat()} outside study window "
            f"{window.begin.isoformat()} .. {window.end.isoformat()}",
            details={"timestamp": t.isoformat()},
        )
    return period_index_unchecked(t, window.start)


def _floor_slot(t: datetime) -> datetime:
    return t.replace(minute=(t.minute // 30) * 30, second=0, microsecond=0)


def apportion_blitz_hours(
    b: BlitzRecord, study_start: Optional[date] = None
) -> List[Tuple[PeriodIndex, float]]:
    """
    Spread a blitz over periods on the 30-minute wall-clock grid.

    Every half-open 30-minute interval the blitz overlaps counts in full and
    adds 0.5 h to the period holding the interval's start.

    Args:
        b: Blitz record
        study_start: Day 0 for the day ordinals (default: the blitz's start date)

    Returns:
        (PeriodIndex, hours) pairs in chronological order

    Raises:
        InvalidRecordError: end not after start, or longer than 24 h
    """
    if b.end <= b.start:
        raise InvalidRecordError(
            f"Blitz end {b.end.isoformat()} is not after start {b.start.isoformat()}"
        )
    if b.end - b.start > MAX_BLITZ_DURATION:
        raise InvalidRecordError(f"Blitz lasts {b.duration_hours:.2f} h, more than 24 h")
    origin = study_start if study_start is not None else b.start.date()

    slot = _floor_slot(b.start)
    hours: Dict[PeriodIndex, float] = {}
    for k in range(touched_slots(b)):
        key = period_index_unchecked(slot + k * SLOT, origin)
        hours[key] = hours.get(key, 0.0) + 0.5
    return list(hours.items())


def touched_slots(b: BlitzRecord) -> int:
    """Number of 30-minute intervals a blitz overlaps"""
    start = _floor_slot(b.start)
    end = _floor_slot(b.end)
    if end < b.end:
        end += SLOT
    return int((end - start) / SLOT)


AGGREGATE_COLUMNS = (
    "crime",
    "murders",
    "robberies",
    "blitz",
    "blitz_uncapped",
    "officers",
    "vehicles",
    "seizures",
    "mobile",
    "n_blitzes",
)


@dataclass(frozen=True, eq=False)
class CellPeriodAggregates:
    """
    Sparse per-(cell, day, period) sums.

    ``keys`` are panel row indices (dt * n_cells + cell), sorted and unique;
    each column array is aligned with them.
    """

    n_cells: int
    window: StudyWindow
    keys: np.ndarray
    columns: Dict[str, np.ndarray]
    drops: List[DropRecord] = field(default_factory=list)
    n_crimes_in: int = 0
    n_blitzes_in: int = 0

    def total(self, column: str) -> float:
        return float(self.columns[column].sum())

    def drop_counts(self) -> Dict[str, Dict[str, int]]:
        counts: Dict[str, Dict[str, int]] = {}
        for d in self.drops:
            per_source = counts.setdefault(d.source, {})
            per_source[d.reason.value] = per_source.get(d.reason.value, 0) + 1
        return counts

    def summary(self) -> Dict[str, object]:
        return {
            "n_crimes_in": self.n_crimes_in,
            "n_blitzes_in": self.n_blitzes_in,
            "cell_periods_with_data": int(len(self.keys)),
            "violent_total": int(self.total("crime")),
            "murders_total": int(self.total("murders")),
            "robberies_total": int(self.total("robberies")),
            "blitz_hours_total": self.total("blitz"),
            "treated_cell_periods": int(np.count_nonzero(self.columns["blitz"])),
            "drops": self.drop_counts(),
        }


def _sum_by_key(keys: np.ndarray, values: np.ndarray, uniq: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(uniq, keys)
    return np.bincount(pos, weights=values, minlength=len(uniq))


def aggregate(
    grid: HexGrid,
    crimes: Sequence[CrimeEvent],
    blitzes: Sequence[BlitzRecord],
    window: StudyWindow,
    drops: Optional[List[DropRecord]] = None,
    crime_rows: Optional[Sequence[int]] = None,
    blitz_rows: Optional[Sequence[int]] = None,
) -> CellPeriodAggregates:
    """
    Sum crimes and blitz hours per cell-period.

    violent = murders + robberies; blitz hours are capped at 6 per
    cell-period after summing overlapping blitzes. Officers, police vehicles
    and seizures are summed over the blitzes touching the cell-period; mobile
    is 1 if any of them was mobile.

    Args:
        grid: HexGrid the records are located on
        crimes: Crime events
        blitzes: Blitz records
        window: Study window
        drops: Ledger entries from parsing, carried into the result
        crime_rows, blitz_rows: Input row numbers for ledger entries (default: list position)

    Returns:
        CellPeriodAggregates
    """
    ledger: List[DropRecord] = list(drops or [])
    parsed_drops = {src: sum(1 for d in ledger if d.source == src) for src in ("crimes", "blitzes")}
    n = grid.n_cells

    crime_keys: List[int] = []
    crime_murder: List[float] = []
    if crimes:
        cells = locate_many(
            grid, [c.location.lat for c in crimes], [c.location.lon for c in crimes]
        )
        row_ids = list(crime_rows) if crime_rows is not None else range(len(crimes))
        for row, event, cell in zip(row_ids, crimes, cells):
            if cell < 0:
                ledger.append(DropRecord("crimes", row, DropReason.OUTSIDE_GRID))
                continue
            if not window.contains(event.timestamp):
                ledger.append(
                    DropRecord("crimes", row, DropReason.OUTSIDE_WINDOW, event.timestamp.isoformat())
                )
                continue
            idx = period_index_unchecked(event.timestamp, window.start)
            crime_keys.append(idx.flat * n + int(cell))
            crime_murder.append(1.0 if event.kind == CrimeKind.MURDER else 0.0)

    blitz_keys: List[int] = []
    blitz_hours: List[float] = []
    blitz_attrs: List[Tuple[float, float, float, float]] = []
    if blitzes:
        cells = locate_many(
            grid, [b.location.lat for b in blitzes], [b.location.lon for b in blitzes]
        )
        row_ids = list(blitz_rows) if blitz_rows is not None else range(len(blitzes))
        for row, record, cell in zip(row_ids, blitzes, cells):
            if cell < 0:
                ledger.append(DropRecord("blitzes", row, DropReason.OUTSIDE_GRID))
                continue
            try:
                parts = apportion_blitz_hours(record, window.start)
            except InvalidRecordError as e:
                ledger.append(DropRecord("blitzes", row, DropReason.MALFORMED, e.message))
                continue
            parts = [(idx, h) for idx, h in parts if 0 <= idx.day_ordinal < window.n_days]
            if not parts:
                ledger.append(
                    DropRecord("blitzes", row, DropReason.OUTSIDE_WINDOW, record.start.isoformat())
                )
                continue
            attrs = (
                float(record.officers),
                float(record.police_vehicles),
                float(record.seizures),
                1.0 if record.is_mobile else 0.0,
            )
            for idx, hours in parts:
                blitz_keys.append(idx.flat * n + int(cell))
                blitz_hours.append(hours)
                blitz_attrs.append(attrs)

    ck = np.asarray(crime_keys, dtype=np.int64)
    bk = np.asarray(blitz_keys, dtype=np.int64)
    keys = np.unique(np.concatenate([ck, bk]))

    murders_flag = np.asarray(crime_murder, dtype=float)
    murders = _sum_by_key(ck, murders_flag, keys)
    robberies = _sum_by_key(ck, 1.0 - murders_flag, keys)
    hours_raw = _sum_by_key(bk, np.asarray(blitz_hours, dtype=float), keys)
    attrs = np.asarray(blitz_attrs, dtype=float).reshape(-1, 4)

    mobile = np.zeros(len(keys))
    if len(bk):
        pos = np.searchsorted(keys, bk)
        np.maximum.at(mobile, pos, attrs[:, 3])

    columns = {
        "crime": murders + robberies,
        "murders": murders,
        "robberies": robberies,
        "blitz": np.minimum(hours_raw, MAX_CELL_PERIOD_HOURS),
        "blitz_uncapped": hours_raw,
        "officers": _sum_by_key(bk, attrs[:, 0], keys),
        "vehicles": _sum_by_key(bk, attrs[:, 1], keys),
        "seizures": _sum_by_key(bk, attrs[:, 2], keys),
        "mobile": mobile,
        "n_blitzes": _sum_by_key(bk, np.ones(len(bk)), keys),
    }
    for values in columns.values():
        values.setflags(write=False)

    result = CellPeriodAggregates(
        n_cells=n,
        window=window,
        keys=keys,
        columns=columns,
        drops=sorted(ledger, key=lambda d: (d.source, d.row)),
        n_crimes_in=len(crimes) + parsed_drops["crimes"],
        n_blitzes_in=len(blitzes) + parsed_drops["blitzes"],
    )
    logger.info(
        f"Aggregated {len(crimes)} crimes and {len(blitzes)} blitzes into "
        f"{len(keys)} cell-periods; dropped {len(ledger)} record(s)"
    )
    return result


class ParsedRecords(NamedTuple):
    """Parsed CSV rows; ``rows`` are the 0-based data-row numbers of ``records``"""

    records: list
    rows: List[int]
    drops: List[DropRecord]


def _parse_timestamp(value: str) -> datetime:
    return datetime.strptime(value.strip(), TIMESTAMP_FORMAT)


def _parse_flag(value: str) -> bool:
    value = value.strip()
    if value not in ("0", "1"):
        raise ValueError(f"boolean must be 0 or 1, got {value!r}")
    return value == "1"


def _open_csv(path: Path, expected: List[str]):
    if not path.exists():
        raise InputFileError(f"Input file not found: {path}", path=str(path))
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputFileError(f"Cannot read {path}: {e}", path=str(path))
    reader = csv.DictReader(f)
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in expected if c not in header]
    if missing:
        f.close()
        raise InputFileError(
            f"{path.name} is missing column(s): {', '.join(missing)}",
            path=str(path),
            details={"expected": expected, "found": header},
        )
    return f, reader


def read_crimes_csv(path: Union[str, Path]) -> "ParsedRecords":
    """
    Parse a crimes CSV (kind,lat,lon,timestamp).

    Rows that fail to parse are returned as ``malformed`` drops; the row
    number is the 0-based data row.
    """
    path = Path(path)
    f, reader = _open_csv(path, CRIME_COLUMNS)
    events: List[CrimeEvent] = []
    rows: List[int] = []
    drops: List[DropRecord] = []
    with f:
        for row, rec in enumerate(reader):
            try:
                events.append(
                    CrimeEvent(
                        kind=CrimeKind(rec["kind"].strip().lower()),
                        location=GeoPoint(lat=float(rec["lat"]), lon=float(rec["lon"])),
                        timestamp=_parse_timestamp(rec["timestamp"]),
                    )
                )
                rows.append(row)
            except (ValueError, TypeError, AttributeError, ValidationError) as e:
                drops.append(DropRecord("crimes", row, DropReason.MALFORMED, str(e).splitlines()[0]))
    logger.info(f"Read {len(events)} crime(s) from {path.name}, {len(drops)} malformed")
    return ParsedRecords(events, rows, drops)


def read_blitzes_csv(path: Union[str, Path]) -> "ParsedRecords":
    """Parse a blitzes CSV; unparseable rows and end <= start become ``malformed`` drops"""
    path = Path(path)
    f, reader = _open_csv(path, BLITZ_COLUMNS)
    records: List[BlitzRecord] = []
    rows: List[int] = []
    drops: List[DropRecord] = []
    with f:
        for row, rec in enumerate(reader):
            try:
                record = BlitzRecord(
                    location=GeoPoint(lat=float(rec["lat"]), lon=float(rec["lon"])),
                    start=_parse_timestamp(rec["start"]),
                    end=_parse_timestamp(rec["end"]),
                    officers=int(rec["officers"]),
                    police_vehicles=int(rec["vehicles"]),
                    blitz_type=BlitzType(rec["type"].strip().lower()),
                    vehicles_stopped=int(rec["stopped"]),
                    tickets=int(rec["tickets"]),
                    seizures=int(rec["seizures"]),
                    weapons_found=_parse_flag(rec["weapons"]),
                    drugs_found=_parse_flag(rec["drugs"]),
                )
            except (ValueError, TypeError, AttributeError, ValidationError) as e:
                drops.append(DropRecord("blitzes", row, DropReason.MALFORMED, str(e).splitlines()[0]))
                continue
            if record.end <= record.start:
                drops.append(DropRecord("blitzes", row, DropReason.MALFORMED, "end <= start"))
                continue
            records.append(record)
            rows.append(row)
    logger.info(f"Read {len(records)} blitz record(s) from {path.name}, {len(drops)} malformed")
    return ParsedRecords(records, rows, drops)


def write_crimes_csv(events: Iterable[CrimeEvent], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CRIME_COLUMNS)
        for e in events:
            writer.writerow(
                [
                    e.kind.value,
                    f"{e.location.lat:.7f}",
                    f"{e.location.lon:.7f}",
                    e.timestamp.strftime(TIMESTAMP_FORMAT),
                ]
            )
    return path


def write_blitzes_csv(records: Iterable[BlitzRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(BLITZ_COLUMNS)
        for b in records:
            writer.writerow(
                [
                    f"{b.location.lat:.7f}",
                    f"{b.location.lon:.7f}",
                    b.start.strftime(TIMESTAMP_FORMAT),
                    b.end.strftime(TIMESTAMP_FORMAT),
                    b.officers,
                    b.police_vehicles,
                    b.blitz_type.value,
                    b.vehicles_stopped,
                    b.tickets,
                    b.seizures,
                    int(b.weapons_found),
                    int(b.drugs_found),
                ]
            )
    return path


def write_drop_ledger(drops: Iterable[DropRecord], path: Union[str, Path]) -> Path:
    """Drop ledger CSV: source,row,reason,detail"""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["source", "row", "reason", "detail"])
        for d in drops:
            writer.writerow([d.source, d.row, d.reason.value, d.detail])
    return path


# Blitz outcome regressions: one row per located, in-window blitz
OUTCOME_TABLE_COLUMNS = (
    "duration",
    "duration_sq",
    "officers",
    "mobile",
    "vehicles",
    "stopped",
    "stopped_sq",
    "tickets",
    "seizures",
    "weapons",
    "drugs",
)
OUTCOME_TABLE_FE = ("cell", "day", "period", "dow")


@dataclass(frozen=True, eq=False)
class BlitzOutcomeTable:
    """Per-blitz outputs with cell / day / period / day-of-week codes"""

    columns: Dict[str, np.ndarray]
    fe: Dict[str, np.ndarray]
    cell_lat: np.ndarray
    cell_lon: np.ndarray

    @property
    def n_rows(self) -> int:
        return int(len(self.fe["cell"]))

    def design(self, outcome: str, regressors: Sequence[str], fe_dims: Sequence[str]) -> EstimationData:
        for name in [outcome, *regressors]:
            if name not in self.columns:
                raise ColumnNotFoundError(name, available=list(self.columns))
        for dim in fe_dims:
            if dim not in self.fe:
                raise ColumnNotFoundError(dim, available=list(self.fe))
        X = np.column_stack([self.columns[r] for r in regressors]) if regressors else np.zeros(
            (self.n_rows, 0)
        )
        return EstimationData(
            y=np.asarray(self.columns[outcome], dtype=float),
            X=X.astype(float),
            names=list(regressors),
            fe={dim: self.fe[dim] for dim in fe_dims},
            cell=self.fe["cell"],
            time=self.fe["day"] * N_PERIODS + self.fe["period"],
            cell_lat=self.cell_lat,
            cell_lon=self.cell_lon,
            rows=np.arange(self.n_rows),
        )


def build_blitz_outcome_table(
    grid: HexGrid, blitzes: Sequence[BlitzRecord], window: StudyWindow
) -> BlitzOutcomeTable:
    """
    Table of blitz outputs for the fixed-effects linear regressions.

    Duration is end - start in hours; day and period come from the start
    time. Blitzes outside the grid or starting outside the window are left
    out (they are already in the aggregate drop ledger).
    """
    rows = []
    if blitzes:
        cells = locate_many(
            grid, [b.location.lat for b in blitzes], [b.location.lon for b in blitzes]
        )
        for record, cell in zip(blitzes, cells):
            if cell < 0 or not window.contains(record.start) or record.end <= record.start:
                continue
            idx = period_index_unchecked(record.start, window.start)
            rows.append((record, int(cell), idx))

    def col(values) -> np.ndarray:
        return np.asarray(values, dtype=float)

    duration = col([r.duration_hours for r, _, _ in rows])
    stopped = col([r.vehicles_stopped for r, _, _ in rows])
    columns = {
        "duration": duration,
        "duration_sq": duration**2,
        "officers": col([r.officers for r, _, _ in rows]),
        "mobile": col([1.0 if r.is_mobile else 0.0 for r, _, _ in rows]),
        "vehicles": col([r.police_vehicles for r, _, _ in rows]),
        "stopped": stopped,
        "stopped_sq": stopped**2,
        "tickets": col([r.tickets for r, _, _ in rows]),
        "seizures": col([r.seizures for r, _, _ in rows]),
        "weapons": col([1.0 if r.weapons_found else 0.0 for r, _, _ in rows]),
        "drugs": col([1.0 if r.drugs_found else 0.0 for r, _, _ in rows]),
    }
    day = np.asarray([idx.day_ordinal for _, _, idx in rows], dtype=np.int64)
    fe = {
        "cell": np.asarray([c for _, c, _ in rows], dtype=np.int64),
        "day": day,
        "period": np.asarray([int(idx.period) for _, _, idx in rows], dtype=np.int64),
        "dow": window.day_of_week(day).astype(np.int64),
    }
    logger.info(f"Blitz outcome table: {len(rows)} row(s)")
    return BlitzOutcomeTable(columns=columns, fe=fe, cell_lat=grid.lat, cell_lon=grid.lon)
