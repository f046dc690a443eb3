"""
Panel Tools: balanced cell x day x period panel and its column constructors

Row layout is fixed: row = (day * 4 + period) * n_cells + cell, so a time
slice is a contiguous block of n_cells rows and a temporal lag of j periods
is a shift by j * n_cells rows.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import csv
import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from blitz_eval.exceptions import (
    ColumnNotFoundError,
    ConsistencyError,
    DimensionError,
    InputFileError,
    InvalidParameterError,
)
from blitz_eval.tools.fixed_effects import EstimationData
from blitz_eval.tools.ingest import MAX_CELL_PERIOD_HOURS, N_PERIODS, CellPeriodAggregates
from blitz_eval.tools.spatial import HexGrid, WeightMatrix
from blitz_eval.utils.logger import get_logger

logger = get_logger()

DAYS_PER_WEEK = 7
INTEGER_COLUMNS = ("crime", "murders", "robberies")
AGGREGATED_COLUMNS = ("crime", "murders", "robberies", "blitz", "officers", "vehicles", "seizures", "mobile")
FE_DIMS = ("group_a", "group_b", "cell", "day", "period", "dow")

PANEL_MANIFEST = "manifest.json"
PANEL_FORMAT_VERSION = 1
CSV_EXPORT_MAX_ROWS = 1_000_000


def panel_rows(n_cells: int, n_days: int) -> int:
    """Row count of a balanced panel"""
    return n_cells * n_days * N_PERIODS


def lag_name(column: str, j: int) -> str:
    return f"lag_{column}_{j}"


def interaction_name(column_a: str, column_b: str) -> str:
    return f"{column_a}:{column_b}"


@dataclass(frozen=True, eq=False)
class Panel:
    """
    Balanced cell x day x period panel with named columns.

    Columns are read-only; constructors return new arrays and ``with_column``
    returns a new Panel sharing the existing ones.
    """

    n_cells: int
    n_days: int
    start_date: date
    columns: Dict[str, np.ndarray]
    cell_lat: np.ndarray
    cell_lon: np.ndarray

    n_periods = N_PERIODS

    @property
    def n_rows(self) -> int:
        return panel_rows(self.n_cells, self.n_days)

    @property
    def n_slices(self) -> int:
        return self.n_days * N_PERIODS

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise ColumnNotFoundError(name, available=list(self.columns))

    def has_column(self, name: str) -> bool:
        return name in self.columns

    def with_column(self, name: str, values: np.ndarray) -> "Panel":
        values = np.asarray(values)
        if values.shape != (self.n_rows,):
            raise DimensionError(
                f"Column {name!r} has {values.shape[0]} rows, panel has {self.n_rows}",
                expected=self.n_rows,
                got=int(values.shape[0]),
            )
        values = values.copy() if values.flags.writeable else values
        values.setflags(write=False)
        columns = dict(self.columns)
        columns[name] = values
        return Panel(self.n_cells, self.n_days, self.start_date, columns, self.cell_lat, self.cell_lon)

    # Row layout

    def slice_index(self) -> np.ndarray:
        """Flattened day-period index dt of each row"""
        return np.repeat(np.arange(self.n_slices, dtype=np.int64), self.n_cells)

    def cell_index(self) -> np.ndarray:
        return np.tile(np.arange(self.n_cells, dtype=np.int64), self.n_slices)

    def day_index(self) -> np.ndarray:
        return self.slice_index() // N_PERIODS

    def period_index(self) -> np.ndarray:
        return self.slice_index() % N_PERIODS

    def dow_index(self) -> np.ndarray:
        return (self.day_index() + self.start_date.weekday()) % DAYS_PER_WEEK

    def fe_codes(self, dim: str) -> np.ndarray:
        """
        Fixed-effect codes per row.

        group_a is cell x period x day-of-week, (cell * 4 + period) * 7 + dow;
        group_b is the day ordinal.
        """
        if dim == "group_a":
            return (self.cell_index() * N_PERIODS + self.period_index()) * DAYS_PER_WEEK + self.dow_index()
        if dim in ("group_b", "day"):
            return self.day_index()
        if dim == "cell":
            return self.cell_index()
        if dim == "period":
            return self.period_index()
        if dim == "dow":
            return self.dow_index()
        raise ColumnNotFoundError(dim, available=list(FE_DIMS))

    def estimation_mask(self, names: Sequence[str]) -> np.ndarray:
        """Rows where every named column is defined (no missing lag)"""
        mask = np.ones(self.n_rows, dtype=bool)
        for name in names:
            col = self.column(name)
            if col.dtype.kind == "f":
                mask &= np.isfinite(col)
        return mask

    def design(
        self, outcome: str, regressors: Sequence[str], fe_dims: Sequence[str]
    ) -> EstimationData:
        """Estimation sample for a model: rows with all columns defined"""
        mask = self.estimation_mask([outcome, *regressors])
        rows = np.flatnonzero(mask)
        X = np.empty((len(rows), len(regressors)), dtype=float)
        for k, name in enumerate(regressors):
            X[:, k] = self.column(name)[rows]
        return EstimationData(
            y=self.column(outcome)[rows].astype(float),
            X=X,
            names=list(regressors),
            fe={dim: self.fe_codes(dim)[rows] for dim in fe_dims},
            cell=self.cell_index()[rows],
            time=self.slice_index()[rows],
            cell_lat=self.cell_lat,
            cell_lon=self.cell_lon,
            rows=rows,
            meta={"panel_rows": self.n_rows, "n_sample": int(len(rows))},
        )


def assemble(
    grid: HexGrid,
    aggregates: CellPeriodAggregates,
    study_start_date: date,
    n_days: int,
) -> Panel:
    """
    Zero-filled balanced panel from cell-period aggregates.

    Args:
        grid: Grid the aggregates were built on
        aggregates: Output of ingest.aggregate
        study_start_date: Day 0 (its weekday drives the day-of-week codes)
        n_days: Number of study days

    Returns:
        Panel with crime, murders, robberies, blitz, blitz_sq and the blitz
        attribute columns

    Raises:
        ConsistencyError: aggregates from another grid/window, or values
            outside their valid range
    """
    if aggregates.n_cells != grid.n_cells:
        raise ConsistencyError(
            f"Aggregates reference {aggregates.n_cells} cells, grid has {grid.n_cells}"
        )
    if aggregates.window.start != study_start_date:
        raise ConsistencyError(
            f"Aggregates start {aggregates.window.start}, panel starts {study_start_date}"
        )
    n_rows = panel_rows(grid.n_cells, n_days)
    keys = aggregates.keys
    if len(keys) and (keys.min() < 0 or keys.max() >= n_rows):
        raise ConsistencyError(
            f"Aggregate index {int(keys.max())} outside panel of {n_rows} rows",
            details={"n_rows": n_rows},
        )

    columns: Dict[str, np.ndarray] = {}
    for name in AGGREGATED_COLUMNS:
        dtype = np.int64 if name in INTEGER_COLUMNS else float
        values = np.zeros(n_rows, dtype=dtype)
        source = aggregates.columns[name]
        if name in INTEGER_COLUMNS:
            if np.any(source < 0) or np.any(source != np.round(source)):
                raise ConsistencyError(f"Column {name!r} holds non-count values")
            values[keys] = np.round(source).astype(np.int64)
        else:
            values[keys] = source
        columns[name] = values

    blitz = columns["blitz"]
    if np.any(blitz < 0) or np.any(blitz > MAX_CELL_PERIOD_HOURS):
        raise ConsistencyError("Blitz hours outside [0, 6]")
    columns["blitz_sq"] = blitz**2
    for values in columns.values():
        values.setflags(write=False)

    panel = Panel(
        n_cells=grid.n_cells,
        n_days=n_days,
        start_date=study_start_date,
        columns=columns,
        cell_lat=np.array(grid.lat),
        cell_lon=np.array(grid.lon),
    )
    logger.info(
        f"Assembled panel: {grid.n_cells} cells x {n_days} days x {N_PERIODS} periods = {n_rows} rows"
    )
    return panel


def temporal_lag(panel: Panel, column: str, j: int) -> np.ndarray:
    """
    Value of a column j periods earlier in the same cell.

    The first j * n_cells rows have no predecessor and are NaN; j beyond the
    panel length gives an all-NaN column.
    """
    if j < 1:
        raise InvalidParameterError(f"Lag must be >= 1, got {j}", parameter="j")
    source = panel.column(column).astype(float)
    out = np.full(panel.n_rows, np.nan)
    shift = j * panel.n_cells
    if shift < panel.n_rows:
        out[shift:] = source[: panel.n_rows - shift]
    return out


def spatial_lag(panel: Panel, w: WeightMatrix, column: str) -> np.ndarray:
    """
    Apply the weight matrix to a column slice by slice.

    For each (day, period), out = W @ column[slice]. Missing values in a
    neighbour propagate to the rows that weight it.
    """
    if w.n_cells != panel.n_cells:
        raise DimensionError(
            f"Weights built for {w.n_cells} cells, panel has {panel.n_cells}",
            expected=panel.n_cells,
            got=w.n_cells,
        )
    values = panel.column(column).astype(float).reshape(panel.n_slices, panel.n_cells)
    return np.asarray(w.matrix @ values.T).T.reshape(-1)


def interaction(panel: Panel, column_a: str, column_b: str) -> np.ndarray:
    """Elementwise product of two columns"""
    return panel.column(column_a).astype(float) * panel.column(column_b).astype(float)


def build_model_columns(
    panel: Panel,
    weights: Optional[WeightMatrix],
    lags: Sequence[int] = (),
    spatial_lag_lags: Sequence[int] = (),
    interactions: Sequence[str] = (),
    treatment: str = "blitz",
) -> Tuple[Panel, List[str]]:
    """
    Add the standard regressor columns and return them in model order.

    Order: blitz, blitz_sq, w_blitz, lag_blitz_j..., lag_w_blitz_j...,
    then for each interaction x: x and blitz:x.

    Args:
        panel: Assembled panel
        weights: Weight matrix for w_blitz (None leaves the spatial term out)
        lags: Temporal lags of the treatment
        spatial_lag_lags: Temporal lags of the spatially lagged treatment
        interactions: Columns interacted with the treatment

    Returns:
        (panel with the new columns, regressor names)
    """
    regressors = [treatment, f"{treatment}_sq"]
    if not panel.has_column(f"{treatment}_sq"):
        panel = panel.with_column(f"{treatment}_sq", panel.column(treatment).astype(float) ** 2)

    w_name = f"w_{treatment}"
    if weights is not None:
        panel = panel.with_column(w_name, spatial_lag(panel, weights, treatment))
        regressors.append(w_name)

    for j in lags:
        name = lag_name(treatment, j)
        panel = panel.with_column(name, temporal_lag(panel, treatment, j))
        regressors.append(name)

    if spatial_lag_lags and weights is None:
        raise InvalidParameterError(
            "Lags of the spatial lag need a weight matrix", parameter="spatial_lag_lags"
        )
    for j in spatial_lag_lags:
        name = lag_name(w_name, j)
        panel = panel.with_column(name, temporal_lag(panel, w_name, j))
        regressors.append(name)

    for other in interactions:
        name = interaction_name(treatment, other)
        panel = panel.with_column(name, interaction(panel, treatment, other))
        regressors.extend([other, name])

    return panel, regressors


def treatment_summary(panel: Panel, outcome: str = "crime", treatment: str = "blitz") -> Dict[str, float]:
    """
    Treated cell-periods and their average dose and outcome.

    Returns:
        treated_cell_periods, ever_treated_cells, avg_treated_hours,
        avg_treated_outcome, total_treatment_hours
    """
    dose = panel.column(treatment)
    treated = dose > 0
    n_treated = int(treated.sum())
    cells = panel.cell_index()[treated]
    y = panel.column(outcome)
    return {
        "treated_cell_periods": n_treated,
        "ever_treated_cells": int(len(np.unique(cells))),
        "avg_treated_hours": float(dose[treated].mean()) if n_treated else 0.0,
        "avg_treated_outcome": float(y[treated].mean()) if n_treated else 0.0,
        "total_treatment_hours": float(dose.sum()),
    }


def save_panel(panel: Panel, directory: Union[str, Path]) -> List[Path]:
    """
    Columnar export: one ``<column>.npy`` per column plus ``manifest.json``.

    Returns:
        Written file paths (manifest last)
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    files = {}
    for i, name in enumerate(sorted(panel.columns)):
        filename = f"col{i:03d}.npy"
        np.save(directory / filename, np.ascontiguousarray(panel.columns[name]), allow_pickle=False)
        files[name] = filename
        written.append(directory / filename)
    for name, values in (("cell_lat", panel.cell_lat), ("cell_lon", panel.cell_lon)):
        np.save(directory / f"{name}.npy", np.ascontiguousarray(values), allow_pickle=False)
        written.append(directory / f"{name}.npy")

    manifest = {
        "format_version": PANEL_FORMAT_VERSION,
        "n_cells": panel.n_cells,
        "n_days": panel.n_days,
        "n_periods": N_PERIODS,
        "n_rows": panel.n_rows,
        "start_date": panel.start_date.isoformat(),
        "columns": {
            name: {"file": files[name], "dtype": str(panel.columns[name].dtype)}
            for name in sorted(panel.columns)
        },
    }
    manifest_path = directory / PANEL_MANIFEST
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(manifest_path)
    return written


def load_panel(directory: Union[str, Path]) -> Panel:
    """Read a panel written by save_panel"""
    directory = Path(directory)
    manifest_path = directory / PANEL_MANIFEST
    if not manifest_path.exists():
        raise InputFileError(f"Panel manifest not found: {manifest_path}", path=str(manifest_path))
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    n_rows = int(manifest["n_rows"])
    columns = {}
    for name, info in manifest["columns"].items():
        values = np.load(directory / info["file"], allow_pickle=False)
        if values.shape != (n_rows,):
            raise ConsistencyError(f"Panel column {name!r} has shape {values.shape}, expected ({n_rows},)")
        values.setflags(write=False)
        columns[name] = values
    return Panel(
        n_cells=int(manifest["n_cells"]),
        n_days=int(manifest["n_days"]),
        start_date=date.fromisoformat(manifest["start_date"]),
        columns=columns,
        cell_lat=np.load(directory / "cell_lat.npy", allow_pickle=False),
        cell_lon=np.load(directory / "cell_lon.npy", allow_pickle=False),
    )


def _format_value(value) -> str:
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    if math.isnan(value):
        return ""
    return f"{value:.10g}"


def export_panel_csv(panel: Panel, path: Union[str, Path], max_rows: int = CSV_EXPORT_MAX_ROWS) -> Path:
    """Row-wise CSV for debugging small panels"""
    if panel.n_rows >= max_rows:
        raise InvalidParameterError(
            f"Panel has {panel.n_rows} rows; CSV export is limited to fewer than {max_rows}",
            parameter="max_rows",
        )
    path = Path(path)
    names = sorted(panel.columns, key=lambda c: (c != "crime", c))
    cell, day, period = panel.cell_index(), panel.day_index(), panel.period_index()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "cell", "day", "period", *names])
        for row in range(panel.n_rows):
            writer.writerow(
                [row, int(cell[row]), int(day[row]), int(period[row])]
                + [_format_value(panel.columns[n][row]) for n in names]
            )
    return path
