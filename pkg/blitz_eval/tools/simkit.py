"""
Simulation Kit: synthetic panels with known truth and recovery studies

Generates crime counts from the same log-linear intensity the estimator fits,
on an exact rectangular hex grid, and checks that the estimator recovers the
planted coefficients.

Random streams: ``SeedSequence(seed)`` spawns one Philox stream for the
global draws (day effects) followed by one stream per cell. Each cell's
stream is consumed only by that cell's tasks, in a fixed order, so results do
not depend on the thread count or schedule.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from blitz_eval.config import DGPConfig
from blitz_eval.exceptions import BlitzEvalError, InvalidParameterError
from blitz_eval.tools import estimator
from blitz_eval.tools.estimator import FitResult, ModelSpec, VcovKind, VcovSpec
from blitz_eval.tools.ingest import (
    N_PERIODS,
    PERIOD_HOURS,
    BlitzOutcomeTable,
    BlitzRecord,
    BlitzType,
    CrimeEvent,
    CrimeKind,
    write_blitzes_csv,
    write_crimes_csv,
)
from blitz_eval.tools.inference import wald_joint_test
from blitz_eval.tools.panel import DAYS_PER_WEEK, Panel, build_model_columns, lag_name
from blitz_eval.tools.spatial import (
    GeoPoint,
    HexGrid,
    WeightMatrix,
    WeightScheme,
    build_hex_grid,
    build_weights,
    lattice_rectangle,
    write_boundary_geojson,
)
from blitz_eval.utils.logger import get_logger

logger = get_logger()

HOURS_STEPS = 12
MIN_RECOVERY_SEEDS = 50
COVERAGE_BAND = (0.90, 0.98)

# Planted blitz-output regressions (vehicles stopped, tickets, seizures)
BLITZ_OUTCOME_TRUTH: Dict[str, Dict[str, float]] = {
    "stopped": {"duration": 31.84, "duration_sq": -2.636, "officers": 1.218, "mobile": 2.153},
    "tickets": {"officers": 0.3056, "mobile": 1.767, "stopped": 0.1553, "stopped_sq": -0.0003},
    "seizures": {"officers": 0.2457, "mobile": 0.7897, "stopped": 0.0447, "stopped_sq": -8.63e-5},
}
BLITZ_OUTCOME_NOISE_SD = {"stopped": 20.0, "tickets": 4.0, "seizures": 1.5}
BLITZ_OUTCOME_INTERCEPT = {"stopped": 10.0, "tickets": 2.0, "seizures": 0.5}


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    panel: Panel
    truth: Dict[str, float]
    realized_lambda: np.ndarray
    grid: HexGrid
    weights: WeightMatrix
    config: DGPConfig


def grid_shape(n_cells: int) -> Tuple[int, int]:
    """(cols, rows) with cols * rows = n_cells and cols the largest divisor <= sqrt(n)"""
    cols = int(math.isqrt(n_cells))
    while n_cells % cols:
        cols -= 1
    return cols, n_cells // cols


def synthetic_grid(config: DGPConfig) -> HexGrid:
    """Hex grid of exactly config.n_cells cells on a rectangular boundary"""
    cols, rows = grid_shape(config.n_cells)
    boundary = lattice_rectangle(config.origin_lat, config.origin_lon, cols, rows, config.cell_area_km2)
    grid = build_hex_grid(boundary, config.cell_area_km2)
    if grid.n_cells != config.n_cells:
        raise BlitzEvalError(f"Synthetic grid has {grid.n_cells} cells, expected {config.n_cells}")
    return grid


def synthetic_weights(grid: HexGrid, config: DGPConfig) -> WeightMatrix:
    if config.weight_scheme == "contiguity":
        return build_weights(grid, WeightScheme.BINARY_CONTIGUITY, row_standardize_rows=config.row_standardize)
    return build_weights(
        grid, WeightScheme.INVERSE_DISTANCE, config.cutoff_m, row_standardize_rows=config.row_standardize
    )


def truth_coefficients(config: DGPConfig) -> Dict[str, float]:
    truth = {"blitz": config.true_delta, "blitz_sq": config.true_theta, "w_blitz": config.true_rho}
    truth.update({lag_name("blitz", j): v for j, v in sorted(config.true_lags.items())})
    truth.update({lag_name("w_blitz", j): v for j, v in sorted(config.true_spatial_lags.items())})
    return truth


def _cell_streams(seed: int, n_cells: int) -> Tuple[np.random.Generator, List[np.random.Generator]]:
    children = np.random.SeedSequence(seed).spawn(n_cells + 1)
    generators = [np.random.Generator(np.random.Philox(c)) for c in children]
    return generators[0], generators[1:]


def _run_per_cell(fn: Callable[[int], Any], n_cells: int, threads: int) -> List[Any]:
    if threads <= 1:
        return [fn(c) for c in range(n_cells)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_cells)))


def _shifted(matrix: np.ndarray, j: int) -> np.ndarray:
    """Row t of the result is row t - j of matrix (zero before the start)"""
    out = np.zeros_like(matrix)
    if j < matrix.shape[0]:
        out[j:] = matrix[: matrix.shape[0] - j]
    return out


def simulate(config: DGPConfig, threads: int = 1) -> SyntheticDataset:
    """
    Draw a synthetic panel.

    ln lambda = base + a[cell, period, dow] + b[day] + delta h + theta h^2
                + rho (W h) + sum_j g_j h(t - j) + sum_j s_j (W h)(t - j)

    Treatment hours are independent across cell-periods: treated with
    probability p, hours uniform on {0.5, 1.0, ..., 6.0}. Treatment before
    the first period counts as zero.
    """
    grid = synthetic_grid(config)
    weights = synthetic_weights(grid, config)
    n_cells, n_days = config.n_cells, config.n_days
    n_slices = n_days * N_PERIODS
    global_rng, cell_rngs = _cell_streams(config.seed, n_cells)

    fe_day = global_rng.normal(0.0, config.fe_day_sd, size=n_days)

    def draw_design(c: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = cell_rngs[c]
        fe_a = rng.normal(0.0, config.fe_a_sd, size=N_PERIODS * DAYS_PER_WEEK)
        treated = rng.random(n_slices) < config.prob_treated_per_cell_period
        hours = rng.integers(1, HOURS_STEPS + 1, size=n_slices) * 0.5
        return fe_a, np.where(treated, hours, 0.0)

    designs = _run_per_cell(draw_design, n_cells, threads)
    fe_a = np.stack([d[0] for d in designs])
    hours = np.stack([d[1] for d in designs], axis=1)  # (n_slices, n_cells)
    w_hours = np.asarray(weights.matrix @ hours.T).T

    slice_idx = np.arange(n_slices)
    day = slice_idx // N_PERIODS
    period = slice_idx % N_PERIODS
    dow = (day + config.start_date.weekday()) % DAYS_PER_WEEK
    group = period * DAYS_PER_WEEK + dow

    log_rate = (
        config.base_log_rate
        + fe_a[:, group].T
        + fe_day[day][:, None]
        + config.true_delta * hours
        + config.true_theta * hours**2
        + config.true_rho * w_hours
    )
    for j, g in config.true_lags.items():
        log_rate += g * _shifted(hours, j)
    for j, g in config.true_spatial_lags.items():
        log_rate += g * _shifted(w_hours, j)
    lam = np.exp(log_rate)

    def draw_counts(c: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = cell_rngs[c]
        crime = rng.poisson(lam[:, c])
        murders = rng.binomial(crime, config.murder_share)
        return crime, murders

    counts = _run_per_cell(draw_counts, n_cells, threads)
    crime = np.stack([c[0] for c in counts], axis=1).reshape(-1).astype(np.int64)
    murders = np.stack([c[1] for c in counts], axis=1).reshape(-1).astype(np.int64)

    blitz = hours.reshape(-1)
    columns = {
        "crime": crime,
        "murders": murders,
        "robberies": crime - murders,
        "blitz": blitz,
        "blitz_sq": blitz**2,
    }
    for values in columns.values():
        values.setflags(write=False)
    panel = Panel(n_cells, n_days, config.start_date, columns, np.array(grid.lat), np.array(grid.lon))
    logger.info(
        f"Simulated {panel.n_rows} rows: mean crime {crime.mean():.4f}, "
        f"{int(np.count_nonzero(blitz))} treated cell-periods (seed {config.seed})"
    )
    return SyntheticDataset(
        panel=panel,
        truth=truth_coefficients(config),
        realized_lambda=lam.reshape(-1),
        grid=grid,
        weights=weights,
        config=config,
    )


def fit_synthetic(
    dataset: SyntheticDataset,
    vcov: Sequence[VcovSpec] = (VcovSpec(VcovKind.CLUSTER_CELL),),
    lags: Optional[Sequence[int]] = None,
    spatial_lag_lags: Optional[Sequence[int]] = None,
) -> FitResult:
    """Fit the data-generating model to a synthetic panel"""
    config = dataset.config
    lags = config.estimation_lags() if lags is None else sorted(lags)
    spatial_lag_lags = sorted(config.true_spatial_lags) if spatial_lag_lags is None else sorted(spatial_lag_lags)
    panel, regressors = build_model_columns(dataset.panel, dataset.weights, lags, spatial_lag_lags)
    spec = ModelSpec(outcome="crime", regressors=tuple(regressors), vcov=tuple(vcov))
    return estimator.fit_fe_poisson(panel.design("crime", regressors, spec.fe_dims), spec)


@dataclass
class CoefficientRecovery:
    truth: float
    mean_estimate: float
    bias: float
    sd: float
    mc_se: float
    mean_se: float
    coverage: float
    flagged: bool

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class RecoveryReport:
    n_seeds: int
    seeds_used: List[int]
    failed_seeds: Dict[int, str]
    coefficients: Dict[str, CoefficientRecovery]
    level: float
    wald_subset: List[str] = field(default_factory=list)
    wald_p_values: List[float] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.failed_seeds) or any(c.flagged for c in self.coefficients.values())

    @property
    def wald_rejection_rate(self) -> Optional[float]:
        if not self.wald_p_values:
            return None
        return float(np.mean(np.asarray(self.wald_p_values) < 0.05))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_seeds": self.n_seeds,
            "seeds_used": len(self.seeds_used),
            "failed_seeds": {str(k): v for k, v in self.failed_seeds.items()},
            "level": self.level,
            "flagged": self.flagged,
            "coefficients": {k: v.to_dict() for k, v in self.coefficients.items()},
            "wald": {
                "subset": self.wald_subset,
                "rejection_rate_5pct": self.wald_rejection_rate,
            },
        }


def recovery_study(
    config: DGPConfig,
    n_seeds: int,
    threads: int = 1,
    level: float = 0.95,
    lags: Optional[Sequence[int]] = None,
) -> RecoveryReport:
    """
    Refit the model on n_seeds independent draws (seeds config.seed + i).

    Per coefficient: bias, Monte Carlo SD and SE of the mean, and coverage of
    the cell-clustered confidence interval; coverage outside [0.90, 0.98]
    is flagged. Non-convergent or failed seeds are excluded and recorded.
    Coefficients whose truth is zero are tested jointly with a Wald test.

    Raises:
        InvalidParameterError: n_seeds below 50
    """
    if n_seeds < MIN_RECOVERY_SEEDS:
        raise InvalidParameterError(
            f"Recovery study needs at least {MIN_RECOVERY_SEEDS} seeds, got {n_seeds}", parameter="n_seeds"
        )
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    estimates: Dict[str, List[float]] = {}
    ses: Dict[str, List[float]] = {}
    failed: Dict[int, str] = {}
    used: List[int] = []
    wald_p: List[float] = []
    truth: Dict[str, float] = {}
    zero_subset: List[str] = []

    for i in range(n_seeds):
        seed = config.seed + i
        seed_config = config.model_copy(update={"seed": seed})
        dataset = simulate(seed_config, threads=threads)
        try:
            fit = fit_synthetic(dataset, lags=lags)
        except BlitzEvalError as e:
            failed[seed] = e.message
            logger.warning(f"Recovery seed {seed} failed: {e.message}")
            continue
        if not fit.converged:
            failed[seed] = "not converged"
            logger.warning(f"Recovery seed {seed} did not converge")
            continue
        used.append(seed)
        truth = {name: dataset.truth.get(name, 0.0) for name in fit.names}
        zero_subset = [name for name in fit.names if truth[name] == 0.0]
        se = fit.standard_errors("cluster")
        for name in fit.names:
            estimates.setdefault(name, []).append(fit.coef(name))
            ses.setdefault(name, []).append(se[name])
        if zero_subset:
            try:
                wald_p.append(wald_joint_test(fit, zero_subset, "cluster").p_value)
            except BlitzEvalError as e:
                logger.warning(f"Recovery seed {seed}: Wald test of {zero_subset} skipped ({e.message})")

    coefficients = {}
    for name, values in estimates.items():
        b = np.asarray(values)
        s = np.asarray(ses[name])
        sd = float(b.std(ddof=1)) if len(b) > 1 else 0.0
        coverage = float(np.mean(np.abs(b - truth[name]) <= z * s))
        coefficients[name] = CoefficientRecovery(
            truth=truth[name],
            mean_estimate=float(b.mean()),
            bias=float(b.mean() - truth[name]),
            sd=sd,
            mc_se=sd / math.sqrt(len(b)),
            mean_se=float(s.mean()),
            coverage=coverage,
            flagged=not (COVERAGE_BAND[0] <= coverage <= COVERAGE_BAND[1]),
        )
    report = RecoveryReport(
        n_seeds=n_seeds,
        seeds_used=used,
        failed_seeds=failed,
        coefficients=coefficients,
        level=level,
        wald_subset=zero_subset,
        wald_p_values=wald_p,
    )
    logger.info(f"Recovery study: {len(used)}/{n_seeds} seeds used, flagged={report.flagged}")
    return report


def simulate_blitz_outcomes(
    n_blitzes: int, n_cells: int = 30, n_days: int = 200, seed: int = 0
) -> BlitzOutcomeTable:
    """
    Per-blitz outputs with the planted linear coefficients.

    Stops depend on duration, duration², officers and the mobile flag; tickets
    and seizures on officers, mobile, stops and stops². Each equation adds
    cell, day, period and day-of-week effects plus normal noise.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    duration = rng.integers(1, 17, size=n_blitzes) * 0.5
    officers = rng.integers(2, 13, size=n_blitzes).astype(float)
    mobile = (rng.random(n_blitzes) < 0.3).astype(float)
    fe = {
        "cell": rng.integers(0, n_cells, size=n_blitzes),
        "day": rng.integers(0, n_days, size=n_blitzes),
        "period": rng.integers(0, N_PERIODS, size=n_blitzes),
    }
    fe["dow"] = fe["day"] % DAYS_PER_WEEK
    effects = {dim: rng.normal(0.0, 1.0, size=int(codes.max()) + 1) for dim, codes in fe.items()}

    def noise_and_fe(outcome: str) -> np.ndarray:
        base = BLITZ_OUTCOME_INTERCEPT[outcome] + rng.normal(0.0, BLITZ_OUTCOME_NOISE_SD[outcome], n_blitzes)
        return base + sum(effects[dim][codes] for dim, codes in fe.items())

    columns: Dict[str, np.ndarray] = {
        "duration": duration,
        "duration_sq": duration**2,
        "officers": officers,
        "mobile": mobile,
    }
    truth = BLITZ_OUTCOME_TRUTH["stopped"]
    columns["stopped"] = noise_and_fe("stopped") + sum(truth[k] * columns[k] for k in truth)
    columns["stopped_sq"] = columns["stopped"] ** 2
    for outcome in ("tickets", "seizures"):
        truth = BLITZ_OUTCOME_TRUTH[outcome]
        columns[outcome] = noise_and_fe(outcome) + sum(truth[k] * columns[k] for k in truth)
    columns["vehicles"] = np.full(n_blitzes, 2.0)
    columns["weapons"] = np.zeros(n_blitzes)
    columns["drugs"] = np.zeros(n_blitzes)
    lat = np.zeros(n_cells)
    lon = np.arange(n_cells) * 0.01
    return BlitzOutcomeTable(
        columns=columns, fe={k: v.astype(np.int64) for k, v in fe.items()}, cell_lat=lat, cell_lon=lon
    )


def _jittered_points(grid: HexGrid, cells: np.ndarray, rng: np.random.Generator) -> List[GeoPoint]:
    """Random points well inside the given cells"""
    radius = 0.4 * grid.circumradius_m * math.sqrt(3) / 2
    r = radius * np.sqrt(rng.random(len(cells)))
    angle = rng.random(len(cells)) * 2 * math.pi
    lat, lon = grid.projection.to_latlon(grid.x[cells] + r * np.cos(angle), grid.y[cells] + r * np.sin(angle))
    return [GeoPoint(lat=float(a), lon=float(b)) for a, b in zip(lat, lon)]


def synthetic_records(
    dataset: SyntheticDataset,
) -> Tuple[List[CrimeEvent], List[BlitzRecord]]:
    """
    Crime events and blitz records that aggregate back to the panel.

    Each treated cell-period gets one blitz starting on a 30-minute slot
    inside the period and lasting exactly its hours; each crime gets a
    uniformly random second inside its period.
    """
    panel, grid, config = dataset.panel, dataset.grid, dataset.config
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 1])))
    origin = datetime.combine(config.start_date, time.min)
    n = panel.n_cells

    crime = panel.column("crime")
    murders = panel.column("murders")
    rows = np.repeat(np.arange(panel.n_rows), crime)
    first_of_row = np.concatenate([[0], np.cumsum(crime)[:-1]])[rows] if len(rows) else rows
    is_murder = (np.arange(len(rows)) - first_of_row) < murders[rows]
    seconds = rng.integers(0, PERIOD_HOURS * 3600, size=len(rows))
    points = _jittered_points(grid, rows % n, rng)
    crimes = [
        CrimeEvent(
            kind=CrimeKind.MURDER if m else CrimeKind.ROBBERY,
            location=p,
            timestamp=origin + timedelta(hours=int(row // n) * PERIOD_HOURS, seconds=int(sec)),
        )
        for row, m, sec, p in zip(rows, is_murder, seconds, points)
    ]

    blitz = panel.column("blitz")
    treated = np.flatnonzero(blitz > 0)
    hours = blitz[treated]
    free_slots = ((PERIOD_HOURS - hours) * 2).astype(np.int64)
    offsets = np.floor(rng.random(len(treated)) * (free_slots + 1)).astype(np.int64)
    officers = rng.integers(2, 13, size=len(treated))
    mobile = rng.random(len(treated)) < 0.3
    stop_truth = BLITZ_OUTCOME_TRUTH["stopped"]
    stopped = np.maximum(
        0,
        np.round(
            BLITZ_OUTCOME_INTERCEPT["stopped"]
            + stop_truth["duration"] * hours
            + stop_truth["duration_sq"] * hours**2
            + stop_truth["officers"] * officers
            + stop_truth["mobile"] * mobile
            + rng.normal(0.0, BLITZ_OUTCOME_NOISE_SD["stopped"], len(treated))
        ),
    ).astype(np.int64)

    def derived(outcome: str) -> np.ndarray:
        t = BLITZ_OUTCOME_TRUTH[outcome]
        value = (
            BLITZ_OUTCOME_INTERCEPT[outcome]
            + t["officers"] * officers
            + t["mobile"] * mobile
            + t["stopped"] * stopped
            + t["stopped_sq"] * stopped**2
            + rng.normal(0.0, BLITZ_OUTCOME_NOISE_SD[outcome], len(treated))
        )
        return np.maximum(0, np.round(value)).astype(np.int64)

    tickets, seizures = derived("tickets"), derived("seizures")
    weapons = rng.random(len(treated)) < 0.01
    drugs = rng.random(len(treated)) < 0.05
    points = _jittered_points(grid, treated % n, rng)
    blitzes = []
    for k, row in enumerate(treated):
        start = origin + timedelta(hours=int(row // n) * PERIOD_HOURS, minutes=30 * int(offsets[k]))
        blitzes.append(
            BlitzRecord(
                location=points[k],
                start=start,
                end=start + timedelta(hours=float(hours[k])),
                officers=int(officers[k]),
                police_vehicles=2,
                blitz_type=BlitzType.MOBILE if mobile[k] else BlitzType.FIXED,
                vehicles_stopped=int(stopped[k]),
                tickets=int(tickets[k]),
                seizures=int(seizures[k]),
                weapons_found=bool(weapons[k]),
                drugs_found=bool(drugs[k]),
            )
        )
    return crimes, blitzes


def write_synthetic_inputs(
    dataset: SyntheticDataset, output_dir: Union[str, Path]
) -> Dict[str, Path]:
    """
    Write crimes.csv, blitzes.csv, boundary.geojson and truth.json.

    Returns:
        Written paths by name
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    crimes, blitzes = synthetic_records(dataset)
    paths = {
        "crimes": write_crimes_csv(crimes, output_dir / "crimes.csv"),
        "blitzes": write_blitzes_csv(blitzes, output_dir / "blitzes.csv"),
        "boundary": write_boundary_geojson(dataset.grid.boundary, output_dir / "boundary.geojson"),
    }
    truth = {
        "coefficients": dataset.truth,
        "blitz_outcomes": BLITZ_OUTCOME_TRUTH,
        "dgp": dataset.config.model_dump(mode="json"),
        "n_cells": dataset.panel.n_cells,
        "n_days": dataset.panel.n_days,
        "n_crimes": len(crimes),
        "n_blitzes": len(blitzes),
    }
    truth_path = output_dir / "truth.json"
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["truth"] = truth_path
    logger.info(f"Wrote {len(crimes)} crimes and {len(blitzes)} blitzes to {output_dir}")
    return paths
