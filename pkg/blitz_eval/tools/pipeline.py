"""
Pipeline: grid -> ingest -> panel -> weights -> fit -> effects

Each stage runs once per Pipeline, records its counts in the run manifest and
registers the files it writes. Later stages pull earlier ones on demand, so
every CLI subcommand is ``Pipeline(config).run(target)``.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Tuple

from blitz_eval.config import RunConfig
from blitz_eval.exceptions import BlitzEvalError, ConfigurationError
from blitz_eval.tools import effects as effects_tools
from blitz_eval.tools import ingest, panel as panel_tools, simkit, spatial
from blitz_eval.tools.estimator import (
    Family,
    FitResult,
    ModelSpec,
    VcovKind,
    VcovSpec,
    fit_fe_linear,
    fit_fe_poisson,
)
from blitz_eval.tools.ingest import OUTCOME_TABLE_FE, BlitzRecord, CellPeriodAggregates, StudyWindow
from blitz_eval.tools.panel import Panel
from blitz_eval.tools.reporting import write_fit_json, write_regression_table
from blitz_eval.tools.spatial import HexGrid, WeightMatrix, WeightScheme
from blitz_eval.utils.logger import get_logger
from blitz_eval.utils.manifest import RunManifest, write_json

logger = get_logger()

STAGES = ("grid", "ingest", "panel", "weights", "fit", "effects")

# Linear regressions of blitz outputs: outcome -> regressors
BLITZ_OUTCOME_MODELS: Dict[str, Tuple[str, ...]] = {
    "stopped": ("duration", "duration_sq", "officers", "mobile"),
    "tickets": ("officers", "mobile", "stopped", "stopped_sq"),
    "seizures": ("officers", "mobile", "stopped", "stopped_sq"),
}


class Pipeline:
    """Stages of one run over a RunConfig"""

    def __init__(self, config: RunConfig, threads: int = 1, command: str = "pipeline"):
        self.config = config
        self.threads = max(1, threads)
        self.output_dir = Path(config.paths.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(
            self.output_dir,
            config.canonical_json(),
            inputs={
                "boundary": config.paths.boundary,
                "crimes": config.paths.crimes,
                "blitzes": config.paths.blitzes,
            },
            command=command,
        )
        self.window = StudyWindow(config.study.start_date, config.study.n_days)
        self._cache: Dict[str, Any] = {}

    @property
    def run_hash(self) -> str:
        return self.manifest.run_hash

    def _input(self, name: str) -> Path:
        value = getattr(self.config.paths, name)
        if value is None:
            raise ConfigurationError(f"paths.{name} is not set")
        return Path(value)

    def _cached(self, name: str, build):
        if name not in self._cache:
            self._cache[name] = build()
        return self._cache[name]

    # Stages

    def grid(self) -> HexGrid:
        return self._cached("grid", self._build_grid)

    def _build_grid(self) -> HexGrid:
        with self.manifest.stage("grid") as record:
            boundary = spatial.load_boundary_geojson(self._input("boundary"))
            grid = spatial.build_hex_grid(boundary, self.config.grid.nominal_cell_area_km2)
            self.manifest.record_output(spatial.write_cells_csv(grid, self.output_dir / "cells.csv"))
            record["counts"] = grid.summary()
        return grid

    def ingest(self) -> Tuple[CellPeriodAggregates, List[BlitzRecord]]:
        return self._cached("ingest", self._build_ingest)

    def _build_ingest(self) -> Tuple[CellPeriodAggregates, List[BlitzRecord]]:
        grid = self.grid()
        with self.manifest.stage("ingest") as record:
            crimes = ingest.read_crimes_csv(self._input("crimes"))
            blitzes = ingest.read_blitzes_csv(self._input("blitzes"))
            aggregates = ingest.aggregate(
                grid,
                crimes.records,
                blitzes.records,
                self.window,
                drops=crimes.drops + blitzes.drops,
                crime_rows=crimes.rows,
                blitz_rows=blitzes.rows,
            )
            self.manifest.record_output(
                ingest.write_drop_ledger(aggregates.drops, self.output_dir / "drops.csv")
            )
            summary = aggregates.summary()
            record["drops"] = summary.pop("drops")
            record["counts"] = summary
        return aggregates, blitzes.records

    def panel(self) -> Panel:
        return self._cached("panel", self._build_panel)

    def _build_panel(self) -> Panel:
        grid = self.grid()
        aggregates, _ = self.ingest()
        with self.manifest.stage("panel") as record:
            panel = panel_tools.assemble(grid, aggregates, self.window.start, self.window.n_days)
            self.manifest.record_outputs(panel_tools.save_panel(panel, self.output_dir / "panel"))
            record["counts"] = {
                "n_rows": panel.n_rows,
                "n_cells": panel.n_cells,
                "n_days": panel.n_days,
                **panel_tools.treatment_summary(panel, self.config.model.outcome),
            }
        return panel

    def weights(self) -> List[WeightMatrix]:
        return self._cached("weights", self._build_weights)

    def _build_weights(self) -> List[WeightMatrix]:
        grid = self.grid()
        cfg = self.config.weights
        with self.manifest.stage("weights") as record:
            matrices = []
            if cfg.include_contiguity:
                matrices.append(
                    spatial.build_weights(
                        grid, WeightScheme.BINARY_CONTIGUITY, row_standardize_rows=cfg.row_standardize
                    )
                )
            for cutoff in cfg.cutoffs_m:
                matrices.append(
                    spatial.build_weights(
                        grid, WeightScheme.INVERSE_DISTANCE, cutoff, row_standardize_rows=cfg.row_standardize
                    )
                )
            weights_dir = self.output_dir / "weights"
            weights_dir.mkdir(parents=True, exist_ok=True)
            for w in matrices:
                self.manifest.record_output(spatial.weights_to_csv(w, weights_dir / f"{w.label}.csv"))
            catchment = {
                "run_hash": self.run_hash,
                "avg_neighbors": {w.label: w.avg_neighbor_count for w in matrices},
                "catchment": spatial.catchment_counts(grid, cfg.cutoffs_m),
            }
            self.manifest.record_output(write_json(weights_dir / "catchment.json", catchment))
            record["counts"] = {
                w.label: {"nnz": int(w.matrix.nnz), "avg_neighbors": w.avg_neighbor_count}
                for w in matrices
            }
        return matrices

    def _vcov_specs(self, w: WeightMatrix) -> Tuple[VcovSpec, ...]:
        specs = []
        for kind in self.config.model.vcov:
            if kind == "cluster":
                specs.append(VcovSpec(VcovKind.CLUSTER_CELL))
            else:
                cutoff = w.cutoff_m if w.cutoff_m is not None else self.config.model.contiguity_conley_cutoff_m
                specs.append(VcovSpec(VcovKind.CONLEY_SPATIAL, cutoff))
        return tuple(specs)

    def _fit_one(self, panel: Panel, w: WeightMatrix) -> FitResult:
        model = self.config.model
        with_columns, regressors = panel_tools.build_model_columns(
            panel, w, model.lags, model.spatial_lag_lags, model.interactions
        )
        spec = ModelSpec(outcome=model.outcome, regressors=tuple(regressors), vcov=self._vcov_specs(w))
        data = with_columns.design(model.outcome, regressors, spec.fe_dims)
        logger.info(f"Fitting {w.label}: {data.n_obs} rows, {len(regressors)} regressors")
        return fit_fe_poisson(
            data, spec, max_iter=model.max_iter, deviance_tol=model.deviance_tol, demean_tol=model.demean_tol
        )

    def fits(self) -> Dict[str, FitResult]:
        return self._cached("fit", self._build_fits)

    def _fit_context(self, panel: Panel, w: WeightMatrix) -> Dict[str, Any]:
        summary = panel_tools.treatment_summary(panel, self.config.model.outcome)
        crime_total = float(panel.column("crime").sum())
        murder_share = float(panel.column("murders").sum()) / crime_total if crime_total > 0 else None
        return {
            "weights": w.label,
            "avg_neighbors": w.avg_neighbor_count,
            "observed": {**summary, "murder_share": murder_share},
        }

    def _build_fits(self) -> Dict[str, FitResult]:
        panel = self.panel()
        matrices = self.weights()
        aggregates, blitzes = self.ingest()
        with self.manifest.stage("fit", n_models=len(matrices)) as record:
            if self.threads > 1 and len(matrices) > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    results = list(pool.map(lambda w: self._fit_one(panel, w), matrices))
            else:
                results = [self._fit_one(panel, w) for w in matrices]
            fits = {w.label: fit for w, fit in zip(matrices, results)}

            fits_dir = self.output_dir / "fits"
            documents = {}
            for w, (label, fit) in zip(matrices, fits.items()):
                path, documents[label] = write_fit_json(
                    fit, fits_dir, self.run_hash, label, self._fit_context(panel, w)
                )
                self.manifest.record_output(path)
            table_path = self.output_dir / "regression_table.csv"
            self.manifest.record_output(write_regression_table(documents, table_path))

            record["counts"] = {
                label: {
                    "n_obs_used": fit.n_obs_used,
                    "dropped_groups": sum(len(v) for v in fit.dropped_groups.values()),
                    "converged": fit.converged,
                    "iterations": fit.iterations,
                }
                for label, fit in fits.items()
            }
            if self.config.model.blitz_outcome_regressions:
                record["counts"]["blitz_outcomes"] = self._blitz_outcome_fits(blitzes)
        return fits

    def _blitz_outcome_fits(self, blitzes: List[BlitzRecord]) -> Dict[str, Any]:
        table = ingest.build_blitz_outcome_table(self.grid(), blitzes, self.window)
        outcome_dir = self.output_dir / "blitz_outcomes"
        counts: Dict[str, Any] = {}
        documents = {}
        for outcome, regressors in BLITZ_OUTCOME_MODELS.items():
            spec = ModelSpec(
                outcome=outcome, regressors=regressors, fe_dims=OUTCOME_TABLE_FE, family=Family.LINEAR
            )
            try:
                fit = fit_fe_linear(table.design(outcome, regressors, OUTCOME_TABLE_FE), spec)
            except BlitzEvalError as e:
                logger.warning(f"Blitz outcome regression for {outcome!r} skipped: {e.message}")
                counts[outcome] = {"skipped": e.message}
                continue
            path, documents[outcome] = write_fit_json(fit, outcome_dir, self.run_hash, outcome)
            self.manifest.record_output(path)
            counts[outcome] = {"n_obs": fit.n_obs_used, "r2": fit.r2}
        if documents:
            self.manifest.record_output(write_regression_table(documents, outcome_dir / "regression_table.csv"))
        return counts

    def _primary_label(self, fits: Dict[str, FitResult]) -> str:
        label = self.config.effects.primary_weights
        if label in fits:
            return label
        fallback = next(iter(fits))
        logger.warning(f"Primary weights {label!r} not fitted; using {fallback!r}")
        return fallback

    def effects(self) -> effects_tools.EffectsReport:
        return self._cached("effects", self._build_effects)

    def _build_effects(self) -> effects_tools.EffectsReport:
        fits = self.fits()
        panel = self.panel()
        matrices = {w.label: w for w in self.weights()}
        with self.manifest.stage("effects") as record:
            label = self._primary_label(fits)
            fit = fits[label]
            context = self._fit_context(panel, matrices[label])
            report = effects_tools.build_effects_report(
                fit.coefficient_map(),
                self.config.effects,
                avg_neighbors=context["avg_neighbors"],
                observed=context["observed"],
                weights_label=label,
            )
            self.manifest.record_outputs(write_effects_outputs(report, self.output_dir, self.run_hash))
            record["counts"] = {
                "weights": label,
                "direct_pct": report.direct_pct,
                "prevented_crimes": report.prevented_crimes,
            }
        return report

    def run(self, target: str = "effects") -> RunManifest:
        """
        Run stages up to and including target, then save the manifest.

        Raises:
            StageError: a stage failed (manifest already saved, marking it)
        """
        if target not in STAGES:
            raise ConfigurationError(f"Unknown stage {target!r}; expected one of {', '.join(STAGES)}")
        getattr(self, {"fit": "fits"}.get(target, target))()
        self.manifest.save()
        return self.manifest


def write_effects_outputs(
    report: effects_tools.EffectsReport, output_dir: Path, run_hash: str
) -> List[Path]:
    """effects.json, effects.txt and dose_curve.csv"""
    output_dir = Path(output_dir)
    data = report.to_dict()
    data["run_hash"] = run_hash
    delta = report.coefficients["blitz"]
    theta = report.coefficients.get("blitz_sq", 0.0)
    text = output_dir / "effects.txt"
    text.write_text(report.render_text() + f"Run: {run_hash}\n", encoding="utf-8")
    return [
        write_json(output_dir / "effects.json", data),
        text,
        effects_tools.write_dose_curve_csv(delta, theta, output_dir / "dose_curve.csv"),
    ]


def simulate_run(config: RunConfig, threads: int = 1, command: str = "simulate") -> RunManifest:
    """
    Write synthetic inputs, the planted truth and a run configuration that
    points the pipeline at them (output under ``run/``).

    Raises:
        ConfigurationError: the configuration has no ``sim`` block
    """
    if config.sim is None:
        raise ConfigurationError("The configuration has no 'sim' block")
    sim = config.sim
    output_dir = Path(config.paths.output_dir)
    manifest = RunManifest(output_dir, config.canonical_json(), command=command)
    with manifest.stage("simulate", seed=sim.seed) as record:
        dataset = simkit.simulate(sim, threads=threads)
        paths = simkit.write_synthetic_inputs(dataset, output_dir)
        manifest.record_outputs(paths.values())
        run_config = {
            "paths": {
                "boundary": paths["boundary"].name,
                "crimes": paths["crimes"].name,
                "blitzes": paths["blitzes"].name,
                "output_dir": "run",
            },
            "grid": {"nominal_cell_area_km2": sim.cell_area_km2},
            "study": {"start_date": sim.start_date.isoformat(), "n_days": sim.n_days},
            "weights": config.weights.model_dump(mode="json"),
            "model": {
                **config.model.model_dump(mode="json"),
                "lags": sim.estimation_lags(),
                "spatial_lag_lags": sorted(sim.true_spatial_lags),
            },
            "effects": config.effects.model_dump(mode="json", exclude_none=True),
        }
        manifest.record_output(write_json(output_dir / "config.json", run_config))
        record["counts"] = {
            "n_rows": dataset.panel.n_rows,
            "crime_total": int(dataset.panel.column("crime").sum()),
            "treated_cell_periods": int((dataset.panel.column("blitz") > 0).sum()),
        }
    manifest.save()
    return manifest
