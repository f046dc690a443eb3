"""
Configuration management for blitz-eval

Environment-driven defaults plus the validated run configuration that drives
every CLI stage and server tool.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
import math
import os
from datetime import date
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from blitz_eval.exceptions import ConfigurationError, InputFileError

# Default paths - can be overridden via environment variables
CACHE_DIR = Path(os.getenv("BLITZ_EVAL_CACHE_DIR", Path.home() / ".cache" / "blitz-eval"))
LOGS_DIR = Path(os.getenv("BLITZ_EVAL_LOG_DIR", CACHE_DIR / "logs"))

# Run configuration used by the tool server when a tool call names none
DEFAULT_CONFIG_PATH_ENV = os.getenv("BLITZ_EVAL_CONFIG")

THREADS_ENV = "BLITZ_EVAL_THREADS"
LOG_TO_FILE_ENV = "BLITZ_EVAL_LOG_TO_FILE"


def get_logs_dir() -> Path:
    """Get path to logs directory"""
    return LOGS_DIR


def get_cache_dir() -> Path:
    """Get path to cache directory"""
    return CACHE_DIR


def log_to_file_enabled() -> bool:
    """File logging is on unless BLITZ_EVAL_LOG_TO_FILE is 0/false/no"""
    return os.getenv(LOG_TO_FILE_ENV, "1").strip().lower() not in ("0", "false", "no", "off")


def get_default_threads() -> int:
    """
    Get the default worker thread count.

    Priority:
    1. BLITZ_EVAL_THREADS environment variable
    2. Default: 1

    Returns:
        Positive thread count
    """
    raw = os.getenv(THREADS_ENV)
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if threads < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads


def get_default_config_path() -> Optional[Path]:
    """Get the run configuration named by BLITZ_EVAL_CONFIG, if any"""
    if DEFAULT_CONFIG_PATH_ENV:
        return Path(DEFAULT_CONFIG_PATH_ENV)
    return None


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PathsConfig(_Section):
    boundary: Optional[Path] = None
    crimes: Optional[Path] = None
    blitzes: Optional[Path] = None
    output_dir: Path = Path("output")


class GridConfig(_Section):
    nominal_cell_area_km2: float = Field(0.126, gt=0)


class StudyConfig(_Section):
    start_date: date = date(2012, 1, 1)
    n_days: int = Field(721, ge=1)


class WeightsConfig(_Section):
    include_contiguity: bool = True
    cutoffs_m: List[float] = Field(default_factory=lambda: [500.0, 750.0, 1000.0, 1500.0])
    row_standardize: bool = True

    @field_validator("cutoffs_m")
    @classmethod
    def _positive_cutoffs(cls, value: List[float]) -> List[float]:
        for cutoff in value:
            if cutoff <= 0:
                raise ValueError(f"cutoffs must be positive, got {cutoff}")
        return value

    @model_validator(mode="after")
    def _some_weights(self) -> "WeightsConfig":
        if not self.include_contiguity and not self.cutoffs_m:
            raise ValueError("cutoff list must be nonempty when contiguity weights are off")
        return self


class ModelConfig(_Section):
    outcome: Literal["crime", "murders", "robberies"] = "crime"
    lags: List[int] = Field(default_factory=lambda: list(range(1, 17)))
    spatial_lag_lags: List[int] = Field(default_factory=list)
    interactions: List[Literal["seizures", "officers", "mobile"]] = Field(default_factory=list)
    vcov: List[Literal["cluster", "conley"]] = Field(default_factory=lambda: ["cluster", "conley"])
    # Conley cutoff for the contiguity column (inverse-distance columns use their own cutoff)
    contiguity_conley_cutoff_m: float = Field(500.0, gt=0)
    max_iter: int = Field(100, ge=1)
    deviance_tol: float = Field(1e-9, gt=0)
    demean_tol: float = Field(1e-8, gt=0)
    blitz_outcome_regressions: bool = True

    @field_validator("lags", "spatial_lag_lags")
    @classmethod
    def _positive_lags(cls, value: List[int]) -> List[int]:
        if any(j < 1 for j in value):
            raise ValueError("lags must be >= 1")
        if len(set(value)) != len(value):
            raise ValueError("lags must be distinct")
        return sorted(value)


class EffectsConfig(_Section):
    primary_weights: str = "idw_1000m"
    currency: str = "BRL"
    display_currency: str = "USD"
    exchange_rate: Decimal = Field(Decimal("5.0"), gt=0)
    value_statistical_life: Decimal = Decimal("1119000")
    value_statistical_robbery: Decimal = Decimal("9861.61")
    murder_share: Optional[float] = Field(None, ge=0, le=1)
    treated_cell_periods: Optional[int] = Field(None, ge=0)
    avg_treated_outcome: Optional[float] = Field(None, ge=0)
    avg_treated_hours: Optional[float] = Field(None, ge=0, le=6)
    effect_fraction: Optional[float] = Field(None, gt=-1, le=0)
    fines_total: Decimal = Decimal("0")
    officers_per_blitz: int = Field(6, ge=0)
    blitzes_per_day: int = Field(5, ge=0)
    vehicles_needed: int = Field(10, ge=0)
    salary_per_year: Decimal = Decimal("50000")
    vehicle_unit_cost: Decimal = Decimal("150000")
    years: float = Field(2.0, gt=0)
    reported_total_cost: Optional[Decimal] = None


class DGPConfig(_Section):
    """Synthetic data-generating process with known truth"""

    n_cells: int = Field(400, ge=9)
    n_days: int = Field(360, ge=1)
    start_date: date = date(2012, 1, 1)
    true_delta: float = -0.28
    true_theta: float = 0.046
    true_rho: float = -0.05
    true_lags: Dict[int, float] = Field(default_factory=lambda: {7: -0.06})
    true_spatial_lags: Dict[int, float] = Field(default_factory=dict)
    fit_lags: Optional[List[int]] = None
    fe_a_sd: float = Field(0.3, ge=0)
    fe_day_sd: float = Field(0.1, ge=0)
    base_log_rate: float = math.log(0.05)
    prob_treated_per_cell_period: float = Field(0.05, ge=0, le=1)
    weight_scheme: Literal["contiguity", "inverse_distance"] = "inverse_distance"
    cutoff_m: float = Field(1000.0, gt=0)
    row_standardize: bool = True
    cell_area_km2: float = Field(0.126, gt=0)
    origin_lat: float = Field(-3.80, ge=-90, le=90)
    origin_lon: float = Field(-38.60, ge=-180, le=180)
    murder_share: float = Field(0.05, ge=0, le=1)
    seed: int = Field(20120101, ge=0, lt=2**64)

    @field_validator("true_lags", "true_spatial_lags")
    @classmethod
    def _lag_keys(cls, value: Dict[int, float]) -> Dict[int, float]:
        if any(j < 1 for j in value):
            raise ValueError("lag indices must be >= 1")
        return value

    def estimation_lags(self) -> List[int]:
        """Lags fitted on simulated data (default: the lags with planted truth)"""
        if self.fit_lags is not None:
            return sorted(self.fit_lags)
        return sorted(self.true_lags)


class RunConfig(_Section):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    study: StudyConfig = Field(default_factory=StudyConfig)
    weights: WeightsConfig = Field(default_factory=WeightsConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    effects: EffectsConfig = Field(default_factory=EffectsConfig)
    sim: Optional[DGPConfig] = None

    def with_output_dir(self, output_dir: Path) -> "RunConfig":
        """Copy with the output directory replaced"""
        paths = self.paths.model_copy(update={"output_dir": Path(output_dir)})
        return self.model_copy(update={"paths": paths})

    def canonical_json(self) -> str:
        """Stable JSON rendering used for hashing; paths are left out (inputs are hashed by content)"""
        data = self.model_dump(mode="json", exclude={"paths"})
        return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _resolve_paths(paths: PathsConfig, base_dir: Path) -> PathsConfig:
    updates = {}
    for name in ("boundary", "crimes", "blitzes", "output_dir"):
        value = getattr(paths, name)
        if value is not None and not Path(value).is_absolute():
            updates[name] = base_dir / value
    return paths.model_copy(update=updates)


def parse_run_config(data: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """
    Validate a configuration mapping.

    Args:
        data: Decoded JSON object
        base_dir: Directory relative paths are resolved against

    Returns:
        RunConfig
    """
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        errors = [
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        ]
        raise ConfigurationError(
            "Invalid run configuration: " + "; ".join(errors), details={"errors": errors}
        )
    if base_dir is not None:
        config = config.model_copy(update={"paths": _resolve_paths(config.paths, base_dir)})
    return config


def load_run_config(path: Path) -> RunConfig:
    """
    Load and validate a run configuration file.

    Relative paths inside the file resolve against the file's directory.

    Args:
        path: JSON configuration file

    Returns:
        RunConfig
    """
    path = Path(path)
    if not path.exists():
        raise InputFileError(f"Configuration file not found: {path}", path=str(path))
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Configuration is not valid JSON: {e}", path=str(path))
    except OSError as e:
        raise InputFileError(f"Cannot read configuration: {e}", path=str(path))
    if not isinstance(data, dict):
        raise ConfigurationError("Configuration must be a JSON object", path=str(path))
    return parse_run_config(data, base_dir=path.parent)


def validate_run_config(config: RunConfig, require_inputs: bool = True) -> Tuple[bool, List[str]]:
    """Check input files exist and the output directory is writable"""
    errors = []
    if require_inputs:
        for name in ("boundary", "crimes", "blitzes"):
            value = getattr(config.paths, name)
            if value is None:
                errors.append(f"paths.{name} is not set")
            elif not Path(value).exists():
                errors.append(f"paths.{name} not found: {value}")

    output_dir = Path(config.paths.output_dir)
    existing = output_dir
    while not existing.exists() and existing.parent != existing:
        existing = existing.parent
    if not os.access(existing, os.W_OK):
        errors.append(f"Output directory not writable: {output_dir}")

    return len(errors) == 0, errors


def validate_config() -> tuple:
    """Validate the environment-level configuration"""
    errors = []

    try:
        get_default_threads()
    except ConfigurationError as e:
        errors.append(e.message)

    config_path = get_default_config_path()
    if config_path is not None:
        try:
            load_run_config(config_path)
        except (ConfigurationError, InputFileError) as e:
            errors.append(e.message)

    return len(errors) == 0, errors
