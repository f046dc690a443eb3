"""
Pytest configuration and fixtures for blitz-eval tests

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
import math
import os
from datetime import date
from pathlib import Path

# Keep test runs out of the user's log directory
os.environ.setdefault("BLITZ_EVAL_LOG_TO_FILE", "0")

import numpy as np
import pytest

from blitz_eval.config import DGPConfig
from blitz_eval.tools.spatial import build_hex_grid, lattice_rectangle, write_boundary_geojson

ORIGIN_LAT = -3.80
ORIGIN_LON = -38.60
CELL_AREA_KM2 = 0.126


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless BLITZ_EVAL_RUN_SLOW=1"""
    if os.getenv("BLITZ_EVAL_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set BLITZ_EVAL_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_boundary():
    """Rectangle that tessellates into exactly 6 x 5 cells"""
    return lattice_rectangle(ORIGIN_LAT, ORIGIN_LON, 6, 5, CELL_AREA_KM2)


@pytest.fixture
def small_grid(small_boundary):
    """30-cell hex grid"""
    return build_hex_grid(small_boundary, CELL_AREA_KM2)


@pytest.fixture
def large_grid():
    """14 x 14 grid, big enough for full 1500 m neighbourhoods"""
    return build_hex_grid(lattice_rectangle(ORIGIN_LAT, ORIGIN_LON, 14, 14, CELL_AREA_KM2), CELL_AREA_KM2)


@pytest.fixture
def boundary_file(tmp_path: Path, small_boundary) -> Path:
    """Boundary GeoJSON of the 30-cell grid"""
    return write_boundary_geojson(small_boundary, tmp_path / "boundary.geojson")


@pytest.fixture
def sim_config() -> DGPConfig:
    """Small synthetic design with enough crime to keep most groups"""
    return DGPConfig(
        n_cells=30,
        n_days=28,
        start_date=date(2012, 1, 2),
        true_delta=-0.28,
        true_theta=0.046,
        true_rho=-0.05,
        true_lags={1: -0.06},
        base_log_rate=math.log(1.5),
        prob_treated_per_cell_period=0.15,
        fe_a_sd=0.2,
        fe_day_sd=0.1,
        cutoff_m=1000.0,
        seed=11,
    )


@pytest.fixture
def sim_config_file(tmp_path: Path, sim_config: DGPConfig) -> Path:
    """Run configuration with a sim block, output under tmp_path/sim"""
    config = {
        "paths": {"output_dir": "sim"},
        "weights": {"include_contiguity": True, "cutoffs_m": [1000.0]},
        "model": {"vcov": ["cluster", "conley"], "blitz_outcome_regressions": False},
        "effects": {"primary_weights": "idw_1000m"},
        "sim": sim_config.model_dump(mode="json"),
    }
    path = tmp_path / "sim_config.json"
    path.write_text(json.dumps(config, indent=2))
    return path


@pytest.fixture
def grid_config_file(tmp_path: Path, boundary_file: Path) -> Path:
    """Run configuration that only has a boundary (enough for the grid stage)"""
    config = {
        "paths": {"boundary": boundary_file.name, "output_dir": "out"},
        "grid": {"nominal_cell_area_km2": CELL_AREA_KM2},
    }
    path = tmp_path / "grid_config.json"
    path.write_text(json.dumps(config, indent=2))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
