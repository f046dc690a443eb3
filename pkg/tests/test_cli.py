"""
Tests for the command-line entry point

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
from pathlib import Path

import pytest

from blitz_eval.cli import EXIT_INPUT_ERROR, EXIT_OK, EXIT_STAGE_FAILURE, build_parser, main
from blitz_eval.tools.ingest import write_blitzes_csv, write_crimes_csv


def _config(tmp_path: Path, **paths) -> Path:
    config = {
        "paths": {"output_dir": "out", **paths},
        "study": {"start_date": "2012-01-01", "n_days": 7},
        "weights": {"include_contiguity": True, "cutoffs_m": []},
        "model": {"lags": [1], "blitz_outcome_regressions": False},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    return path


class TestParser:
    """Tests for build_parser"""

    def test_commands(self):
        """Test every subcommand takes --config"""
        parser = build_parser()

        for command in ("grid", "ingest", "panel", "weights", "fit", "effects", "pipeline", "simulate", "report"):
            args = parser.parse_args([command, "--config", "run.json"])
            assert args.command == command
            assert args.config == Path("run.json")

    def test_config_is_required(self):
        """Test a subcommand without --config exits with a usage error"""
        with pytest.raises(SystemExit) as exc_info:
            build_parser().parse_args(["grid"])

        assert exc_info.value.code == 2


class TestMain:
    """Tests for main"""

    def test_grid(self, grid_config_file, capsys):
        """Test the grid command prints the cell count"""
        code = main(["grid", "--config", str(grid_config_file)])

        assert code == EXIT_OK
        assert "30 cells" in capsys.readouterr().out
        assert (grid_config_file.parent / "out" / "cells.csv").is_file()

    def test_output_dir_override(self, grid_config_file, tmp_path):
        """Test --output-dir wins over the configured output directory"""
        code = main(["grid", "--config", str(grid_config_file), "--output-dir", str(tmp_path / "elsewhere")])

        assert code == EXIT_OK
        assert (tmp_path / "elsewhere" / "manifest.json").is_file()

    def test_missing_config(self, tmp_path, capsys):
        """Test a missing configuration file exits with 2"""
        code = main(["grid", "--config", str(tmp_path / "absent.json")])

        assert code == EXIT_INPUT_ERROR
        assert "Error:" in capsys.readouterr().err

    def test_invalid_boundary(self, tmp_path):
        """Test an unusable boundary exits with 2"""
        (tmp_path / "boundary.geojson").write_text(json.dumps({"type": "Point", "coordinates": [-38.6, -3.8]}))

        code = main(["grid", "--config", str(_config(tmp_path, boundary="boundary.geojson"))])

        assert code == EXIT_INPUT_ERROR

    def test_invalid_threads(self, grid_config_file):
        """Test --threads 0 exits with 2"""
        assert main(["grid", "--config", str(grid_config_file), "--threads", "0"]) == EXIT_INPUT_ERROR

    def test_fit_failure(self, tmp_path, boundary_file):
        """Test a fit on a panel without any crime exits with 1"""
        write_crimes_csv([], tmp_path / "crimes.csv")
        write_blitzes_csv([], tmp_path / "blitzes.csv")
        config = _config(tmp_path, boundary=boundary_file.name, crimes="crimes.csv", blitzes="blitzes.csv")

        code = main(["fit", "--config", str(config)])

        assert code == EXIT_STAGE_FAILURE
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["failed_stage"] == "fit"

    def test_simulate_pipeline_report(self, sim_config_file, capsys):
        """Test simulate, then the full pipeline, then report on its output"""
        assert main(["simulate", "--config", str(sim_config_file)]) == EXIT_OK
        run_config = sim_config_file.parent / "sim" / "config.json"

        assert main(["pipeline", "--config", str(run_config)]) == EXIT_OK
        assert "Effects summary" in capsys.readouterr().out

        assert main(["report", "--config", str(run_config)]) == EXIT_OK
        run_dir = run_config.parent / "run"
        assert (run_dir / "report_manifest.json").is_file()
        assert (run_dir / "regression_table.csv").is_file()

    def test_report_without_fits(self, grid_config_file):
        """Test report on a run without fit files exits with 2"""
        assert main(["report", "--config", str(grid_config_file)]) == EXIT_INPUT_ERROR
