"""
Integration tests for MCP server tool handlers

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
from unittest.mock import patch

import pytest

from blitz_eval.server.tool_definitions import get_all_tools
from blitz_eval.server.tool_handlers import HANDLERS, handle_tool
from blitz_eval.tools.effects import pct_effect


def _call(name, arguments):
    result = handle_tool(name, arguments, "test-123", 0.0)
    assert len(result) == 1
    assert result[0].type == "text"
    return json.loads(result[0].text)


class TestToolDefinitions:
    """Tests for tool definitions"""

    def test_all_tools_defined(self):
        """Test that every handler has a definition"""
        tool_names = {tool.name for tool in get_all_tools()}

        assert set(HANDLERS) | {"health_status"} == tool_names

    def test_tool_schemas_valid(self):
        """Test that tool schemas are valid"""
        for tool in get_all_tools():
            assert tool.name
            assert tool.description
            assert tool.inputSchema["type"] == "object"
            for required in tool.inputSchema["required"]:
                assert required in tool.inputSchema["properties"]


class TestToolHandlers:
    """Tests for tool handlers"""

    def test_unknown_tool(self):
        """Test handling of unknown tool"""
        data = _call("unknown_tool", {})

        assert data["success"] is False
        assert "Unknown tool" in data["error"]

    def test_missing_required_argument(self):
        """Test a missing required argument is reported without running the tool"""
        data = _call("compute_effects", {})

        assert data["success"] is False
        assert data["error"] == "delta required"

    def test_apportion_blitz(self):
        """Test a blitz across the 06:00 boundary is split between dawn and morning"""
        data = _call("apportion_blitz", {"start": "2012-01-01T05:15:00", "end": "2012-01-01T06:40:00"})

        assert data["success"] is True
        assert data["total_hours"] == 2.0
        assert data["allocations"] == [
            {"day_ordinal": 0, "period": "dawn", "hours": 1.0},
            {"day_ordinal": 0, "period": "morning", "hours": 1.0},
        ]

    def test_apportion_blitz_invalid_interval(self):
        """Test an end before the start comes back as a formatted error"""
        data = _call("apportion_blitz", {"start": "2012-01-01T08:00:00", "end": "2012-01-01T07:00:00"})

        assert data["success"] is False
        assert data["error_type"] == "InvalidRecordError"
        assert data["tool"] == "apportion_blitz"
        assert "report" in data["related_commands"]

    def test_apportion_blitz_unparseable_time(self):
        """Test a malformed timestamp is an InvalidRecordError"""
        data = _call("apportion_blitz", {"start": "yesterday", "end": "2012-01-01T07:00:00"})

        assert data["error_type"] == "InvalidRecordError"

    def test_compute_effects(self):
        """Test the one-hour effect of (-0.281, 0.046)"""
        data = _call("compute_effects", {"delta": -0.281, "theta": 0.046, "rho": -0.0529, "avg_neighbors": 17.1})

        assert data["success"] is True
        assert data["direct_pct"] == pytest.approx(pct_effect(-0.281, 0.046))
        assert data["spatial_pct"] == pytest.approx(-0.309, abs=0.01)
        assert data["optimal_hours"] == pytest.approx(3.05, abs=0.02)
        assert data["summary"].startswith("Effects summary")

    def test_compute_effects_with_counterfactual(self):
        """Test effects overrides enable the counterfactual and money summary"""
        data = _call(
            "compute_effects",
            {
                "delta": -0.281,
                "theta": 0.046,
                "lags": {"7": -0.05},
                "effects": {"effect_fraction": -0.3462, "avg_treated_outcome": 0.0197, "treated_cell_periods": 6298},
            },
        )

        assert data["counterfactual"]["prevented_crimes"] == pytest.approx(65.5, abs=0.5)
        assert data["money"]["cost"]["value"]["amount"] == "4500000.00"
        assert "7" in data["lag_pcts"]

    def test_compute_effects_bad_override(self):
        """Test an unknown effects key is a configuration error"""
        data = _call("compute_effects", {"delta": -0.2, "effects": {"salary": 1}})

        assert data["success"] is False
        assert data["error_code"] == "config_invalid"

    def test_health_status(self):
        """Test health_status returns the health document"""
        data = _call("health_status", {})

        assert data["success"] is True
        assert data["status"] in ("healthy", "degraded")
        assert "metrics" in data

    def test_build_grid(self, grid_config_file):
        """Test build_grid tessellates the configured boundary"""
        data = _call("build_grid", {"config_path": str(grid_config_file)})

        assert data["success"] is True
        assert data["n_cells"] == 30
        assert data["cells_csv"].endswith("cells.csv")
        assert data["next_steps"]

    def test_build_grid_output_override(self, grid_config_file, tmp_path):
        """Test output_dir overrides the configured output directory"""
        data = _call("build_grid", {"config_path": str(grid_config_file), "output_dir": str(tmp_path / "other")})

        assert (tmp_path / "other" / "cells.csv").is_file()
        assert data["success"] is True

    @patch("blitz_eval.server.tool_handlers.get_default_config_path", return_value=None)
    def test_missing_config_path(self, _mock_path):
        """Test tools that need a configuration say so"""
        data = _call("build_grid", {})

        assert data["success"] is False
        assert data["error_type"] == "ConfigurationError"

    def test_run_pipeline_unknown_stage(self, grid_config_file):
        """Test an unknown stage is rejected before anything runs"""
        data = _call("run_pipeline", {"config_path": str(grid_config_file), "stage": "plots"})

        assert data["success"] is False
        assert "Unknown stage" in data["error"]

    def test_simulate_dataset_invalid_threads(self, sim_config_file):
        """Test a thread count below one is rejected"""
        data = _call("simulate_dataset", {"config_path": str(sim_config_file), "threads": 0})

        assert data["success"] is False
        assert data["error_type"] == "ConfigurationError"

    def test_simulate_then_run_pipeline(self, sim_config_file):
        """Test the generated configuration drives a full pipeline run"""
        simulated = _call("simulate_dataset", {"config_path": str(sim_config_file)})
        assert simulated["success"] is True

        data = _call("run_pipeline", {"config_path": simulated["config"], "stage": "effects"})

        assert data["success"] is True
        assert data["stages"]["effects"] == "ok"
        assert data["effects"]["weights"] == "idw_1000m"

    def test_wald_test_from_fit(self, tmp_path):
        """Test a joint test read from a saved fit document"""
        document = {
            "family": "poisson",
            "outcome": "crime",
            "regressors": ["blitz", "lag_blitz_1", "lag_blitz_2"],
            "fe_dims": ["group_a", "group_b"],
            "coefficients": {"blitz": -0.3, "lag_blitz_1": 1.0, "lag_blitz_2": 2.0},
            "vcov": {"cluster": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]},
            "loglik": -10.0,
            "bic": 30.0,
            "n_obs_used": 100,
            "run_hash": "abc123",
        }
        path = tmp_path / "fit_main.json"
        path.write_text(json.dumps(document))

        data = _call("wald_test_from_fit", {"fit_path": str(path), "coefficients": ["lag_blitz_1", "lag_blitz_2"]})

        assert data["success"] is True
        assert data["statistic"] == pytest.approx(5.0)
        assert data["dof"] == 2
        assert data["run_hash"] == "abc123"

    def test_wald_test_missing_fit(self, tmp_path):
        """Test a missing fit file is an InputFileError"""
        data = _call("wald_test_from_fit", {"fit_path": str(tmp_path / "fit_none.json"), "coefficients": ["blitz"]})

        assert data["success"] is False
        assert data["error_type"] == "InputFileError"
