"""
Tool Definitions for MCP Server

Contains all Tool schema definitions for the MCP server.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from typing import List

from mcp.types import Tool

_CONFIG_PATH = {
    "type": "string",
    "description": "Run configuration JSON (default: BLITZ_EVAL_CONFIG)",
}
_OUTPUT_DIR = {
    "type": "string",
    "description": "Override paths.output_dir of the configuration",
}


def get_all_tools() -> List[Tool]:
    """Get all tool definitions for the MCP server"""
    return [
        Tool(
            name="build_grid",
            description=(
                "Tessellate the study boundary of a run configuration into hexagonal cells "
                "and write cells.csv. Returns the cell count, mean cell area and output file."
            ),
            inputSchema={
                "type": "object",
                "properties": {"config_path": _CONFIG_PATH, "output_dir": _OUTPUT_DIR},
                "required": [],
            },
        ),
        Tool(
            name="apportion_blitz",
            description=(
                "Split one blitz into hours per 6-hour period on the 30-minute wall-clock grid. "
                "Every half-hour slot the blitz touches counts in full."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "start": {"type": "string", "description": "ISO 8601 start time"},
                    "end": {"type": "string", "description": "ISO 8601 end time"},
                    "study_start": {
                        "type": "string",
                        "description": "ISO date of day 0 (default: the blitz's start date)",
                    },
                },
                "required": ["start", "end"],
            },
        ),
        Tool(
            name="simulate_dataset",
            description=(
                "Generate synthetic crimes, blitzes, boundary and planted truth from the 'sim' "
                "block of a run configuration, plus a config.json pointing the pipeline at them."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "config_path": _CONFIG_PATH,
                    "output_dir": _OUTPUT_DIR,
                    "threads": {
                        "type": "integer",
                        "description": "Worker threads (default: BLITZ_EVAL_THREADS or 1)",
                        "minimum": 1,
                    },
                },
                "required": [],
            },
        ),
        Tool(
            name="run_pipeline",
            description=(
                "Run the evaluation pipeline (grid, ingest, panel, weights, fit, effects) up to "
                "a stage and return the run manifest summary."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "config_path": _CONFIG_PATH,
                    "output_dir": _OUTPUT_DIR,
                    "stage": {
                        "type": "string",
                        "description": "Last stage to run (default: effects)",
                        "enum": ["grid", "ingest", "panel", "weights", "fit", "effects"],
                        "default": "effects",
                    },
                    "threads": {
                        "type": "integer",
                        "description": "Worker threads (default: BLITZ_EVAL_THREADS or 1)",
                        "minimum": 1,
                    },
                },
                "required": [],
            },
        ),
        Tool(
            name="compute_effects",
            description=(
                "Turn treatment coefficients into percent effects, the crime-minimizing "
                "duration, and (with treated-period inputs) prevented crimes and cost-benefit."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "delta": {"type": "number", "description": "Linear blitz-hours coefficient"},
                    "theta": {
                        "type": "number",
                        "description": "Squared blitz-hours coefficient (default: 0)",
                        "default": 0.0,
                    },
                    "rho": {"type": "number", "description": "Spatial-lag coefficient"},
                    "avg_neighbors": {
                        "type": "number",
                        "description": "Mean neighbour count of the weight matrix (required with rho)",
                        "exclusiveMinimum": 0,
                    },
                    "lags": {
                        "type": "object",
                        "description": "Temporal-lag coefficients by lag index, e.g. {\"7\": -0.05}",
                        "additionalProperties": {"type": "number"},
                    },
                    "effects": {
                        "type": "object",
                        "description": (
                            "Effects configuration overrides (treated_cell_periods, "
                            "avg_treated_outcome, avg_treated_hours, murder_share, "
                            "officers_per_blitz, salary_per_year, ...)"
                        ),
                    },
                },
                "required": ["delta"],
            },
        ),
        Tool(
            name="wald_test_from_fit",
            description=(
                "Joint Wald test that a set of coefficients is zero, from a fit JSON written "
                "by the pipeline. Returns statistic, degrees of freedom and p-value."
            ),
            inputSchema={
                "type": "object",
                "properties": {
                    "fit_path": {"type": "string", "description": "Path to a fit_<label>.json file"},
                    "coefficients": {
                        "type": "array",
                        "items": {"type": "string"},
                        "description": "Coefficient names to test jointly",
                        "minItems": 1,
                    },
                    "vcov": {
                        "type": "string",
                        "description": "Covariance label, 'cluster' or 'conley_<cutoff>m' (default: cluster)",
                        "default": "cluster",
                    },
                },
                "required": ["fit_path", "coefficients"],
            },
        ),
        Tool(
            name="health_status",
            description="Server uptime, configuration validity and tool-call metrics",
            inputSchema={"type": "object", "properties": {}, "required": []},
        ),
    ]
