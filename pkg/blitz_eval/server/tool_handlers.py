"""
Tool Handlers for MCP Server

Contains all tool execution handlers. This module is separated from app.py
to keep the protocol plumbing apart from the engine calls.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
import time
from datetime import date, datetime
from pathlib import Path
from typing import Any, Dict, List

from mcp.types import TextContent
from pydantic import ValidationError

from blitz_eval.config import (
    EffectsConfig,
    RunConfig,
    get_default_config_path,
    get_default_threads,
    load_run_config,
)
from blitz_eval.exceptions import ConfigurationError, InvalidRecordError
from blitz_eval.resources.health import get_health_status, record_tool_call
from blitz_eval.tools import effects as effects_tools
from blitz_eval.tools.estimator import FitResult
from blitz_eval.tools.ingest import BlitzRecord, apportion_blitz_hours
from blitz_eval.tools.inference import wald_joint_test
from blitz_eval.tools.pipeline import STAGES, Pipeline, simulate_run
from blitz_eval.tools.reporting import load_fit_json
from blitz_eval.tools.spatial import GeoPoint
from blitz_eval.utils.error_helper import format_error_response, format_tool_response
from blitz_eval.utils.logger import get_logger, log_tool_result

logger = get_logger()

# apportion_blitz needs a record; the location plays no part in the split
_ORIGIN = GeoPoint(lat=0.0, lon=0.0)


def _record_tool_result(name: str, result: Dict[str, Any], request_id: str, start_time: float):
    """Helper to record tool result and metrics"""
    success = result.get("success", False)
    error = result.get("error")
    duration = time.time() - start_time
    log_tool_result(name, success, request_id, error)
    record_tool_call(name, success, duration)


def _text(result: Dict[str, Any]) -> List[TextContent]:
    return [TextContent(type="text", text=json.dumps(result, indent=2, default=str))]


def _load_config(arguments: Dict[str, Any]) -> RunConfig:
    path = arguments.get("config_path") or get_default_config_path()
    if path is None:
        raise ConfigurationError("config_path is required (or set BLITZ_EVAL_CONFIG)")
    config = load_run_config(Path(path))
    if arguments.get("output_dir"):
        config = config.with_output_dir(Path(arguments["output_dir"]))
    return config


def _threads(arguments: Dict[str, Any]) -> int:
    threads = arguments.get("threads")
    if threads is None:
        return get_default_threads()
    if int(threads) < 1:
        raise ConfigurationError(f"threads must be >= 1, got {threads}")
    return int(threads)


def build_grid(arguments: Dict[str, Any]) -> Dict[str, Any]:
    config = _load_config(arguments)
    pipeline = Pipeline(config, command="build_grid")
    manifest = pipeline.run("grid")
    summary = pipeline.grid().summary()
    return {
        "success": True,
        **summary,
        "cells_csv": str(pipeline.output_dir / "cells.csv"),
        "run_hash": manifest.run_hash,
    }


def apportion_blitz(arguments: Dict[str, Any]) -> Dict[str, Any]:
    try:
        start = datetime.fromisoformat(arguments["start"])
        end = datetime.fromisoformat(arguments["end"])
        study_start = (
            date.fromisoformat(arguments["study_start"]) if arguments.get("study_start") else None
        )
    except ValueError as e:
        raise InvalidRecordError(f"Unparseable time: {e}")
    record = BlitzRecord(location=_ORIGIN, start=start, end=end)
    allocations = apportion_blitz_hours(record, study_start)
    return {
        "success": True,
        "duration_hours": record.duration_hours,
        "total_hours": sum(hours for _, hours in allocations),
        "allocations": [
            {
                "day_ordinal": index.day_ordinal,
                "period": index.period.name.lower(),
                "hours": hours,
            }
            for index, hours in allocations
        ],
    }


def simulate_dataset(arguments: Dict[str, Any]) -> Dict[str, Any]:
    config = _load_config(arguments)
    manifest = simulate_run(config, threads=_threads(arguments), command="simulate_dataset")
    return {
        "success": manifest.succeeded,
        **manifest.get_summary(),
        "config": str(Path(config.paths.output_dir) / "config.json"),
    }


def run_pipeline(arguments: Dict[str, Any]) -> Dict[str, Any]:
    stage = arguments.get("stage", "effects")
    if stage not in STAGES:
        raise ConfigurationError(f"Unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    config = _load_config(arguments)
    pipeline = Pipeline(config, threads=_threads(arguments), command="run_pipeline")
    manifest = pipeline.run(stage)
    result = {"success": manifest.succeeded, **manifest.get_summary()}
    if stage == "effects":
        result["effects"] = pipeline.effects().to_dict()
    return result


def compute_effects(arguments: Dict[str, Any]) -> Dict[str, Any]:
    try:
        config = EffectsConfig.model_validate(arguments.get("effects") or {})
    except ValidationError as e:
        raise ConfigurationError(f"Invalid effects overrides: {e.error_count()} error(s)", details={"errors": str(e)})
    coefficients = {"blitz": float(arguments["delta"]), "blitz_sq": float(arguments.get("theta", 0.0))}
    if arguments.get("rho") is not None:
        coefficients["w_blitz"] = float(arguments["rho"])
    for j, gamma in (arguments.get("lags") or {}).items():
        coefficients[f"lag_blitz_{int(j)}"] = float(gamma)
    report = effects_tools.build_effects_report(
        coefficients, config, avg_neighbors=arguments.get("avg_neighbors")
    )
    return {"success": True, **report.to_dict(), "summary": report.render_text()}


def wald_test_from_fit(arguments: Dict[str, Any]) -> Dict[str, Any]:
    document = load_fit_json(arguments["fit_path"])
    fit = FitResult.from_dict(document)
    subset = list(arguments["coefficients"])
    vcov = arguments.get("vcov", "cluster")
    test = wald_joint_test(fit, subset, vcov)
    return {
        "success": True,
        "coefficients": subset,
        "vcov": vcov,
        **test.to_dict(),
        "run_hash": document.get("run_hash"),
    }


HANDLERS = {
    "build_grid": build_grid,
    "apportion_blitz": apportion_blitz,
    "simulate_dataset": simulate_dataset,
    "run_pipeline": run_pipeline,
    "compute_effects": compute_effects,
    "wald_test_from_fit": wald_test_from_fit,
}

REQUIRED_ARGUMENTS = {
    "apportion_blitz": ("start", "end"),
    "compute_effects": ("delta",),
    "wald_test_from_fit": ("fit_path", "coefficients"),
}


def handle_tool(
    name: str, arguments: Dict[str, Any], request_id: str, start_time: float
) -> List[TextContent]:
    """
    Handle tool execution. This function routes tool calls to appropriate handlers.

    Args:
        name: Tool name
        arguments: Tool arguments
        request_id: Request ID for logging
        start_time: Start time for metrics

    Returns:
        List of TextContent responses
    """
    arguments = arguments or {}
    try:
        if name == "health_status":
            result = {"success": True, **get_health_status()}
            _record_tool_result(name, result, request_id, start_time)
            return _text(result)

        handler = HANDLERS.get(name)
        if handler is None:
            error_msg = f"Unknown tool: {name}"
            logger.warning(f"[{request_id}] {error_msg}")
            log_tool_result(name, False, request_id, error_msg)
            record_tool_call(name, False, time.time() - start_time)
            return _text({"success": False, "error": error_msg})

        missing = [arg for arg in REQUIRED_ARGUMENTS.get(name, ()) if arguments.get(arg) in (None, "", [])]
        if missing:
            error_msg = f"{', '.join(missing)} required"
            logger.warning(f"[{request_id}] {error_msg}")
            log_tool_result(name, False, request_id, error_msg)
            record_tool_call(name, False, time.time() - start_time)
            return _text({"success": False, "error": error_msg})

        result = format_tool_response(handler(arguments), name)
        _record_tool_result(name, result, request_id, start_time)
        return _text(result)

    except Exception as e:
        # Format error with helpful context
        error_response = format_error_response(
            e, context={"tool_name": name, "arguments": arguments, "request_id": request_id}
        )
        error_response["tool"] = name
        error_response["request_id"] = request_id
        logger.error(f"[{request_id}] Tool execution failed: {e}", exc_info=True)
        record_tool_call(name, False, time.time() - start_time)
        return _text(error_response)
