"""
Error Helper Utilities

Turns engine exceptions into actionable responses for the CLI and the tool
server: what went wrong, what to try, and which commands help.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from typing import Any, Dict, List, Optional

from blitz_eval.exceptions import BlitzEvalError


def format_error_response(
    error: Exception, context: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """
    Format an error into a comprehensive response with suggestions and fixes.

    Args:
        error: The exception that occurred
        context: Additional context about the operation

    Returns:
        Dictionary with error details, suggestions, fixes, and related commands
    """
    if isinstance(error, BlitzEvalError):
        response = error.to_dict()
    else:
        response = {"error": str(error), "error_type": type(error).__name__, "details": {}}

    response["success"] = False

    if context:
        response["context"] = context

    if not response.get("suggestions"):
        response["suggestions"] = get_general_suggestions(error, context)

    if not response.get("related_commands"):
        response["related_commands"] = get_related_commands(error, context)

    return response


def get_general_suggestions(
    error: Exception, context: Optional[Dict[str, Any]] = None
) -> List[str]:
    """Get general troubleshooting suggestions based on error type"""
    suggestions = []

    error_msg = str(error).lower()

    if "not found" in error_msg or "no such file" in error_msg:
        suggestions.extend(
            [
                "Check the paths section of the run configuration",
                "Relative paths resolve against the configuration file's directory",
            ]
        )

    if "config" in error_msg or "missing" in error_msg:
        suggestions.extend(
            [
                "Check the configuration file is valid JSON with known keys only",
                "Generate a working example with 'blitz-eval simulate'",
            ]
        )

    if "singular" in error_msg or "collinear" in error_msg:
        suggestions.extend(
            [
                "Drop regressors that do not vary within fixed-effect groups",
                "Check interaction columns are not duplicates of the treatment column",
            ]
        )

    if "dimension" in error_msg or "length" in error_msg or "grid" in error_msg:
        suggestions.append("Rebuild weights and panel from the same grid")

    return (
        suggestions
        if suggestions
        else [
            "Re-run with --verbose for DEBUG logging",
            "Check the engine log for detailed error information",
        ]
    )


def get_related_commands(
    error: Exception, context: Optional[Dict[str, Any]] = None
) -> List[str]:
    """Get list of commands that might help resolve the issue"""
    commands = ["report"]

    error_msg = str(error).lower()

    if context:
        stage = context.get("stage", "") or context.get("tool_name", "")
        if stage in ("grid", "weights", "build_grid"):
            commands.append("grid")
        if stage in ("ingest", "panel", "apportion_blitz"):
            commands.extend(["ingest", "panel"])
        if stage in ("fit", "effects", "run_pipeline"):
            commands.extend(["fit", "effects"])

    if "sim" in error_msg:
        commands.append("simulate")

    return sorted(set(commands))


def format_tool_response(result: Dict[str, Any], tool_name: str) -> Dict[str, Any]:
    """
    Add next-step hints to a successful tool result.

    Args:
        result: Tool result dictionary
        tool_name: Tool that produced it

    Returns:
        Result with a ``next_steps`` list where one applies
    """
    if not result.get("success"):
        return result

    next_steps = {
        "build_grid": ["run_pipeline with the same configuration"],
        "simulate_dataset": ["run_pipeline on the generated configuration"],
        "run_pipeline": ["compute_effects for alternative cost assumptions"],
    }.get(tool_name)
    if next_steps:
        result = dict(result)
        result["next_steps"] = next_steps
    return result
