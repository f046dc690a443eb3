"""
Structured Logging for blitz-eval

One process-wide logger. Console output goes to stderr so JSON printed by the
CLI on stdout stays parseable; ``engine.log`` keeps the DEBUG trace (IRLS
iterations, demeaning sweeps) and ``errors.log`` only failures.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from blitz_eval.config import get_logs_dir, log_to_file_enabled

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
ENGINE_LOG = "engine.log"
ERROR_LOG = "errors.log"

_logger: Optional[logging.Logger] = None


def _handler(handler: logging.Handler, level: int, formatter: logging.Formatter) -> logging.Handler:
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def _file_handlers(log_dir: Path, formatter: logging.Formatter):
    log_dir.mkdir(parents=True, exist_ok=True)
    return [
        _handler(logging.FileHandler(log_dir / ENGINE_LOG), logging.DEBUG, formatter),
        _handler(logging.FileHandler(log_dir / ERROR_LOG), logging.ERROR, formatter),
    ]


def setup_logger(
    name: str = "blitz_eval",
    level: int = logging.INFO,
    log_to_file: Optional[bool] = None,
    log_to_console: bool = True,
) -> logging.Logger:
    """
    Configure the engine logger once; later calls return the same instance.

    Args:
        name: Logger name
        level: Logger level
        log_to_file: Write engine.log/errors.log (default from BLITZ_EVAL_LOG_TO_FILE)
        log_to_console: Write INFO+ to stderr

    Returns:
        Configured logger instance
    """
    global _logger

    if _logger is not None:
        return _logger

    if log_to_file is None:
        log_to_file = log_to_file_enabled()

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.handlers.clear()
    logger.propagate = False

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    if log_to_file:
        try:
            for handler in _file_handlers(get_logs_dir(), formatter):
                logger.addHandler(handler)
        except OSError as e:
            print(f"Warning: file logging disabled ({e})", file=sys.stderr)

    if log_to_console:
        logger.addHandler(_handler(logging.StreamHandler(sys.stderr), logging.INFO, formatter))

    _logger = logger
    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Engine logger, or a named child logger"""
    if _logger is None:
        return setup_logger()
    return logging.getLogger(name) if name else _logger


def set_log_level(level: int):
    """
    Set the logger and console level (``--verbose`` passes DEBUG).

    errors.log stays at ERROR; engine.log never rises above DEBUG.
    """
    logger = get_logger()
    logger.setLevel(level)
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler):
            if not handler.baseFilename.endswith(ERROR_LOG):
                handler.setLevel(min(level, logging.DEBUG))
        else:
            handler.setLevel(level)


def _log_outcome(kind: str, name: str, success: bool, suffix: str = "", error: Optional[str] = None):
    logger = get_logger()
    msg = f"{kind} result: {name} - {'SUCCESS' if success else 'FAILED'}{suffix}"
    if success:
        logger.info(msg)
        return
    logger.warning(msg)
    if error:
        logger.error(f"Error: {error}")


def log_stage_start(stage: str, **context: Any):
    """Log a pipeline stage starting; context goes to DEBUG"""
    logger = get_logger()
    logger.info(f"Stage start: {stage}")
    if context:
        logger.debug(f"Stage context: {context}")


def log_stage_result(
    stage: str,
    success: bool,
    counts: Optional[Dict[str, Any]] = None,
    error: Optional[str] = None,
):
    """
    Log how a pipeline stage ended.

    Args:
        stage: Stage name (grid, ingest, panel, weights, fit, effects, simulate, report)
        success: Whether the stage completed
        counts: Row counts and other summary numbers, appended as key=value
        error: Error message if failed
    """
    suffix = " " + ", ".join(f"{k}={v}" for k, v in counts.items()) if counts else ""
    _log_outcome("Stage", stage, success, suffix, error)


def log_tool_call(tool_name: str, arguments: dict, request_id: Optional[str] = None):
    """Log an incoming tool call; arguments go to DEBUG"""
    logger = get_logger()
    logger.info(f"Tool call: {tool_name}" + (f" [request_id={request_id}]" if request_id else ""))
    logger.debug(f"Arguments: {arguments}")


def log_tool_result(
    tool_name: str, success: bool, request_id: Optional[str] = None, error: Optional[str] = None
):
    """Log how a tool call ended"""
    suffix = f" [request_id={request_id}]" if request_id else ""
    _log_outcome("Tool", tool_name, success, suffix, error)
