"""
Custom Exceptions for blitz-eval

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from typing import Optional


class BlitzEvalError(Exception):
    """Base exception for all blitz-eval errors"""

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[dict] = None,
        suggestions: Optional[list] = None,
        fixes: Optional[list] = None,
        related_commands: Optional[list] = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        self.suggestions = suggestions or []
        self.fixes = fixes or []
        self.related_commands = related_commands or []

    def to_dict(self) -> dict:
        """Convert exception to dictionary for JSON serialization with helpful context"""
        result = {
            "error": self.message,
            "error_type": type(self).__name__,
            "error_code": self.error_code,
            "details": self.details,
        }

        if self.suggestions:
            result["suggestions"] = self.suggestions
        if self.fixes:
            result["fixes"] = self.fixes
        if self.related_commands:
            result["related_commands"] = self.related_commands

        return result


class ConfigurationError(BlitzEvalError):
    """Configuration-related errors"""

    def __init__(self, message: str, path: Optional[str] = None, **kwargs):
        kwargs.setdefault("error_code", "config_invalid")
        kwargs.setdefault(
            "suggestions",
            [
                "Check the run configuration is valid JSON",
                "Unknown keys are rejected; compare against the documented sections",
            ],
        )
        kwargs.setdefault("related_commands", ["simulate", "pipeline"])
        super().__init__(message, **kwargs)
        if path:
            self.details["path"] = path


class InputFileError(BlitzEvalError):
    """Input file missing or unreadable"""

    def __init__(self, message: str, path: Optional[str] = None, **kwargs):
        kwargs.setdefault("error_code", "input_unreadable")
        kwargs.setdefault(
            "fixes",
            [
                "Check the path in the 'paths' section of the run configuration",
                "Generate synthetic inputs with 'blitz-eval simulate'",
            ],
        )
        super().__init__(message, **kwargs)
        if path:
            self.details["path"] = path


class InvalidBoundaryError(BlitzEvalError):
    """Boundary polygon is degenerate or self-intersecting"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "invalid_boundary")
        kwargs.setdefault(
            "suggestions",
            [
                "Boundary must be a simple polygon with nonzero area",
                "GeoJSON coordinates are (lon, lat) pairs",
            ],
        )
        super().__init__(message, **kwargs)


class InvalidParameterError(BlitzEvalError, ValueError):
    """A numeric parameter is outside its valid range"""

    def __init__(self, message: str, parameter: Optional[str] = None, **kwargs):
        kwargs.setdefault("error_code", "invalid_parameter")
        super().__init__(message, **kwargs)
        self.parameter = parameter
        if parameter:
            self.details["parameter"] = parameter


class DimensionError(BlitzEvalError, ValueError):
    """Array length does not match the grid or panel"""

    def __init__(self, message: str, expected: Optional[int] = None, got: Optional[int] = None, **kwargs):
        kwargs.setdefault("error_code", "dimension_mismatch")
        super().__init__(message, **kwargs)
        if expected is not None:
            self.details["expected"] = expected
        if got is not None:
            self.details["got"] = got


class InvalidRecordError(BlitzEvalError, ValueError):
    """A crime or blitz record is malformed"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "invalid_record")
        super().__init__(message, **kwargs)


class OutOfWindowError(BlitzEvalError, ValueError):
    """Timestamp lies outside the study window"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "outside_window")
        super().__init__(message, **kwargs)


class ConsistencyError(BlitzEvalError):
    """Inputs disagree with each other (indices, centroids, sizes)"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "inconsistent")
        super().__init__(message, **kwargs)


class ColumnNotFoundError(BlitzEvalError, KeyError):
    """Unknown panel column"""

    def __init__(self, column: str, available: Optional[list] = None, **kwargs):
        kwargs.setdefault("error_code", "unknown_column")
        super().__init__(f"Unknown panel column: {column!r}", **kwargs)
        self.column = column
        self.details["column"] = column
        if available is not None:
            self.details["available"] = sorted(available)

    def __str__(self) -> str:
        return self.message


class SingularMatrixError(BlitzEvalError):
    """Design or covariance matrix is singular"""

    def __init__(self, message: str, column: Optional[str] = None, **kwargs):
        kwargs.setdefault("error_code", "singular_matrix")
        kwargs.setdefault(
            "suggestions",
            [
                "A regressor may be constant within the fixed-effect groups",
                "Remove duplicated or collinear columns from the model regressors",
            ],
        )
        super().__init__(message, **kwargs)
        self.column = column
        if column:
            self.details["column"] = column


class DegenerateVcovError(BlitzEvalError):
    """Covariance cannot be estimated (e.g. a single cluster)"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "degenerate_vcov")
        super().__init__(message, **kwargs)


class NoInteriorMinimumError(BlitzEvalError):
    """Quadratic dose response has no interior minimum"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "no_interior_minimum")
        super().__init__(message, **kwargs)


class EstimationError(BlitzEvalError):
    """Model cannot be estimated on the available observations"""

    def __init__(self, message: str, **kwargs):
        kwargs.setdefault("error_code", "not_estimable")
        kwargs.setdefault(
            "suggestions",
            [
                "Every fixed-effect group may have a zero outcome sum",
                "Check the crimes input is non-empty and inside the study window",
            ],
        )
        kwargs.setdefault("related_commands", ["ingest", "panel"])
        super().__init__(message, **kwargs)


class StageError(BlitzEvalError):
    """A pipeline stage failed"""

    def __init__(self, message: str, stage: str, **kwargs):
        kwargs.setdefault("error_code", "stage_failed")
        super().__init__(message, **kwargs)
        self.stage = stage
        self.details["stage"] = stage
