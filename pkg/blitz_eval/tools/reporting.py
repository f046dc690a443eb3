"""
Reporting Tools: fit files and regression tables

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from blitz_eval.exceptions import BlitzEvalError, InputFileError
from blitz_eval.tools.estimator import FitResult
from blitz_eval.tools.inference import WaldResult, significance_stars, wald_joint_test
from blitz_eval.utils.logger import get_logger
from blitz_eval.utils.manifest import write_json

logger = get_logger()

FIT_PREFIX = "fit_"
SUMMARY_ROWS = ("wald_lags_p", "wald_spatial_lags_p", "loglik", "bic", "n_obs", "dropped_groups", "converged")


def lag_blocks(names: Sequence[str], treatment: str = "blitz") -> Dict[str, List[str]]:
    """Coefficient blocks tested jointly: temporal lags and lags of the spatial lag"""
    blocks = {
        "lags": [n for n in names if n.startswith(f"lag_{treatment}_")],
        "spatial_lags": [n for n in names if n.startswith(f"lag_w_{treatment}_")],
    }
    return {k: v for k, v in blocks.items() if v}


def wald_tests(fit: FitResult) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Joint lag-block tests under every covariance of the fit"""
    results: Dict[str, Dict[str, Dict[str, float]]] = {}
    for block, names in lag_blocks(fit.names).items():
        for label in fit.vcovs:
            try:
                test: WaldResult = wald_joint_test(fit, names, label)
            except BlitzEvalError as e:
                logger.warning(f"Wald test of {block} under {label} failed: {e.message}")
                continue
            results.setdefault(block, {})[label] = test.to_dict()
    return results


def fit_to_json(
    fit: FitResult, run_hash: str, label: str, context: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    data = fit.to_dict()
    data["run_hash"] = run_hash
    data["label"] = label
    data["wald_tests"] = wald_tests(fit)
    data["context"] = context or {}
    return data


def write_fit_json(
    fit: FitResult,
    directory: Union[str, Path],
    run_hash: str,
    label: str,
    context: Optional[Dict[str, Any]] = None,
) -> Tuple[Path, Dict[str, Any]]:
    """Write fit_<label>.json into a directory; returns the path and the document"""
    document = fit_to_json(fit, run_hash, label, context)
    return write_json(Path(directory) / f"{FIT_PREFIX}{label}.json", document), document


def load_fit_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InputFileError(f"Fit file not found: {path}", path=str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InputFileError(f"Fit file is not valid JSON: {e}", path=str(path))


def load_fit_dir(directory: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    """Fit JSONs of a run directory by label, in file-name order"""
    directory = Path(directory)
    files = sorted(directory.glob(f"{FIT_PREFIX}*.json"))
    if not files:
        raise InputFileError(f"No fit files in {directory}", path=str(directory))
    fits = {}
    for path in files:
        data = load_fit_json(path)
        fits[data.get("label", path.stem[len(FIT_PREFIX) :])] = data
    return fits


def _conley_label(data: Dict[str, Any]) -> Optional[str]:
    labels = [k for k in data.get("standard_errors", {}) if k.startswith("conley")]
    return labels[0] if labels else None


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def regression_table(fits: Dict[str, Dict[str, Any]], star_vcov: str = "cluster") -> List[List[str]]:
    """
    Rows of the regression table: one row per coefficient, then summary rows.

    Columns per fit: coefficient, cluster SE, Conley SE, stars. Every
    coefficient is listed; stars mark p < 0.01 / 0.05 / 0.1 under star_vcov.
    """
    header = ["term"]
    for label in fits:
        header.extend([f"{label}:coef", f"{label}:se_cluster", f"{label}:se_conley", f"{label}:stars"])
    terms: List[str] = []
    for data in fits.values():
        for name in data["regressors"]:
            if name not in terms:
                terms.append(name)

    rows = [header]
    for term in terms:
        row = [term]
        for data in fits.values():
            if term not in data["coefficients"]:
                row.extend(["", "", "", ""])
                continue
            se = data.get("standard_errors", {})
            conley = _conley_label(data)
            p = data.get("p_values", {}).get(star_vcov, {}).get(term)
            row.extend(
                [
                    _fmt(data["coefficients"][term]),
                    _fmt(se.get("cluster", {}).get(term)),
                    _fmt(se[conley].get(term)) if conley else "",
                    significance_stars(p),
                ]
            )
        rows.append(row)

    for summary in SUMMARY_ROWS:
        row = [summary]
        for data in fits.values():
            if summary.startswith("wald_"):
                block = "lags" if summary == "wald_lags_p" else "spatial_lags"
                test = data.get("wald_tests", {}).get(block, {}).get(star_vcov)
                value = _fmt(test["p_value"]) if test else ""
            elif summary == "n_obs":
                value = str(data["n_obs_used"])
            elif summary == "dropped_groups":
                value = str(data.get("dropped_groups", {}).get("count", 0))
            elif summary == "converged":
                value = str(bool(data.get("convergence", {}).get("converged", True))).lower()
            else:
                value = _fmt(data.get(summary))
            row.extend([value, "", "", ""])
        rows.append(row)
    return rows


def write_regression_table(
    fits: Dict[str, Dict[str, Any]], path: Union[str, Path], star_vcov: str = "cluster"
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(regression_table(fits, star_vcov))
    logger.info(f"Regression table with {len(fits)} column(s): {path}")
    return path
