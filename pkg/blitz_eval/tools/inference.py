"""
Inference Tools: robust covariance, Wald tests and information criteria

Sandwich estimators built from the per-observation scores and bread stored on
a fit: cell-clustered, and Conley spatial HAC with a uniform distance kernel.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import math
from typing import TYPE_CHECKING, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse, stats

from blitz_eval.exceptions import (
    ColumnNotFoundError,
    ConsistencyError,
    DegenerateVcovError,
    DimensionError,
    EstimationError,
    InvalidParameterError,
    SingularMatrixError,
)
from blitz_eval.tools.fixed_effects import factorize
from blitz_eval.tools.spatial import pairs_within
from blitz_eval.utils.logger import get_logger

if TYPE_CHECKING:
    from blitz_eval.tools.estimator import FitResult

logger = get_logger()

PSD_TOLERANCE = 1e-12
SIGNIFICANCE_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))
CONLEY_TIME_BLOCK = 256
# smallest eigenvalue, relative to the largest, a Wald covariance may have
WALD_RCOND = 1e-12


class WaldResult(NamedTuple):
    statistic: float
    dof: int
    p_value: float

    def to_dict(self) -> Dict[str, float]:
        return {"statistic": self.statistic, "dof": self.dof, "p_value": self.p_value}


def _require_scores(fit: "FitResult") -> Tuple[np.ndarray, np.ndarray]:
    if fit.scores is None or fit.bread is None:
        raise EstimationError("Fit carries no scores; robust covariance needs the fitted data")
    return fit.scores, fit.bread


def _group_sums(codes: np.ndarray, n_groups: int, scores: np.ndarray) -> np.ndarray:
    indicator = sparse.csr_matrix(
        (np.ones(len(codes)), (codes, np.arange(len(codes)))), shape=(n_groups, len(codes))
    )
    return np.asarray(indicator @ scores)


def sandwich(bread: np.ndarray, meat: np.ndarray, factor: float = 1.0) -> np.ndarray:
    """factor * B M B, symmetrized"""
    v = factor * (bread @ meat @ bread)
    return 0.5 * (v + v.T)


def psd_repair(v: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Clip negative eigenvalues to zero.

    Returns:
        (matrix, repaired) where repaired is True when any eigenvalue was
        below -1e-12 times the largest magnitude
    """
    if v.size == 0:
        return v, False
    eigval, eigvec = np.linalg.eigh(v)
    scale = max(float(np.max(np.abs(eigval))), 1e-300)
    if eigval.min() >= -PSD_TOLERANCE * scale:
        return v, False
    clipped = np.clip(eigval, 0.0, None)
    repaired = (eigvec * clipped) @ eigvec.T
    return 0.5 * (repaired + repaired.T), True


def cluster_meat(scores: np.ndarray, cluster_ids: np.ndarray) -> Tuple[np.ndarray, int]:
    """Sum over clusters of the outer product of cluster-summed scores"""
    codes, n_groups = factorize(cluster_ids)
    sums = _group_sums(codes, n_groups, scores)
    return sums.T @ sums, n_groups


def vcov_cluster(fit: "FitResult", cluster_ids: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Cluster-robust sandwich, G / (G - 1) * B (sum_g S_g S_g') B.

    Args:
        fit: Fitted model with stored scores and bread
        cluster_ids: One id per used observation (default: the cell of each row)

    Raises:
        DegenerateVcovError: fewer than two clusters
    """
    scores, bread = _require_scores(fit)
    ids = fit.cell if cluster_ids is None else np.asarray(cluster_ids)
    if len(ids) != scores.shape[0]:
        raise DimensionError("Cluster ids do not match observations", expected=scores.shape[0], got=len(ids))
    meat, n_groups = cluster_meat(scores, ids)
    if n_groups < 2:
        raise DegenerateVcovError(f"Cluster-robust covariance needs at least 2 clusters, got {n_groups}")
    return sandwich(bread, meat, n_groups / (n_groups - 1))


def conley_meat(
    scores: np.ndarray,
    cell: np.ndarray,
    time: np.ndarray,
    cell_lat: np.ndarray,
    cell_lon: np.ndarray,
    cutoff_m: float,
) -> Tuple[np.ndarray, int]:
    """
    Spatial HAC meat with a uniform kernel on centroid distance.

    meat = sum over cells of S_c S_c' (same cell, any time)
         + sum over times of sum_{a,b: d(a,b) <= cutoff} S_at S_bt'
         - sum over cell-times of S_ct S_ct' (counted by both terms)

    Returns:
        (meat, number of distinct cells)
    """
    n_loc = len(cell_lat)
    if len(cell) and (cell.min() < 0 or cell.max() >= n_loc):
        raise ConsistencyError("Observation references a cell without a centroid")
    if not (np.all(np.isfinite(cell_lat)) and np.all(np.isfinite(cell_lon))):
        raise ConsistencyError("Cell centroids contain missing values")

    k = scores.shape[1]
    cell_meat, n_cells_used = cluster_meat(scores, cell)

    time_codes, n_times = factorize(time)
    ct_codes, n_ct = factorize(time_codes.astype(np.int64) * n_loc + cell)
    ct_sums = _group_sums(ct_codes, n_ct, scores)
    ct_keys = np.unique(time_codes.astype(np.int64) * n_loc + cell)
    ct_time, ct_cell = ct_keys // n_loc, ct_keys % n_loc
    overlap = ct_sums.T @ ct_sums

    i, j, _ = pairs_within(cell_lat, cell_lon, cutoff_m)
    diag = np.arange(n_loc)
    rows, cols = np.concatenate([i, j, diag]), np.concatenate([j, i, diag])
    kernel = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_loc, n_loc))

    spatial = np.zeros((k, k))
    for t0 in range(0, n_times, CONLEY_TIME_BLOCK):
        t1 = min(t0 + CONLEY_TIME_BLOCK, n_times)
        sel = (ct_time >= t0) & (ct_time < t1)
        block = np.zeros((n_loc, (t1 - t0) * k))
        slot_cols = (ct_time[sel] - t0)[:, None] * k + np.arange(k)[None, :]
        block[ct_cell[sel][:, None], slot_cols] = ct_sums[sel]
        smoothed = kernel @ block
        spatial += np.einsum(
            "ctk,ctl->kl",
            block.reshape(n_loc, t1 - t0, k),
            np.asarray(smoothed).reshape(n_loc, t1 - t0, k),
        )
    return cell_meat + spatial - overlap, n_cells_used


def vcov_conley(
    fit: "FitResult",
    cutoff_m: float,
    cell_lat: Optional[np.ndarray] = None,
    cell_lon: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, bool]:
    """
    Conley spatial-HAC covariance.

    Uses the same G / (G - 1) factor as the cell-clustered estimator, so a
    cutoff below the closest centroid spacing reproduces it exactly.

    Returns:
        (matrix, psd_repaired)

    Raises:
        ConsistencyError: centroids missing for the fitted cells
        DegenerateVcovError: fewer than two cells
    """
    scores, bread = _require_scores(fit)
    lat = fit.cell_lat if cell_lat is None else np.asarray(cell_lat, dtype=float)
    lon = fit.cell_lon if cell_lon is None else np.asarray(cell_lon, dtype=float)
    if lat is None or lon is None:
        raise ConsistencyError("Conley covariance needs cell centroids")
    meat, n_cells = conley_meat(scores, fit.cell, fit.time, lat, lon, cutoff_m)
    if n_cells < 2:
        raise DegenerateVcovError(f"Conley covariance needs at least 2 cells, got {n_cells}")
    v, repaired = psd_repair(sandwich(bread, meat, n_cells / (n_cells - 1)))
    if repaired:
        logger.warning(f"Conley covariance at {cutoff_m:g} m was not PSD; eigenvalues clipped at 0")
    return v, repaired


def wald_joint_test(fit: "FitResult", subset: Sequence[str], vcov_label: str) -> WaldResult:
    """
    Joint test that the named coefficients are all zero.

    W = b' V^-1 b on the subset, chi-square with len(subset) degrees of freedom.

    Raises:
        ColumnNotFoundError: a name is not a fitted coefficient, or the
            covariance label is unknown
        SingularMatrixError: the subset covariance is singular, not positive
            definite or has missing values
    """
    if not subset:
        raise InvalidParameterError("Wald test needs at least one coefficient", parameter="subset")
    if vcov_label not in fit.vcovs:
        raise ColumnNotFoundError(vcov_label, available=list(fit.vcovs))
    index = []
    for name in subset:
        if name not in fit.names:
            raise ColumnNotFoundError(name, available=list(fit.names))
        index.append(fit.names.index(name))
    b = fit.coefficients[index]
    v = fit.vcovs[vcov_label][np.ix_(index, index)]
    if not np.all(np.isfinite(v)):
        raise SingularMatrixError(f"Covariance of {list(subset)} has missing values")
    eigval = np.linalg.eigvalsh(0.5 * (v + v.T))
    if eigval.max() <= 0 or eigval.min() <= WALD_RCOND * eigval.max():
        raise SingularMatrixError(
            f"Covariance of {list(subset)} is singular or not positive definite "
            f"(eigenvalues {eigval.min():.3g} .. {eigval.max():.3g})",
            details={"min_eigenvalue": float(eigval.min()), "max_eigenvalue": float(eigval.max())},
        )
    statistic = float(b @ linalg.solve(v, b, assume_a="pos"))
    dof = len(index)
    return WaldResult(statistic, dof, float(stats.chi2.sf(statistic, dof)))


def bic(fit: "FitResult") -> float:
    """-2 loglik + k ln(n), k = slope coefficients (fixed effects excluded)"""
    return -2.0 * fit.loglik + len(fit.names) * math.log(fit.n_obs_used)


def p_values(coefficients: np.ndarray, vcov: np.ndarray) -> np.ndarray:
    """Two-sided normal p-values"""
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, coefficients / se, np.nan)
    return 2.0 * stats.norm.sf(np.abs(z))


def significance_stars(p_value: float) -> str:
    if p_value is None or not np.isfinite(p_value):
        return ""
    for level, stars in SIGNIFICANCE_LEVELS:
        if p_value < level:
            return stars
    return ""
