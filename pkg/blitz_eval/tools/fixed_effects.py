"""
Fixed-Effect Absorption

Weighted alternating projections over any number of fixed-effect dimensions,
plus the estimation-data container shared by panels and blitz outcome tables.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from blitz_eval.exceptions import DimensionError, InvalidParameterError, SingularMatrixError
from blitz_eval.utils.logger import get_logger

logger = get_logger()


def factorize(codes) -> Tuple[np.ndarray, int]:
    """Map arbitrary integer labels to dense codes 0..G-1 (sorted label order)"""
    uniques, dense = np.unique(np.asarray(codes), return_inverse=True)
    return dense.astype(np.int64).ravel(), int(len(uniques))


@dataclass(frozen=True, eq=False)
class EstimationData:
    """
    Rows entering a regression.

    ``cell`` is the cluster / location id of each row (indexing
    ``cell_lat``/``cell_lon``) and ``time`` its time slice, both used by the
    robust covariance estimators.
    """

    y: np.ndarray
    X: np.ndarray
    names: List[str]
    fe: Dict[str, np.ndarray]
    cell: np.ndarray
    time: np.ndarray
    cell_lat: Optional[np.ndarray] = None
    cell_lon: Optional[np.ndarray] = None
    rows: Optional[np.ndarray] = None
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape[0] != n:
            raise DimensionError("Design rows differ from outcome rows", expected=n, got=self.X.shape[0])
        if self.X.shape[1] != len(self.names):
            raise DimensionError(
                "Design columns differ from names", expected=len(self.names), got=self.X.shape[1]
            )
        for name, codes in self.fe.items():
            if len(codes) != n:
                raise DimensionError(f"Fixed effect {name!r} has wrong length", expected=n, got=len(codes))

    @property
    def n_obs(self) -> int:
        return int(len(self.y))

    def subset(self, mask: np.ndarray) -> "EstimationData":
        """Rows where mask is True; fixed-effect codes are re-densified"""
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            y=self.y[mask],
            X=self.X[mask],
            fe={k: factorize(v[mask])[0] for k, v in self.fe.items()},
            cell=self.cell[mask],
            time=self.time[mask],
            rows=None if self.rows is None else self.rows[mask],
        )


class FixedEffectAbsorber:
    """
    Residualize columns on several fixed-effect dimensions.

    Uses (weighted) alternating projections: each sweep subtracts the
    weighted group means of every dimension in turn, until the largest mean
    removed in a sweep falls below ``tol`` times the column scale. A single
    dimension converges in one sweep.
    """

    def __init__(
        self,
        fe_codes: Sequence[np.ndarray],
        weights: Optional[np.ndarray] = None,
        tol: float = 1e-8,
        max_sweeps: int = 10_000,
    ):
        if not fe_codes:
            raise InvalidParameterError("At least one fixed-effect dimension is required", parameter="fe_codes")
        self.codes = [factorize(c)[0] for c in fe_codes]
        self.n_groups = [int(c.max()) + 1 if len(c) else 0 for c in self.codes]
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.last_sweeps = 0
        self.reweight(weights)

    def reweight(self, weights: Optional[np.ndarray]) -> None:
        """Swap observation weights, keeping the factorized codes"""
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self._wsum = [
            np.bincount(c, weights=self.weights, minlength=g)
            for c, g in zip(self.codes, self.n_groups)
        ]

    def _group_means(self, dim: int, column: np.ndarray) -> np.ndarray:
        values = column if self.weights is None else column * self.weights
        sums = np.bincount(self.codes[dim], weights=values, minlength=self.n_groups[dim])
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(self._wsum[dim] > 0, sums / self._wsum[dim], 0.0)
        return means

    def demean(self, matrix: np.ndarray) -> np.ndarray:
        """
        Residualize each column of a 1D or 2D array.

        Returns:
            Array of the same shape; ``last_sweeps`` holds the sweep count
        """
        squeeze = matrix.ndim == 1
        out = np.array(matrix, dtype=float, copy=True).reshape(len(matrix), -1)
        max_sweeps = 0
        for c in range(out.shape[1]):
            col = out[:, c]
            scale = max(1.0, float(np.max(np.abs(col))) if len(col) else 1.0)
            sweeps = 0
            while True:
                sweeps += 1
                largest = 0.0
                for dim in range(len(self.codes)):
                    means = self._group_means(dim, col)
                    col -= means[self.codes[dim]]
                    if len(means):
                        largest = max(largest, float(np.max(np.abs(means))))
                if len(self.codes) == 1 or largest <= self.tol * scale:
                    break
                if sweeps >= self.max_sweeps:
                    logger.warning(
                        f"Fixed-effect demeaning stopped after {sweeps} sweeps "
                        f"(largest mean {largest:.3e})"
                    )
                    break
            max_sweeps = max(max_sweeps, sweeps)
        self.last_sweeps = max_sweeps
        logger.debug(f"Demeaned {out.shape[1]} column(s) in {max_sweeps} sweep(s)")
        return out[:, 0] if squeeze else out


def weighted_least_squares(
    X: np.ndarray,
    z: np.ndarray,
    weights: Optional[np.ndarray],
    names: Sequence[str],
    reference_norms: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Solve min sum w (z - X b)^2 by QR.

    ``reference_norms`` are the column norms before fixed-effect demeaning; a
    column that demeaning wiped out relative to them is reported as collinear
    with the fixed effects.

    Raises:
        SingularMatrixError: naming the first column that is collinear with
            the fixed effects or the columns before it
    """
    if weights is None:
        A, b = X, z
    else:
        sw = np.sqrt(weights)
        A, b = X * sw[:, None], z * sw
    if A.shape[1] == 0:
        return np.zeros(0)
    col_norms = np.linalg.norm(A, axis=0)
    if reference_norms is None:
        reference_norms = col_norms
    Q, R = linalg.qr(A, mode="economic")
    diag = np.abs(np.diag(R))
    for j, d in enumerate(diag):
        if col_norms[j] <= 1e-9 * reference_norms[j] or d <= 1e-10 * col_norms[j]:
            raise SingularMatrixError(
                f"Regressor {names[j]!r} is collinear with the fixed effects or earlier regressors",
                column=names[j],
            )
    return linalg.solve_triangular(R, Q.T @ b)
