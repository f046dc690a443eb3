"""
Estimator Tools: fixed-effects Poisson and linear regressions

Poisson pseudo-maximum likelihood with the fixed effects concentrated out by
alternating projections inside IRLS, and within-transformed least squares for
the blitz-output regressions. Robust covariances come from inference.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from blitz_eval.exceptions import EstimationError, InvalidParameterError
from blitz_eval.tools import inference
from blitz_eval.tools.fixed_effects import EstimationData, FixedEffectAbsorber, weighted_least_squares
from blitz_eval.utils.logger import get_logger

logger = get_logger()

DEFAULT_MAX_ITER = 100
DEFAULT_DEVIANCE_TOL = 1e-9
DEFAULT_DEMEAN_TOL = 1e-8
MAX_STEP_HALVINGS = 10
START_OFFSET = 1e-8
# residual sum of squares at or below this share of the outcome variation is a perfect fit
PERFECT_FIT_RTOL = 1e-16


class Family(str, Enum):
    POISSON = "poisson"
    LINEAR = "linear"


class VcovKind(str, Enum):
    CLUSTER_CELL = "cluster"
    CONLEY_SPATIAL = "conley"


@dataclass(frozen=True)
class VcovSpec:
    kind: VcovKind
    cutoff_m: Optional[float] = None

    def __post_init__(self):
        if self.kind == VcovKind.CONLEY_SPATIAL:
            if self.cutoff_m is None or not self.cutoff_m > 0:
                raise InvalidParameterError(
                    "Conley covariance requires a positive cutoff_m", parameter="cutoff_m"
                )

    @property
    def label(self) -> str:
        if self.kind == VcovKind.CLUSTER_CELL:
            return "cluster"
        return f"conley_{self.cutoff_m:g}m"

    @classmethod
    def parse(cls, label: str) -> "VcovSpec":
        """Inverse of ``label``: 'cluster' or 'conley_<metres>m'"""
        if label == "cluster":
            return cls(VcovKind.CLUSTER_CELL)
        if label.startswith("conley_") and label.endswith("m"):
            try:
                return cls(VcovKind.CONLEY_SPATIAL, float(label[len("conley_") : -1]))
            except ValueError:
                pass
        raise InvalidParameterError(f"Unknown covariance label: {label!r}", parameter="vcov")


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    regressors: Tuple[str, ...]
    fe_dims: Tuple[str, ...] = ("group_a", "group_b")
    family: Family = Family.POISSON
    vcov: Tuple[VcovSpec, ...] = (VcovSpec(VcovKind.CLUSTER_CELL),)

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "fe_dims", tuple(self.fe_dims))
        object.__setattr__(self, "vcov", tuple(self.vcov))
        if not self.regressors:
            raise InvalidParameterError("Model needs at least one regressor", parameter="regressors")
        if len(set(self.regressors)) != len(self.regressors):
            raise InvalidParameterError("Model regressors must be distinct", parameter="regressors")
        if not self.fe_dims:
            raise InvalidParameterError("Model needs at least one fixed-effect dimension", parameter="fe_dims")


@dataclass(frozen=True, eq=False)
class FitResult:
    """
    Fitted regression.

    ``scores``/``bread`` and the row ids (``cell``, ``time``) are kept for
    the robust covariance estimators; a fit read back from JSON has none.
    """

    spec: ModelSpec
    names: List[str]
    coefficients: np.ndarray
    loglik: float
    bic: float
    deviance: float
    n_obs_used: int
    n_obs_sample: int
    dropped_groups: Dict[str, List[int]]
    dropped_rows: int
    converged: bool
    iterations: int
    demean_sweeps: int
    outcome_mean: float
    vcovs: Dict[str, np.ndarray] = field(default_factory=dict)
    psd_repaired: Dict[str, bool] = field(default_factory=dict)
    r2: Optional[float] = None
    r2_within: Optional[float] = None
    fitted: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None
    bread: Optional[np.ndarray] = None
    cell: Optional[np.ndarray] = None
    time: Optional[np.ndarray] = None
    cell_lat: Optional[np.ndarray] = None
    cell_lon: Optional[np.ndarray] = None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def coefficient_map(self) -> Dict[str, float]:
        return {n: float(b) for n, b in zip(self.names, self.coefficients)}

    def standard_errors(self, label: str) -> Dict[str, float]:
        se = np.sqrt(np.clip(np.diag(self.vcovs[label]), 0.0, None))
        return {n: float(s) for n, s in zip(self.names, se)}

    def p_values(self, label: str) -> Dict[str, float]:
        p = inference.p_values(self.coefficients, self.vcovs[label])
        return {n: float(v) for n, v in zip(self.names, p)}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.spec.family.value,
            "outcome": self.spec.outcome,
            "fe_dims": list(self.spec.fe_dims),
            "regressors": list(self.names),
            "coefficients": self.coefficient_map(),
            "standard_errors": {label: self.standard_errors(label) for label in self.vcovs},
            "p_values": {label: self.p_values(label) for label in self.vcovs},
            "vcov": {label: v.tolist() for label, v in self.vcovs.items()},
            "psd_repaired": dict(self.psd_repaired),
            "loglik": self.loglik,
            "bic": self.bic,
            "deviance": self.deviance,
            "outcome_mean": self.outcome_mean,
            "r2": self.r2,
            "r2_within": self.r2_within,
            "n_obs_used": self.n_obs_used,
            "n_obs_sample": self.n_obs_sample,
            "dropped_rows": self.dropped_rows,
            "dropped_groups": {
                "count": sum(len(v) for v in self.dropped_groups.values()),
                "by_dim": {dim: {"count": len(ids), "ids": ids} for dim, ids in self.dropped_groups.items()},
            },
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "demean_sweeps": self.demean_sweeps,
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FitResult":
        """Rebuild the coefficient / covariance part of a serialized fit"""
        vcovs = {label: np.asarray(v, dtype=float) for label, v in data.get("vcov", {}).items()}
        spec = ModelSpec(
            outcome=data["outcome"],
            regressors=tuple(data["regressors"]),
            fe_dims=tuple(data["fe_dims"]),
            family=Family(data["family"]),
            vcov=tuple(VcovSpec.parse(label) for label in vcovs) or ModelSpec.vcov,
        )
        convergence = data.get("convergence", {})
        by_dim = data.get("dropped_groups", {}).get("by_dim", {})
        return cls(
            spec=spec,
            names=list(data["regressors"]),
            coefficients=np.asarray([data["coefficients"][n] for n in data["regressors"]], dtype=float),
            loglik=float(data["loglik"]),
            bic=float(data["bic"]),
            deviance=float(data.get("deviance", float("nan"))),
            n_obs_used=int(data["n_obs_used"]),
            n_obs_sample=int(data.get("n_obs_sample", data["n_obs_used"])),
            dropped_groups={dim: list(v["ids"]) for dim, v in by_dim.items()},
            dropped_rows=int(data.get("dropped_rows", 0)),
            converged=bool(convergence.get("converged", True)),
            iterations=int(convergence.get("iterations", 0)),
            demean_sweeps=int(convergence.get("demean_sweeps", 0)),
            outcome_mean=float(data.get("outcome_mean", float("nan"))),
            vcovs=vcovs,
            psd_repaired=dict(data.get("psd_repaired", {})),
            r2=data.get("r2"),
            r2_within=data.get("r2_within"),
        )


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    """2 sum [y ln(y / mu) - (y - mu)], with 0 ln 0 = 0"""
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def poisson_loglik(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(mu), 0.0)
    return float(np.sum(term - mu - gammaln(y + 1.0)))


def zero_outcome_groups(
    y: np.ndarray, fe: Dict[str, np.ndarray]
) -> Tuple[np.ndarray, Dict[str, List[int]]]:
    """
    Groups whose outcome sums to zero, per fixed-effect dimension.

    Their fixed effects diverge to minus infinity, so their rows carry no
    information about the slopes. Removing them never changes another group's
    sum, so one pass is enough.

    Returns:
        (keep mask, {dim: sorted dropped group labels})
    """
    keep = np.ones(len(y), dtype=bool)
    dropped: Dict[str, List[int]] = {}
    for dim, codes in fe.items():
        labels, dense = np.unique(codes, return_inverse=True)
        sums = np.bincount(dense.ravel(), weights=y, minlength=len(labels))
        zero = sums <= 0
        dropped[dim] = [int(v) for v in labels[zero]]
        keep &= ~zero[dense.ravel()]
    return keep, dropped


def _attach_vcovs(fit: FitResult, specs: Sequence[VcovSpec]) -> FitResult:
    vcovs: Dict[str, np.ndarray] = {}
    repaired: Dict[str, bool] = {}
    for spec in specs:
        if spec.kind == VcovKind.CLUSTER_CELL:
            vcovs[spec.label] = inference.vcov_cluster(fit)
            repaired[spec.label] = False
        else:
            vcovs[spec.label], repaired[spec.label] = inference.vcov_conley(fit, spec.cutoff_m)
    return replace(fit, vcovs=vcovs, psd_repaired=repaired)


def fit_fe_poisson(
    data: EstimationData,
    spec: ModelSpec,
    max_iter: int = DEFAULT_MAX_ITER,
    deviance_tol: float = DEFAULT_DEVIANCE_TOL,
    demean_tol: float = DEFAULT_DEMEAN_TOL,
) -> FitResult:
    """
    Fixed-effects Poisson by IRLS with concentrated fixed effects.

    Each iteration demeans the working response and the regressors with
    weights mu by alternating projections, solves the weighted least-squares
    step, and halves the step (up to 10 times) if the deviance rises.

    Args:
        data: Estimation sample (panel.design or an outcome table)
        spec: Model specification with family POISSON
        max_iter: Iteration cap; hitting it flags converged=False
        deviance_tol: Relative deviance change for convergence
        demean_tol: Alternating-projection tolerance

    Returns:
        FitResult with the covariances named in spec.vcov

    Raises:
        InvalidParameterError: negative or non-integer outcome
        EstimationError: no rows left after dropping zero-outcome groups
        SingularMatrixError: regressor collinear with the fixed effects
    """
    if spec.family != Family.POISSON:
        raise InvalidParameterError("fit_fe_poisson needs family POISSON", parameter="family")
    y_all = np.asarray(data.y, dtype=float)
    if np.any(y_all < 0) or np.any(y_all != np.round(y_all)):
        raise InvalidParameterError("Poisson outcome must be a nonnegative integer count", parameter="outcome")

    keep, dropped = zero_outcome_groups(y_all, {d: data.fe[d] for d in spec.fe_dims})
    n_dropped_groups = sum(len(v) for v in dropped.values())
    if not keep.any():
        raise EstimationError(
            f"No observations left: all {n_dropped_groups} fixed-effect groups have zero outcome",
            details={"dropped_groups": n_dropped_groups, "n_obs_sample": data.n_obs},
        )
    sub = data.subset(keep) if not keep.all() else data
    logger.info(
        f"Poisson fit: {sub.n_obs} of {data.n_obs} rows after dropping {n_dropped_groups} zero-outcome group(s)"
    )

    y = sub.y
    X = sub.X
    fe_codes = [sub.fe[d] for d in spec.fe_dims]
    absorber = FixedEffectAbsorber(fe_codes, tol=demean_tol)
    reference_norms = np.linalg.norm(X, axis=0) if X.shape[1] else None

    first = absorber.codes[0]
    group_mean = np.bincount(first, weights=y) / np.bincount(first)
    mu = group_mean[first] + START_OFFSET
    eta = np.log(mu)
    beta = np.zeros(X.shape[1])
    dev = poisson_deviance(y, mu)

    converged = False
    iterations = 0
    sweeps = 0
    for iterations in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        absorber.reweight(mu)
        demeaned = absorber.demean(np.column_stack([z, X]))
        sweeps = max(sweeps, absorber.last_sweeps)
        zd, Xd = demeaned[:, 0], demeaned[:, 1:]
        new_beta = weighted_least_squares(Xd, zd, mu, sub.names, reference_norms)
        new_eta = z - (zd - Xd @ new_beta)
        new_mu = np.exp(new_eta)
        new_dev = poisson_deviance(y, new_mu)

        halvings = 0
        while (not np.isfinite(new_dev) or new_dev > dev * (1 + 1e-12)) and halvings < MAX_STEP_HALVINGS:
            halvings += 1
            new_eta = 0.5 * (eta + new_eta)
            new_beta = 0.5 * (beta + new_beta)
            new_mu = np.exp(new_eta)
            new_dev = poisson_deviance(y, new_mu)
        if halvings:
            logger.debug(f"IRLS iteration {iterations}: {halvings} step halving(s)")

        change = abs(new_dev - dev) / max(abs(new_dev), 0.1)
        eta, mu, beta, dev = new_eta, new_mu, new_beta, new_dev
        logger.debug(f"IRLS iteration {iterations}: deviance {dev:.10g} (relative change {change:.3e})")
        if change < deviance_tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Poisson fit did not converge in {max_iter} iterations (deviance {dev:.10g})")

    absorber.reweight(mu)
    Xd = absorber.demean(X) if X.shape[1] else X
    scores = Xd * (y - mu)[:, None]
    bread = np.linalg.inv((Xd * mu[:, None]).T @ Xd) if X.shape[1] else np.zeros((0, 0))
    loglik = poisson_loglik(y, mu)
    n = sub.n_obs

    fit = FitResult(
        spec=spec,
        names=list(sub.names),
        coefficients=beta,
        loglik=loglik,
        bic=-2.0 * loglik + X.shape[1] * math.log(n),
        deviance=dev,
        n_obs_used=n,
        n_obs_sample=data.n_obs,
        dropped_groups=dropped,
        dropped_rows=int(data.n_obs - n),
        converged=converged,
        iterations=iterations,
        demean_sweeps=sweeps,
        outcome_mean=float(y.mean()),
        fitted=mu,
        scores=scores,
        bread=bread,
        cell=sub.cell,
        time=sub.time,
        cell_lat=sub.cell_lat,
        cell_lon=sub.cell_lon,
    )
    return _attach_vcovs(fit, spec.vcov)


def fit_fe_linear(
    data: EstimationData, spec: ModelSpec, demean_tol: float = DEFAULT_DEMEAN_TOL
) -> FitResult:
    """
    Within-transformed least squares over additive fixed effects.

    Returns:
        FitResult with R², within R² and the outcome mean

    Raises:
        EstimationError: empty sample, or zero residual variance
        SingularMatrixError: regressor collinear with the fixed effects
    """
    if spec.family != Family.LINEAR:
        raise InvalidParameterError("fit_fe_linear needs family LINEAR", parameter="family")
    n = data.n_obs
    if n == 0:
        raise EstimationError("No observations for the linear fit")
    y, X = np.asarray(data.y, dtype=float), data.X
    absorber = FixedEffectAbsorber([data.fe[d] for d in spec.fe_dims], tol=demean_tol)
    demeaned = absorber.demean(np.column_stack([y, X]))
    yd, Xd = demeaned[:, 0], demeaned[:, 1:]
    reference_norms = np.linalg.norm(X, axis=0)
    beta = weighted_least_squares(Xd, yd, None, data.names, reference_norms)
    resid = yd - Xd @ beta
    ssr = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    tss_within = float(yd @ yd)
    if ssr <= PERFECT_FIT_RTOL * max(tss, tss_within):
        raise EstimationError(
            f"Residual variance of {spec.outcome!r} is zero: regressors and fixed effects fit it exactly",
            details={"ssr": ssr, "tss": tss, "tss_within": tss_within, "n_obs": n},
            suggestions=[
                "Check the outcome is not a function of the regressors",
                "An outcome constant within every fixed-effect group leaves nothing to explain",
            ],
        )
    sigma2 = ssr / n
    loglik = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)

    fit = FitResult(
        spec=spec,
        names=list(data.names),
        coefficients=beta,
        loglik=loglik,
        bic=-2.0 * loglik + X.shape[1] * math.log(n),
        deviance=ssr,
        n_obs_used=n,
        n_obs_sample=n,
        dropped_groups={},
        dropped_rows=0,
        converged=True,
        iterations=1,
        demean_sweeps=absorber.last_sweeps,
        outcome_mean=float(y.mean()),
        r2=1.0 - ssr / tss if tss > 0 else None,
        r2_within=1.0 - ssr / tss_within if tss_within > 0 else None,
        fitted=y - resid,
        scores=Xd * resid[:, None],
        bread=np.linalg.inv(Xd.T @ Xd),
        cell=data.cell,
        time=data.time,
        cell_lat=data.cell_lat,
        cell_lon=data.cell_lon,
    )
    logger.info(f"Linear fit of {spec.outcome!r}: {n} rows, R² {fit.r2}")
    return _attach_vcovs(fit, spec.vcov)


def fit_model(data: EstimationData, spec: ModelSpec, **kwargs) -> FitResult:
    if spec.family == Family.POISSON:
        return fit_fe_poisson(data, spec, **kwargs)
    kwargs.pop("max_iter", None)
    kwargs.pop("deviance_tol", None)
    return fit_fe_linear(data, spec, **kwargs)
