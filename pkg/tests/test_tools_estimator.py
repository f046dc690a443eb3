"""
Tests for the fixed-effects Poisson and linear estimators

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import math

import numpy as np
import pytest

from blitz_eval.exceptions import EstimationError, InvalidParameterError, SingularMatrixError
from blitz_eval.tools.estimator import (
    Family,
    FitResult,
    ModelSpec,
    VcovKind,
    VcovSpec,
    fit_fe_linear,
    fit_fe_poisson,
    fit_model,
    poisson_deviance,
    poisson_loglik,
    zero_outcome_groups,
)
from blitz_eval.tools.fixed_effects import EstimationData

FE = ("a", "b")


def _poisson_data(rng, n=600, n_a=20, n_b=10, beta=(0.3, -0.2)):
    a = rng.integers(0, n_a, size=n)
    b = rng.integers(0, n_b, size=n)
    X = rng.normal(size=(n, len(beta)))
    eta = 0.5 + rng.normal(0, 0.3, n_a)[a] + rng.normal(0, 0.3, n_b)[b] + X @ np.asarray(beta)
    y = rng.poisson(np.exp(eta)).astype(float)
    return EstimationData(
        y=y,
        X=X,
        names=[f"x{k}" for k in range(len(beta))],
        fe={"a": a, "b": b},
        cell=a,
        time=b,
    )


def _dummy_newton(data: EstimationData, iterations: int = 100) -> np.ndarray:
    """Full maximum likelihood with explicit dummies; returns the slopes"""
    a, b = data.fe["a"], data.fe["b"]
    Da = np.eye(a.max() + 1)[a]
    Db = np.eye(b.max() + 1)[b][:, 1:]
    Z = np.column_stack([data.X, Da, Db])
    theta = np.zeros(Z.shape[1])
    theta[data.X.shape[1] : data.X.shape[1] + Da.shape[1]] = math.log(data.y.mean())

    def loglik(t):
        eta = Z @ t
        return float(np.sum(data.y * eta - np.exp(eta)))

    for _ in range(iterations):
        mu = np.exp(Z @ theta)
        step = np.linalg.solve((Z * mu[:, None]).T @ Z, Z.T @ (data.y - mu))
        scale = 1.0
        while loglik(theta + scale * step) < loglik(theta) and scale > 1e-6:
            scale /= 2
        theta = theta + scale * step
    return theta[: data.X.shape[1]]


def _spec(names, **kwargs):
    return ModelSpec(outcome="crime", regressors=tuple(names), fe_dims=FE, **kwargs)


class TestVcovSpec:
    """Tests for VcovSpec"""

    def test_labels(self):
        """Test cluster and Conley labels"""
        assert VcovSpec(VcovKind.CLUSTER_CELL).label == "cluster"
        assert VcovSpec(VcovKind.CONLEY_SPATIAL, 1000.0).label == "conley_1000m"

    def test_parse_inverts_label(self):
        """Test parse reads back a label"""
        assert VcovSpec.parse("conley_750m") == VcovSpec(VcovKind.CONLEY_SPATIAL, 750.0)
        assert VcovSpec.parse("cluster") == VcovSpec(VcovKind.CLUSTER_CELL)

    def test_parse_unknown(self):
        """Test an unknown label raises InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            VcovSpec.parse("hc1")

    def test_conley_needs_cutoff(self):
        """Test a Conley spec without a cutoff raises InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            VcovSpec(VcovKind.CONLEY_SPATIAL)


class TestModelSpec:
    """Tests for ModelSpec"""

    def test_defaults(self):
        """Test the default fixed effects and covariance"""
        spec = ModelSpec(outcome="crime", regressors=["blitz"])

        assert spec.fe_dims == ("group_a", "group_b")
        assert spec.family == Family.POISSON
        assert spec.vcov == (VcovSpec(VcovKind.CLUSTER_CELL),)

    def test_needs_regressors(self):
        """Test an empty regressor list raises InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            ModelSpec(outcome="crime", regressors=())

    def test_distinct_regressors(self):
        """Test duplicated regressors raise InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            ModelSpec(outcome="crime", regressors=("blitz", "blitz"))


class TestPoissonHelpers:
    """Tests for deviance, log-likelihood and zero-outcome groups"""

    def test_deviance_zero_at_saturation(self):
        """Test the deviance vanishes when mu equals y (0 ln 0 = 0)"""
        y = np.array([0.0, 1.0, 4.0])

        assert poisson_deviance(y, np.where(y > 0, y, 1e-300)) == pytest.approx(0.0, abs=1e-12)

    def test_loglik_of_single_observation(self):
        """Test the log-likelihood of y=2 at mu=1 is -1 - ln 2"""
        assert poisson_loglik(np.array([2.0]), np.array([1.0])) == pytest.approx(-1.0 - math.log(2.0))

    def test_zero_outcome_groups(self):
        """Test groups whose outcome sums to zero are flagged in every dimension"""
        y = np.array([0.0, 0.0, 1.0, 2.0])
        keep, dropped = zero_outcome_groups(y, {"a": np.array([7, 7, 8, 8]), "b": np.array([0, 1, 0, 1])})

        assert keep.tolist() == [False, False, True, True]
        assert dropped == {"a": [7], "b": []}


class TestFitFePoisson:
    """Tests for fit_fe_poisson"""

    def test_matches_dummy_variable_maximum_likelihood(self, rng):
        """Test the concentrated fit equals full maximum likelihood with dummies"""
        data = _poisson_data(rng)

        fit = fit_fe_poisson(data, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)

        assert fit.converged
        np.testing.assert_allclose(fit.coefficients, _dummy_newton(data), atol=1e-5)
        assert fit.coef("x0") == pytest.approx(0.3, abs=0.1)

    def test_fitted_group_sums_equal_observed(self, rng):
        """Test fitted counts add up to the observed counts in every group"""
        data = _poisson_data(rng)

        fit = fit_fe_poisson(data, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)

        for dim in FE:
            codes = data.fe[dim]
            observed = np.bincount(codes, weights=data.y)
            fitted = np.bincount(codes, weights=fit.fitted)
            np.testing.assert_allclose(fitted, observed, rtol=1e-5)

    def test_zero_outcome_group_is_dropped(self, rng):
        """Test a group with no events is dropped and reported"""
        data = _poisson_data(rng)
        y = data.y.copy()
        y[data.fe["a"] == 3] = 0.0
        data = EstimationData(y=y, X=data.X, names=data.names, fe=data.fe, cell=data.cell, time=data.time)

        fit = fit_fe_poisson(data, _spec(data.names))

        assert fit.dropped_groups["a"] == [3]
        assert fit.dropped_rows == int(np.sum(data.fe["a"] == 3))
        assert fit.n_obs_used == data.n_obs - fit.dropped_rows
        assert fit.to_dict()["dropped_groups"]["count"] == 1

    def test_added_zero_outcome_group_leaves_slopes_unchanged(self, rng):
        """Test appending an all-zero group drops it and reproduces the slopes"""
        data = _poisson_data(rng)
        extra = 25
        a = np.concatenate([data.fe["a"], np.full(extra, data.fe["a"].max() + 1)])
        b = np.concatenate([data.fe["b"], rng.integers(0, data.fe["b"].max() + 1, size=extra)])
        padded = EstimationData(
            y=np.concatenate([data.y, np.zeros(extra)]),
            X=np.vstack([data.X, rng.normal(size=(extra, data.X.shape[1]))]),
            names=data.names,
            fe={"a": a, "b": b},
            cell=a,
            time=b,
        )

        base = fit_fe_poisson(data, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)
        fit = fit_fe_poisson(padded, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)

        assert int(data.fe["a"].max() + 1) in fit.dropped_groups["a"]
        assert fit.n_obs_used == base.n_obs_used
        np.testing.assert_allclose(fit.coefficients, base.coefficients, rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("scale", [2, 7])
    def test_scaling_outcome_leaves_slopes_unchanged(self, rng, scale):
        """Test multiplying every count by c > 0 only shifts the fixed effects"""
        data = _poisson_data(rng)
        scaled = EstimationData(
            y=data.y * scale, X=data.X, names=data.names, fe=data.fe, cell=data.cell, time=data.time
        )

        base = fit_fe_poisson(data, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)
        fit = fit_fe_poisson(scaled, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)

        np.testing.assert_allclose(fit.coefficients, base.coefficients, atol=1e-6)
        np.testing.assert_allclose(fit.fitted, base.fitted * scale, rtol=1e-5)

    def test_score_is_zero_at_convergence(self, rng):
        """Test the demeaned scores and every group's residual sum vanish"""
        data = _poisson_data(rng)

        fit = fit_fe_poisson(data, _spec(data.names), deviance_tol=1e-12, demean_tol=1e-12)

        assert fit.converged
        assert fit.dropped_rows == 0
        resid = data.y - fit.fitted
        np.testing.assert_allclose(fit.scores.sum(axis=0), 0.0, atol=1e-4)
        np.testing.assert_allclose(data.X.T @ resid, 0.0, atol=1e-4)
        for dim in FE:
            np.testing.assert_allclose(np.bincount(data.fe[dim], weights=resid), 0.0, atol=1e-4)

    def test_all_zero_outcome(self, rng):
        """Test an outcome that is zero everywhere raises EstimationError"""
        data = _poisson_data(rng)
        data = EstimationData(
            y=np.zeros(data.n_obs), X=data.X, names=data.names, fe=data.fe, cell=data.cell, time=data.time
        )

        with pytest.raises(EstimationError):
            fit_fe_poisson(data, _spec(data.names))

    def test_negative_outcome(self, rng):
        """Test a negative count raises InvalidParameterError"""
        data = _poisson_data(rng)
        y = data.y.copy()
        y[0] = -1.0
        data = EstimationData(y=y, X=data.X, names=data.names, fe=data.fe, cell=data.cell, time=data.time)

        with pytest.raises(InvalidParameterError):
            fit_fe_poisson(data, _spec(data.names))

    def test_regressor_collinear_with_fixed_effects(self, rng):
        """Test a regressor constant within groups raises SingularMatrixError"""
        data = _poisson_data(rng)
        X = np.column_stack([data.X[:, 0], data.fe["a"].astype(float)])
        data = EstimationData(
            y=data.y, X=X, names=["x0", "cell_constant"], fe=data.fe, cell=data.cell, time=data.time
        )

        with pytest.raises(SingularMatrixError) as exc_info:
            fit_fe_poisson(data, _spec(data.names))

        assert exc_info.value.column == "cell_constant"

    def test_iteration_cap_flags_nonconvergence(self, rng):
        """Test hitting max_iter reports converged=False"""
        data = _poisson_data(rng)

        fit = fit_fe_poisson(data, _spec(data.names), max_iter=1)

        assert not fit.converged
        assert fit.iterations == 1

    def test_bic_counts_slopes_only(self, rng):
        """Test BIC is -2 loglik + k ln n with k the slope count"""
        data = _poisson_data(rng)

        fit = fit_fe_poisson(data, _spec(data.names))

        assert fit.bic == pytest.approx(-2.0 * fit.loglik + 2 * math.log(fit.n_obs_used))

    def test_wrong_family(self, rng):
        """Test a linear spec is refused"""
        data = _poisson_data(rng)

        with pytest.raises(InvalidParameterError):
            fit_fe_poisson(data, _spec(data.names, family=Family.LINEAR))

    def test_serialized_fit_keeps_estimates(self, rng):
        """Test to_dict / from_dict keeps coefficients and covariances"""
        data = _poisson_data(rng)
        fit = fit_fe_poisson(data, _spec(data.names))

        restored = FitResult.from_dict(fit.to_dict())

        assert restored.names == fit.names
        np.testing.assert_allclose(restored.coefficients, fit.coefficients)
        np.testing.assert_allclose(restored.vcovs["cluster"], fit.vcovs["cluster"])
        assert restored.standard_errors("cluster") == pytest.approx(fit.standard_errors("cluster"))
        assert restored.scores is None


class TestFitFeLinear:
    """Tests for fit_fe_linear and fit_model"""

    def _linear_data(self, rng, n=400):
        a = rng.integers(0, 15, size=n)
        b = rng.integers(0, 6, size=n)
        X = rng.normal(size=(n, 2))
        y = rng.normal(0, 3, 15)[a] + rng.normal(0, 1, 6)[b] + X @ np.array([2.0, -0.5]) + rng.normal(0, 0.1, n)
        return EstimationData(y=y, X=X, names=["duration", "officers"], fe={"a": a, "b": b}, cell=a, time=b)

    def test_recovers_slopes(self, rng):
        """Test within least squares recovers the slopes"""
        data = self._linear_data(rng)

        fit = fit_fe_linear(data, _spec(data.names, family=Family.LINEAR))

        assert fit.coef("duration") == pytest.approx(2.0, abs=0.02)
        assert fit.coef("officers") == pytest.approx(-0.5, abs=0.02)
        assert fit.r2 > 0.99
        assert 0.99 < fit.r2_within <= 1.0
        assert fit.outcome_mean == pytest.approx(float(data.y.mean()))

    def test_fit_model_dispatches_on_family(self, rng):
        """Test fit_model routes linear specs to the linear fit and drops Poisson options"""
        data = self._linear_data(rng)

        fit = fit_model(data, _spec(data.names, family=Family.LINEAR), max_iter=5, deviance_tol=1e-3)

        assert fit.spec.family == Family.LINEAR
        assert fit.iterations == 1

    def test_empty_sample(self):
        """Test an empty sample raises EstimationError"""
        empty = np.zeros(0, dtype=np.int64)
        data = EstimationData(
            y=np.zeros(0), X=np.zeros((0, 1)), names=["duration"], fe={"a": empty, "b": empty}, cell=empty, time=empty
        )

        with pytest.raises(EstimationError):
            fit_fe_linear(data, _spec(["duration"], family=Family.LINEAR))

    def test_perfect_fit_is_not_estimable(self, rng):
        """Test an outcome the regressors and fixed effects reproduce exactly raises EstimationError"""
        data = self._linear_data(rng)
        exact = rng.normal(0, 3, 15)[data.fe["a"]] + data.X @ np.array([2.0, -0.5])
        data = EstimationData(y=exact, X=data.X, names=data.names, fe=data.fe, cell=data.cell, time=data.time)

        with pytest.raises(EstimationError) as exc_info:
            fit_fe_linear(data, _spec(data.names, family=Family.LINEAR))

        assert exc_info.value.details["ssr"] < 1e-12

    def test_outcome_constant_within_groups_is_not_estimable(self, rng):
        """Test an outcome fully absorbed by the fixed effects raises EstimationError"""
        data = self._linear_data(rng)
        absorbed = rng.normal(0, 3, 15)[data.fe["a"]]
        data = EstimationData(y=absorbed, X=data.X, names=data.names, fe=data.fe, cell=data.cell, time=data.time)

        with pytest.raises(EstimationError):
            fit_fe_linear(data, _spec(data.names, family=Family.LINEAR))
