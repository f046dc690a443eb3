"""
Tests for fixed-effect absorption and least squares

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import numpy as np
import pytest

from blitz_eval.exceptions import DimensionError, InvalidParameterError, SingularMatrixError
from blitz_eval.tools.fixed_effects import (
    EstimationData,
    FixedEffectAbsorber,
    factorize,
    weighted_least_squares,
)


def _dummies(codes: np.ndarray) -> np.ndarray:
    dense, n_groups = factorize(codes)
    return np.eye(n_groups)[dense]


class TestFactorize:
    """Tests for factorize"""

    def test_dense_codes_in_label_order(self):
        """Test labels map to 0..G-1 in sorted order"""
        codes, n_groups = factorize([30, 10, 30, 20])

        assert n_groups == 3
        assert codes.tolist() == [2, 0, 2, 1]


class TestFixedEffectAbsorber:
    """Tests for FixedEffectAbsorber"""

    def test_single_dimension_is_one_sweep(self, rng):
        """Test one dimension subtracts group means in a single sweep"""
        codes = rng.integers(0, 5, size=200)
        x = rng.normal(size=200)
        absorber = FixedEffectAbsorber([codes])

        out = absorber.demean(x)

        assert absorber.last_sweeps == 1
        np.testing.assert_allclose(np.bincount(codes, weights=out, minlength=5), 0.0, atol=1e-10)

    def test_two_dimensions_match_dummy_regression(self, rng):
        """Test alternating projections equal residuals on both sets of dummies"""
        a = rng.integers(0, 6, size=300)
        b = rng.integers(0, 9, size=300)
        x = rng.normal(size=(300, 2))
        D = np.column_stack([_dummies(a), _dummies(b)])
        expected = x - D @ np.linalg.lstsq(D, x, rcond=None)[0]

        out = FixedEffectAbsorber([a, b], tol=1e-12).demean(x)

        np.testing.assert_allclose(out, expected, atol=1e-7)

    def test_weighted_projection(self, rng):
        """Test weighted demeaning leaves weighted group sums at zero"""
        codes = rng.integers(0, 4, size=100)
        weights = rng.uniform(0.5, 2.0, size=100)
        x = rng.normal(size=100)

        out = FixedEffectAbsorber([codes], weights=weights).demean(x)

        np.testing.assert_allclose(np.bincount(codes, weights=out * weights, minlength=4), 0.0, atol=1e-10)

    def test_reweight_keeps_codes(self, rng):
        """Test swapping weights changes the projection but not the groups"""
        codes = rng.integers(0, 4, size=50)
        x = rng.normal(size=50)
        absorber = FixedEffectAbsorber([codes])
        unweighted = absorber.demean(x)

        absorber.reweight(np.linspace(1.0, 2.0, 50))

        assert absorber.n_groups == [4]
        assert not np.allclose(absorber.demean(x), unweighted)

    def test_shape_is_preserved(self, rng):
        """Test 1D input stays 1D and 2D stays 2D"""
        codes = rng.integers(0, 3, size=20)
        absorber = FixedEffectAbsorber([codes])

        assert absorber.demean(np.ones(20)).shape == (20,)
        assert absorber.demean(np.ones((20, 3))).shape == (20, 3)

    def test_no_dimensions(self):
        """Test an absorber without dimensions raises InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            FixedEffectAbsorber([])


class TestWeightedLeastSquares:
    """Tests for weighted_least_squares"""

    def test_recovers_exact_coefficients(self, rng):
        """Test noise-free data gives back the coefficients"""
        X = rng.normal(size=(50, 3))
        beta = np.array([0.5, -1.0, 2.0])

        solved = weighted_least_squares(X, X @ beta, rng.uniform(0.5, 1.5, 50), ["a", "b", "c"])

        np.testing.assert_allclose(solved, beta, atol=1e-10)

    def test_collinear_column_is_named(self, rng):
        """Test a duplicated column raises SingularMatrixError naming it"""
        x = rng.normal(size=40)
        X = np.column_stack([x, 2.0 * x])

        with pytest.raises(SingularMatrixError) as exc_info:
            weighted_least_squares(X, x, None, ["blitz", "blitz_copy"])

        assert exc_info.value.column == "blitz_copy"

    def test_column_absorbed_by_fixed_effects(self, rng):
        """Test a column wiped out by demeaning is reported"""
        codes = np.repeat(np.arange(5), 8)
        group_constant = codes.astype(float)
        x = rng.normal(size=40)
        X = np.column_stack([x, group_constant])
        demeaned = FixedEffectAbsorber([codes]).demean(X)

        with pytest.raises(SingularMatrixError) as exc_info:
            weighted_least_squares(demeaned, x, None, ["blitz", "mobile"], np.linalg.norm(X, axis=0))

        assert exc_info.value.column == "mobile"

    def test_no_columns(self):
        """Test an empty design returns no coefficients"""
        assert weighted_least_squares(np.zeros((5, 0)), np.ones(5), None, []).shape == (0,)


class TestEstimationData:
    """Tests for EstimationData"""

    def _data(self, n=6):
        return EstimationData(
            y=np.arange(n, dtype=float),
            X=np.ones((n, 1)),
            names=["blitz"],
            fe={"group_a": np.array([5, 5, 7, 7, 9, 9][:n])},
            cell=np.arange(n),
            time=np.zeros(n, dtype=np.int64),
        )

    def test_row_mismatch(self):
        """Test X with the wrong row count raises DimensionError"""
        with pytest.raises(DimensionError):
            EstimationData(
                y=np.zeros(3), X=np.zeros((2, 1)), names=["blitz"], fe={}, cell=np.zeros(3), time=np.zeros(3)
            )

    def test_name_mismatch(self):
        """Test X with the wrong column count raises DimensionError"""
        with pytest.raises(DimensionError):
            EstimationData(y=np.zeros(3), X=np.zeros((3, 2)), names=["blitz"], fe={}, cell=np.zeros(3), time=np.zeros(3))

    def test_subset_redensifies_codes(self):
        """Test subsetting keeps rows and renumbers fixed-effect codes"""
        data = self._data()

        sub = data.subset(np.array([False, False, True, True, True, True]))

        assert sub.n_obs == 4
        assert sub.fe["group_a"].tolist() == [0, 0, 1, 1]
        assert sub.y.tolist() == [2.0, 3.0, 4.0, 5.0]
