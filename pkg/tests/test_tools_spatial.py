"""
Tests for hex grid, cell lookup and spatial weights

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import sparse

from blitz_eval.exceptions import (
    DimensionError,
    InputFileError,
    InvalidBoundaryError,
    InvalidParameterError,
)
from blitz_eval.tools.spatial import (
    EARTH_RADIUS_M,
    GeoPoint,
    WeightScheme,
    apply_weights,
    build_hex_grid,
    build_weights,
    catchment_counts,
    great_circle_distance,
    haversine,
    hex_circumradius_m,
    lattice_rectangle,
    load_boundary_geojson,
    locate,
    locate_many,
    pairs_within,
    points_in_polygon,
    polygon_area,
    rectangle_boundary,
    row_standardize,
    weights_to_csv,
    write_boundary_geojson,
    write_cells_csv,
)

from tests.conftest import CELL_AREA_KM2, ORIGIN_LAT, ORIGIN_LON

METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0


class TestDistances:
    """Tests for great-circle distances"""

    def test_one_degree_of_longitude_on_equator(self):
        """Test one degree on the equator is about 111,195 m"""
        d = great_circle_distance(GeoPoint(lat=0, lon=0), GeoPoint(lat=0, lon=1))

        assert d == pytest.approx(111_195, abs=1)

    def test_distance_to_self_is_zero(self):
        """Test a point is at distance zero from itself"""
        p = GeoPoint(lat=ORIGIN_LAT, lon=ORIGIN_LON)

        assert great_circle_distance(p, p) == 0.0

    def test_haversine_is_vectorised_and_symmetric(self):
        """Test haversine accepts arrays and is symmetric"""
        lat1 = np.array([0.0, -3.8])
        lon1 = np.array([0.0, -38.6])
        lat2 = np.array([1.0, -3.7])
        lon2 = np.array([0.0, -38.5])

        forward = haversine(lat1, lon1, lat2, lon2)
        backward = haversine(lat2, lon2, lat1, lon1)

        assert forward.shape == (2,)
        np.testing.assert_allclose(forward, backward)
        assert forward[0] == pytest.approx(METERS_PER_DEGREE, rel=1e-9)

    def test_pairs_within_matches_all_pairs(self):
        """Test KD-tree pairs equal the pairs found by checking every distance"""
        rng = np.random.default_rng(7)
        lat = ORIGIN_LAT + rng.uniform(0, 0.02, 60)
        lon = ORIGIN_LON + rng.uniform(0, 0.02, 60)

        i, j, d = pairs_within(lat, lon, 800.0)

        expected = [
            (a, b)
            for a in range(60)
            for b in range(a + 1, 60)
            if haversine(lat[a], lon[a], lat[b], lon[b]) <= 800.0
        ]
        assert list(zip(i.tolist(), j.tolist())) == expected
        np.testing.assert_allclose(d, haversine(lat[i], lon[i], lat[j], lon[j]))

    def test_pairs_within_none(self):
        """Test a cutoff below every spacing returns empty arrays"""
        i, j, d = pairs_within([0.0, 0.0], [0.0, 1.0], 10.0)

        assert len(i) == len(j) == len(d) == 0


class TestPolygon:
    """Tests for polygon helpers"""

    def test_area_sign(self):
        """Test counter-clockwise rings have positive area"""
        xs, ys = [0.0, 2.0, 2.0, 0.0], [0.0, 0.0, 3.0, 3.0]

        assert polygon_area(xs, ys) == pytest.approx(6.0)
        assert polygon_area(xs[::-1], ys[::-1]) == pytest.approx(-6.0)

    def test_points_in_polygon(self):
        """Test inside, outside and concave-notch points"""
        # L shape: the square [0, 2]^2 without [1, 2] x [1, 2]
        xs = [0.0, 2.0, 2.0, 1.0, 1.0, 0.0]
        ys = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0]

        inside = points_in_polygon([0.5, 1.5, 1.5, 0.5, 3.0], [0.5, 0.5, 1.5, 1.5, 0.5], xs, ys)

        assert inside.tolist() == [True, True, False, True, False]


class TestBuildHexGrid:
    """Tests for build_hex_grid"""

    def test_circumradius_and_spacing(self):
        """Test the hexagon size for a 0.126 km^2 cell"""
        s = hex_circumradius_m(CELL_AREA_KM2)

        assert s == pytest.approx(220.22, abs=0.01)
        assert math.sqrt(3) * s == pytest.approx(381.4, abs=0.1)

    def test_lattice_rectangle_has_exact_cell_count(self, small_grid):
        """Test a lattice rectangle of 6 x 5 spacings holds 30 cells"""
        assert small_grid.n_cells == 30
        assert small_grid.summary()["n_cells"] == 30

    def test_cells_are_numbered_in_axial_order(self, small_grid):
        """Test ids follow (q, r) order"""
        keys = list(zip(small_grid.q.tolist(), small_grid.r.tolist()))

        assert keys == sorted(keys)

    def test_cell_areas_close_to_nominal(self, small_grid):
        """Test cell areas stay close to the nominal area"""
        np.testing.assert_allclose(small_grid.areas_km2, CELL_AREA_KM2, rtol=0.01)

    def test_one_km_square(self):
        """Test a 1 km square at 0.126 km^2 holds 7 to 9 cells"""
        grid = build_hex_grid(rectangle_boundary(ORIGIN_LAT, ORIGIN_LON, 1000.0, 1000.0), CELL_AREA_KM2)

        assert 7 <= grid.n_cells <= 9

    def test_boundary_smaller_than_a_cell(self):
        """Test a tiny boundary still gets one cell"""
        grid = build_hex_grid(rectangle_boundary(ORIGIN_LAT, ORIGIN_LON, 10.0, 10.0), CELL_AREA_KM2)

        assert grid.n_cells == 1

    def test_closed_ring_is_accepted(self, small_boundary):
        """Test a ring repeating its first vertex gives the same grid"""
        closed = list(small_boundary) + [small_boundary[0]]

        assert build_hex_grid(closed, CELL_AREA_KM2).n_cells == 30

    def test_cell_records(self, small_grid):
        """Test Cell records carry six vertices and a closed ring"""
        cell = small_grid.cell(0)

        assert cell.id == 0
        assert len(cell.vertices) == 6
        assert cell.ring()[0] == cell.ring()[-1]
        assert cell.area_km2 == pytest.approx(CELL_AREA_KM2, rel=0.01)

    def test_nonpositive_area_rejected(self, small_boundary):
        """Test a zero cell area raises InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            build_hex_grid(small_boundary, 0.0)

    def test_too_few_vertices_rejected(self):
        """Test a two-vertex boundary raises InvalidBoundaryError"""
        with pytest.raises(InvalidBoundaryError):
            build_hex_grid([GeoPoint(lat=0, lon=0), GeoPoint(lat=0, lon=0.01)], CELL_AREA_KM2)

    def test_zero_area_rejected(self):
        """Test collinear vertices raise InvalidBoundaryError"""
        points = [GeoPoint(lat=0, lon=0), GeoPoint(lat=0, lon=0.01), GeoPoint(lat=0, lon=0.02)]

        with pytest.raises(InvalidBoundaryError):
            build_hex_grid(points, CELL_AREA_KM2)

    def test_self_intersecting_rejected(self):
        """Test a bow-tie boundary raises InvalidBoundaryError"""
        bow_tie = [
            GeoPoint(lat=0.00, lon=0.00),
            GeoPoint(lat=0.01, lon=0.01),
            GeoPoint(lat=0.00, lon=0.01),
            GeoPoint(lat=0.01, lon=0.00),
        ]

        with pytest.raises(InvalidBoundaryError):
            build_hex_grid(bow_tie, CELL_AREA_KM2)


class TestLocate:
    """Tests for locate and locate_many"""

    def test_centroid_maps_to_own_cell(self, small_grid):
        """Test every centroid is located in its own cell"""
        ids = locate_many(small_grid, small_grid.lat, small_grid.lon)

        np.testing.assert_array_equal(ids, np.arange(small_grid.n_cells))

    def test_point_outside_boundary(self, small_grid):
        """Test a far-away point is not located"""
        assert locate(small_grid, GeoPoint(lat=0.0, lon=0.0)) is None

    def test_single_point(self, small_grid):
        """Test locate returns an int id"""
        p = GeoPoint(lat=float(small_grid.lat[7]), lon=float(small_grid.lon[7]))

        assert locate(small_grid, p) == 7

    def test_mismatched_arrays(self, small_grid):
        """Test lat/lon arrays of different lengths raise DimensionError"""
        with pytest.raises(DimensionError):
            locate_many(small_grid, [0.0, 1.0], [0.0])

    def test_random_points_map_to_exactly_one_cell(self, small_grid):
        """Test 10,000 in-boundary points against a brute-force hexagon scan"""
        rng = np.random.default_rng(2024)
        px = rng.uniform(0.0, small_grid.boundary_x.max(), 12_000)
        py = rng.uniform(0.0, small_grid.boundary_y.max(), 12_000)
        inside = points_in_polygon(px, py, small_grid.boundary_x, small_grid.boundary_y)
        px, py = px[inside][:10_000], py[inside][:10_000]
        assert len(px) == 10_000

        vx, vy = small_grid.vertices_xy()
        hits = np.column_stack(
            [points_in_polygon(px, py, vx[i], vy[i]) for i in range(small_grid.n_cells)]
        )
        n_hits = hits.sum(axis=1)
        assert n_hits.max() == 1

        # points in hexagons cut by the boundary go to the nearest member centroid
        nearest = np.argmin(np.hypot(px[:, None] - small_grid.x, py[:, None] - small_grid.y), axis=1)
        expected = np.where(n_hits == 1, hits.argmax(axis=1), nearest)

        lat, lon = small_grid.projection.to_latlon(px, py)
        ids = locate_many(small_grid, lat, lon)

        assert np.all(ids >= 0)
        np.testing.assert_array_equal(ids, expected)

    def test_shared_edge_goes_to_lowest_id(self, small_grid):
        """Test a point on the edge between two cells maps to the smaller id"""
        assert (small_grid.q[0], small_grid.r[1] - small_grid.r[0]) == (small_grid.q[1], 1)
        mx = (small_grid.x[0] + small_grid.x[1]) / 2.0
        my = (small_grid.y[0] + small_grid.y[1]) / 2.0
        lat, lon = small_grid.projection.to_latlon(mx, my)

        assert locate_many(small_grid, lat, lon)[0] == 0


class TestWeights:
    """Tests for spatial weight matrices"""

    def test_contiguity_interior_has_six_neighbours(self, small_grid):
        """Test binary contiguity gives interior cells six neighbours"""
        w = build_weights(small_grid, WeightScheme.BINARY_CONTIGUITY, row_standardize_rows=False)

        assert int(w.neighbor_counts().max()) == 6
        assert w.label == "contiguity"
        assert w.cutoff_m is None
        assert (w.matrix != w.matrix.T).nnz == 0

    def test_row_standardized_rows_sum_to_one(self, small_grid):
        """Test nonempty rows sum to one after standardization"""
        w = build_weights(small_grid, "inverse_distance", 1000.0)
        sums = np.asarray(w.matrix.sum(axis=1)).ravel()

        np.testing.assert_allclose(sums[w.neighbor_counts() > 0], 1.0)
        assert w.label == "idw_1000m"

    def test_no_self_weights(self, small_grid):
        """Test the diagonal is empty"""
        w = build_weights(small_grid, WeightScheme.INVERSE_DISTANCE, 1500.0)

        assert np.all(w.matrix.diagonal() == 0)

    def test_inverse_distance_row_weights(self):
        """Test neighbours at 250 m and 500 m get 2/3 and 1/3"""
        lon = np.array([0.0, 250.0, 500.0]) / METERS_PER_DEGREE
        points = SimpleNamespace(n_cells=3, lat=np.zeros(3), lon=lon)

        w = build_weights(points, WeightScheme.INVERSE_DISTANCE, 600.0)
        row = dict(w.row(0))

        assert row[1] == pytest.approx(2 / 3, rel=1e-6)
        assert row[2] == pytest.approx(1 / 3, rel=1e-6)

    def test_unstandardized_inverse_distance(self):
        """Test raw weights are 1/d in meters"""
        lon = np.array([0.0, 250.0]) / METERS_PER_DEGREE
        points = SimpleNamespace(n_cells=2, lat=np.zeros(2), lon=lon)

        w = build_weights(points, WeightScheme.INVERSE_DISTANCE, 600.0, row_standardize_rows=False)

        assert dict(w.row(0))[1] == pytest.approx(1 / 250.0, rel=1e-6)

    def test_inverse_distance_needs_cutoff(self, small_grid):
        """Test inverse-distance weights without a cutoff raise InvalidParameterError"""
        with pytest.raises(InvalidParameterError):
            build_weights(small_grid, WeightScheme.INVERSE_DISTANCE)

    def test_isolated_cell_has_empty_row(self):
        """Test a cell with no neighbour in range keeps an empty row"""
        lon = np.array([0.0, 5000.0]) / METERS_PER_DEGREE
        points = SimpleNamespace(n_cells=2, lat=np.zeros(2), lon=lon)

        w = build_weights(points, WeightScheme.INVERSE_DISTANCE, 1000.0)

        assert w.matrix.nnz == 0
        assert w.avg_neighbor_count == 0.0

    def test_apply_weights(self, small_grid):
        """Test applying row-standardized weights to a constant vector returns it"""
        w = build_weights(small_grid, WeightScheme.BINARY_CONTIGUITY)

        lagged = apply_weights(w, np.full(small_grid.n_cells, 3.0))

        np.testing.assert_allclose(lagged, 3.0)

    def test_apply_weights_dimension_mismatch(self, small_grid):
        """Test a vector of the wrong length raises DimensionError"""
        w = build_weights(small_grid, WeightScheme.BINARY_CONTIGUITY)

        with pytest.raises(DimensionError):
            apply_weights(w, np.zeros(small_grid.n_cells + 1))


class TestRowStandardize:
    """Tests for row_standardize"""

    def test_rows_sum_to_one(self):
        """Test nonempty rows sum to one and empty rows stay empty"""
        matrix = sparse.csr_matrix(np.array([[0.0, 2.0, 6.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))

        scaled = row_standardize(matrix)

        np.testing.assert_allclose(scaled.toarray(), [[0.0, 0.25, 0.75], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert matrix[0, 1] == 2.0

    def test_idempotent(self, small_grid):
        """Test standardizing an already standardized matrix changes nothing"""
        w = build_weights(small_grid, WeightScheme.INVERSE_DISTANCE, 1000.0, row_standardize_rows=False)

        once = row_standardize(w.matrix)
        twice = row_standardize(once)

        np.testing.assert_allclose(twice.toarray(), once.toarray(), rtol=0, atol=1e-15)

    def test_zero_rows_stay_zero(self):
        """Test rows with no neighbours keep no entries and a zero sum"""
        matrix = sparse.csr_matrix(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 1.0], [0.0, 0.0, 0.0]]))

        scaled = row_standardize(matrix)

        sums = np.asarray(scaled.sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, [0.0, 1.0, 0.0])
        assert scaled.getrow(0).nnz == 0
        assert scaled.getrow(2).nnz == 0

    def test_apply_weights_is_linear(self, small_grid, rng):
        """Test W(a*x + b*y) equals a*Wx + b*Wy"""
        w = build_weights(small_grid, WeightScheme.INVERSE_DISTANCE, 1000.0)
        x = rng.normal(size=small_grid.n_cells)
        y = rng.poisson(2.0, size=small_grid.n_cells)
        a, b = 2.5, -0.75

        combined = apply_weights(w, a * x + b * y)

        np.testing.assert_allclose(combined, a * apply_weights(w, x) + b * apply_weights(w, y), atol=1e-12)

    def test_apply_weights_rejects_short_matrix_input(self, small_grid):
        """Test a (n_cells - 1, k) input raises DimensionError"""
        w = build_weights(small_grid, WeightScheme.BINARY_CONTIGUITY)

        with pytest.raises(DimensionError):
            apply_weights(w, np.ones((small_grid.n_cells - 1, 2)))


class TestCatchment:
    """Tests for catchment_counts"""

    def test_interior_counts(self, large_grid):
        """Test interior cells have 18 neighbours within 1000 m and 54 within 1500 m"""
        counts = catchment_counts(large_grid, [1000.0, 1500.0])

        assert counts["1000"]["max"] == 18
        assert counts["1500"]["max"] == 54
        assert counts["1000"]["mean"] < 18

    def test_mean_matches_weight_matrix(self, large_grid):
        """Test the catchment mean equals the weight matrix's average neighbour count"""
        w = build_weights(large_grid, WeightScheme.INVERSE_DISTANCE, 1000.0)

        assert catchment_counts(large_grid, [1000.0])["1000"]["mean"] == pytest.approx(w.avg_neighbor_count)


class TestFiles:
    """Tests for boundary, cell and weight files"""

    def test_boundary_geojson(self, tmp_path, small_boundary):
        """Test a written boundary reads back as a closed ring"""
        path = write_boundary_geojson(small_boundary, tmp_path / "b.geojson")

        loaded = load_boundary_geojson(path)

        assert len(loaded) == len(small_boundary) + 1
        assert loaded[0] == loaded[-1]

    def test_feature_collection_and_multipolygon(self, tmp_path):
        """Test the largest MultiPolygon part inside a FeatureCollection is used"""
        small = [[0, 0], [0.001, 0], [0.001, 0.001], [0, 0]]
        large = [[1, 1], [1.1, 1], [1.1, 1.1], [1, 1.1], [1, 1]]
        data = {
            "type": "FeatureCollection",
            "features": [{"type": "Feature", "geometry": {"type": "MultiPolygon", "coordinates": [[small], [large]]}}],
        }
        path = tmp_path / "multi.geojson"
        path.write_text(json.dumps(data))

        loaded = load_boundary_geojson(path)

        assert len(loaded) == 5
        assert loaded[0].lon == 1

    def test_missing_boundary_file(self, tmp_path):
        """Test a missing file raises InputFileError"""
        with pytest.raises(InputFileError):
            load_boundary_geojson(tmp_path / "nope.geojson")

    def test_unsupported_geometry(self, tmp_path):
        """Test a Point geometry raises InvalidBoundaryError"""
        path = tmp_path / "point.geojson"
        path.write_text(json.dumps({"type": "Point", "coordinates": [0, 0]}))

        with pytest.raises(InvalidBoundaryError):
            load_boundary_geojson(path)

    def test_cells_csv(self, tmp_path, small_grid):
        """Test cells.csv has a header and one row per cell"""
        path = write_cells_csv(small_grid, tmp_path / "cells.csv")
        lines = path.read_text().splitlines()

        assert lines[0] == "id,lat,lon,area_km2"
        assert len(lines) == small_grid.n_cells + 1

    def test_weights_csv(self, tmp_path, small_grid):
        """Test the triplet export has one line per nonzero"""
        w = build_weights(small_grid, WeightScheme.BINARY_CONTIGUITY)
        path = weights_to_csv(w, tmp_path / "contiguity.csv")
        lines = path.read_text().splitlines()

        assert lines[0] == "i,j,weight"
        assert len(lines) == w.matrix.nnz + 1
