"""
Spatial Tools: hexagonal grids, distances, cell lookup and weight matrices

Cells are flat-top hexagons on an axial lattice laid out in a local
equirectangular projection anchored at the boundary's south-west corner.
A cell belongs to the grid when its centroid lies inside the boundary.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.spatial import cKDTree

from blitz_eval.exceptions import (
    DimensionError,
    InputFileError,
    InvalidBoundaryError,
    InvalidParameterError,
)
from blitz_eval.utils.logger import get_logger

logger = get_logger()

EARTH_RADIUS_M = 6_371_000.0
SQRT3 = math.sqrt(3.0)

# Axial neighbour offsets of a flat-top hexagon
HEX_DIRECTIONS = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))

# Relative tolerance for on-edge containment tests
_EDGE_EPS = 1e-9


class GeoPoint(BaseModel):
    """WGS84 coordinate in degrees"""

    model_config = ConfigDict(frozen=True)

    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)


class Cell(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=0)
    centroid: GeoPoint
    vertices: Tuple[GeoPoint, ...]
    area_km2: float = Field(gt=0)

    def ring(self) -> Tuple[GeoPoint, ...]:
        """Vertices as a closed ring (first vertex repeated)"""
        return self.vertices + (self.vertices[0],)


class WeightScheme(str, Enum):
    BINARY_CONTIGUITY = "binary_contiguity"
    INVERSE_DISTANCE = "inverse_distance"


def great_circle_distance(a: GeoPoint, b: GeoPoint) -> float:
    """
    Haversine distance in meters on a sphere of radius 6,371 km.

    Args:
        a: First point
        b: Second point

    Returns:
        Distance in meters
    """
    return float(haversine(a.lat, a.lon, b.lat, b.lon))


def haversine(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in meters (inputs in degrees)"""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def points_in_polygon(px, py, poly_x, poly_y) -> np.ndarray:
    """
    Crossing-number point-in-polygon test, vectorised over points.

    Edges are half-open in y, so a point on a shared horizontal boundary is
    counted once.

    Args:
        px, py: Point coordinates
        poly_x, poly_y: Polygon vertices (open ring)

    Returns:
        Boolean array, True where the point is inside
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    poly_x = np.asarray(poly_x, dtype=float)
    poly_y = np.asarray(poly_y, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly_x)
    for i in range(n):
        x1, y1 = poly_x[i], poly_y[i]
        x2, y2 = poly_x[(i + 1) % n], poly_y[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_int)
    return inside


def polygon_area(xs, ys) -> float:
    """Signed shoelace area (positive for counter-clockwise rings)"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return 0.5 * float(np.dot(xs, np.roll(ys, -1)) - np.dot(np.roll(xs, -1), ys))


def _orientation(ax, ay, bx, by, cx, cy):
    return np.sign((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def _is_self_intersecting(xs: np.ndarray, ys: np.ndarray) -> bool:
    n = len(xs)
    x2 = np.roll(xs, -1)
    y2 = np.roll(ys, -1)
    for i in range(n - 2):
        # edges sharing a vertex with edge i are skipped
        j = np.arange(i + 2, n if i > 0 else n - 1)
        if len(j) == 0:
            continue
        o1 = _orientation(xs[i], ys[i], x2[i], y2[i], xs[j], ys[j])
        o2 = _orientation(xs[i], ys[i], x2[i], y2[i], x2[j], y2[j])
        o3 = _orientation(xs[j], ys[j], x2[j], y2[j], xs[i], ys[i])
        o4 = _orientation(xs[j], ys[j], x2[j], y2[j], x2[i], y2[i])
        if np.any((o1 * o2 < 0) & (o3 * o4 < 0)):
            return True
    return False


def hex_circumradius_m(cell_area_km2: float) -> float:
    """Circumradius of a regular hexagon with the given area"""
    return math.sqrt(2.0 * cell_area_km2 * 1e6 / (3.0 * SQRT3))


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection to meters around an origin"""

    origin_lat: float
    origin_lon: float
    ref_lat: float

    @property
    def kx(self) -> float:
        return EARTH_RADIUS_M * math.cos(math.radians(self.ref_lat)) * math.pi / 180.0

    @property
    def ky(self) -> float:
        return EARTH_RADIUS_M * math.pi / 180.0

    def to_xy(self, lat, lon) -> Tuple[np.ndarray, np.ndarray]:
        x = (np.asarray(lon, dtype=float) - self.origin_lon) * self.kx
        y = (np.asarray(lat, dtype=float) - self.origin_lat) * self.ky
        return x, y

    def to_latlon(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        lat = self.origin_lat + np.asarray(y, dtype=float) / self.ky
        lon = self.origin_lon + np.asarray(x, dtype=float) / self.kx
        return lat, lon


@dataclass(frozen=True, eq=False)
class HexGrid:
    """
    Hexagonal tessellation of a boundary polygon.

    Per-cell data is held in arrays indexed by cell id; ``cells`` builds the
    pydantic Cell records on first access.
    """

    nominal_cell_area_km2: float
    boundary: Tuple[GeoPoint, ...]
    circumradius_m: float
    projection: LocalProjection
    q: np.ndarray
    r: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    areas_km2: np.ndarray
    boundary_x: np.ndarray = field(repr=False)
    boundary_y: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("q", "r", "x", "y", "lat", "lon", "areas_km2", "boundary_x", "boundary_y"):
            getattr(self, name).setflags(write=False)

    @property
    def n_cells(self) -> int:
        return int(len(self.q))

    @property
    def centroids(self) -> np.ndarray:
        """(n_cells, 2) array of centroid (lat, lon)"""
        return np.column_stack([self.lat, self.lon])

    @cached_property
    def _id_table(self) -> Tuple[np.ndarray, int, int]:
        q_min, r_min = int(self.q.min()), int(self.r.min())
        table = np.full(
            (int(self.q.max()) - q_min + 3, int(self.r.max()) - r_min + 3), -1, dtype=np.int64
        )
        table[self.q - q_min + 1, self.r - r_min + 1] = np.arange(self.n_cells)
        return table, q_min - 1, r_min - 1

    def lookup(self, q, r) -> np.ndarray:
        """Cell ids for axial coordinates (-1 where no member cell)"""
        table, q0, r0 = self._id_table
        qi = np.asarray(q, dtype=np.int64) - q0
        ri = np.asarray(r, dtype=np.int64) - r0
        valid = (qi >= 0) & (qi < table.shape[0]) & (ri >= 0) & (ri < table.shape[1])
        out = np.full(qi.shape, -1, dtype=np.int64)
        out[valid] = table[qi[valid], ri[valid]]
        return out

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(np.column_stack([self.x, self.y]))

    def vertices_xy(self) -> Tuple[np.ndarray, np.ndarray]:
        """(n_cells, 6) vertex coordinates in projected meters, counter-clockwise"""
        angles = np.radians(np.arange(6) * 60.0)
        vx = self.x[:, None] + self.circumradius_m * np.cos(angles)[None, :]
        vy = self.y[:, None] + self.circumradius_m * np.sin(angles)[None, :]
        return vx, vy

    @cached_property
    def cells(self) -> List[Cell]:
        vx, vy = self.vertices_xy()
        vlat, vlon = self.projection.to_latlon(vx, vy)
        return [
            Cell(
                id=i,
                centroid=GeoPoint(lat=float(self.lat[i]), lon=float(self.lon[i])),
                vertices=tuple(
                    GeoPoint(lat=float(vlat[i, k]), lon=float(vlon[i, k])) for k in range(6)
                ),
                area_km2=float(self.areas_km2[i]),
            )
            for i in range(self.n_cells)
        ]

    def cell(self, cell_id: int) -> Cell:
        return self.cells[cell_id]

    def summary(self) -> Dict[str, float]:
        return {
            "n_cells": self.n_cells,
            "nominal_cell_area_km2": self.nominal_cell_area_km2,
            "mean_cell_area_km2": float(self.areas_km2.mean()),
            "circumradius_m": self.circumradius_m,
            "centroid_spacing_m": self.circumradius_m * SQRT3,
        }


def _validate_boundary(boundary: Sequence[GeoPoint]) -> Tuple[GeoPoint, ...]:
    points = list(boundary)
    if len(points) > 1 and points[0] == points[-1]:
        points = points[:-1]
    if len(points) < 3:
        raise InvalidBoundaryError(f"Boundary needs at least 3 distinct vertices, got {len(points)}")
    return tuple(points)


def build_hex_grid(boundary: Sequence[GeoPoint], nominal_cell_area_km2: float) -> HexGrid:
    """
    Tessellate a boundary polygon into hexagonal cells.

    The lattice origin hexagon sits at SW + (s, 0.75*sqrt(3)*s) where s is the
    circumradius, so rectangles measuring whole column/row spacings hold
    exactly cols x rows cells. Cells whose centroid lies inside the boundary
    are kept and numbered in (q, r) order. A boundary too small to contain any
    centroid gets the single cell nearest its area centroid.

    Args:
        boundary: Polygon vertices (open or closed ring)
        nominal_cell_area_km2: Target hexagon area

    Returns:
        HexGrid
    """
    if nominal_cell_area_km2 <= 0:
        raise InvalidParameterError(
            f"Cell area must be positive, got {nominal_cell_area_km2}", parameter="cell_area_km2"
        )
    points = _validate_boundary(boundary)
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])

    projection = LocalProjection(
        origin_lat=float(lats.min()),
        origin_lon=float(lons.min()),
        ref_lat=float((lats.min() + lats.max()) / 2.0),
    )
    bx, by = projection.to_xy(lats, lons)

    area_m2 = abs(polygon_area(bx, by))
    if area_m2 <= 0:
        raise InvalidBoundaryError("Boundary polygon has zero area")
    if _is_self_intersecting(bx, by):
        raise InvalidBoundaryError("Boundary polygon is self-intersecting")

    s = hex_circumradius_m(nominal_cell_area_km2)
    row_h = SQRT3 * s
    width, height = float(bx.max()), float(by.max())

    q_max = max(int(math.floor((width - s) / (1.5 * s))), 0)
    q_range = np.arange(0, q_max + 1)
    r_lo = int(math.floor(-0.75 - q_max / 2.0)) - 1
    r_hi = int(math.ceil(height / row_h)) + 1
    qq, rr = np.meshgrid(q_range, np.arange(r_lo, r_hi + 1), indexing="ij")
    qq, rr = qq.ravel(), rr.ravel()
    cx = s + 1.5 * s * qq
    cy = row_h * (0.75 + rr + qq / 2.0)

    keep = (cx <= width) & (cy >= 0) & (cy <= height)
    keep[keep] = points_in_polygon(cx[keep], cy[keep], bx, by)

    if not keep.any():
        q_sel, r_sel = _nearest_lattice_cell(bx, by, s)
        qq = np.array([q_sel], dtype=np.int64)
        rr = np.array([r_sel], dtype=np.int64)
        logger.info("Boundary smaller than one cell; using the cell nearest its centroid")
    else:
        qq, rr = qq[keep].astype(np.int64), rr[keep].astype(np.int64)

    # ids in (q, r) order
    order = np.lexsort((rr, qq))
    qq, rr = qq[order], rr[order]
    cx = s + 1.5 * s * qq
    cy = row_h * (0.75 + rr + qq / 2.0)
    lat_c, lon_c = projection.to_latlon(cx, cy)

    grid = HexGrid(
        nominal_cell_area_km2=float(nominal_cell_area_km2),
        boundary=points,
        circumradius_m=s,
        projection=projection,
        q=qq,
        r=rr,
        x=cx,
        y=cy,
        lat=lat_c,
        lon=lon_c,
        areas_km2=_cell_areas_km2(projection, cx, cy, lat_c, s),
        boundary_x=bx,
        boundary_y=by,
    )
    logger.info(
        f"Built hex grid: {grid.n_cells} cells, boundary {area_m2 / 1e6:.3f} km^2, "
        f"nominal cell {nominal_cell_area_km2} km^2"
    )
    return grid


def _nearest_lattice_cell(bx: np.ndarray, by: np.ndarray, s: float) -> Tuple[int, int]:
    a = polygon_area(bx, by)
    cross = bx * np.roll(by, -1) - np.roll(bx, -1) * by
    gx = float(np.sum((bx + np.roll(bx, -1)) * cross) / (6.0 * a))
    gy = float(np.sum((by + np.roll(by, -1)) * cross) / (6.0 * a))
    q, r = _axial_round(*_fractional_axial(np.array([gx]), np.array([gy]), s))
    return int(q[0]), int(r[0])


def _cell_areas_km2(projection: LocalProjection, cx, cy, lat_c, s) -> np.ndarray:
    """Shoelace area of each hexagon, scaled to the cell's own latitude"""
    angles = np.radians(np.arange(6) * 60.0)
    vx = cx[:, None] + s * np.cos(angles)[None, :]
    vy = cy[:, None] + s * np.sin(angles)[None, :]
    scale = np.cos(np.radians(lat_c)) / math.cos(math.radians(projection.ref_lat))
    area = 0.5 * np.abs(
        np.sum(vx * np.roll(vy, -1, axis=1) - np.roll(vx, -1, axis=1) * vy, axis=1)
    )
    return area * scale / 1e6


def _fractional_axial(x, y, s):
    xr = x - s
    yr = y - 0.75 * SQRT3 * s
    q = (2.0 / 3.0) * xr / s
    r = (-xr / 3.0 + SQRT3 / 3.0 * yr) / s
    return q, r


def _axial_round(qf, rf):
    sf = -qf - rf
    q = np.round(qf)
    r = np.round(rf)
    s = np.round(sf)
    dq, dr, ds = np.abs(q - qf), np.abs(r - rf), np.abs(s - sf)
    fix_q = (dq > dr) & (dq > ds)
    fix_r = ~fix_q & (dr > ds)
    q = np.where(fix_q, -r - s, q)
    r = np.where(fix_r, -q - s, r)
    return q.astype(np.int64), r.astype(np.int64)


def _in_hexagon(dx, dy, s) -> np.ndarray:
    """Closed flat-top hexagon containment relative to its centre"""
    tol = _EDGE_EPS * s
    adx, ady = np.abs(dx), np.abs(dy)
    return (ady <= SQRT3 / 2.0 * s + tol) & (SQRT3 * adx + ady <= SQRT3 * s + tol)


def locate_many(grid: HexGrid, lats, lons) -> np.ndarray:
    """
    Vectorised cell lookup.

    A point inside a member hexagon maps to it (shared edges go to the
    lowest id). A point inside the boundary but in a hexagon outside the grid
    maps to the nearest member centroid. Anything else gets -1.

    Args:
        grid: HexGrid
        lats, lons: Point coordinates in degrees

    Returns:
        int64 array of cell ids, -1 where unlocated
    """
    lats = np.atleast_1d(np.asarray(lats, dtype=float))
    lons = np.atleast_1d(np.asarray(lons, dtype=float))
    if lats.shape != lons.shape:
        raise DimensionError("lat/lon arrays differ in length", expected=len(lats), got=len(lons))
    px, py = grid.projection.to_xy(lats, lons)
    s = grid.circumradius_m
    q0, r0 = _axial_round(*_fractional_axial(px, py, s))

    sentinel = np.iinfo(np.int64).max
    best = np.full(px.shape, sentinel, dtype=np.int64)
    for dq, dr in ((0, 0), *HEX_DIRECTIONS):
        qc, rc = q0 + dq, r0 + dr
        ids = grid.lookup(qc, rc)
        cx = s + 1.5 * s * qc
        cy = SQRT3 * s * (0.75 + rc + qc / 2.0)
        hit = (ids >= 0) & _in_hexagon(px - cx, py - cy, s)
        best = np.where(hit & (ids < best), ids, best)
    out = np.where(best == sentinel, -1, best)

    missing = np.flatnonzero(out < 0)
    if len(missing):
        inside = points_in_polygon(px[missing], py[missing], grid.boundary_x, grid.boundary_y)
        snap = missing[inside]
        if len(snap):
            _, nearest = grid._centroid_tree.query(np.column_stack([px[snap], py[snap]]))
            out[snap] = nearest
    return out


def locate(grid: HexGrid, p: GeoPoint) -> Optional[int]:
    """
    Cell containing a point.

    Args:
        grid: HexGrid
        p: Point

    Returns:
        Cell id, or None when the point is outside every cell and the boundary
    """
    cell_id = int(locate_many(grid, [p.lat], [p.lon])[0])
    return None if cell_id < 0 else cell_id


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Sparse spatial weights; row i holds the neighbours of cell i"""

    scheme: WeightScheme
    cutoff_m: Optional[float]
    row_standardized: bool
    matrix: sparse.csr_matrix
    avg_neighbor_count: float

    @property
    def n_cells(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def label(self) -> str:
        if self.scheme == WeightScheme.BINARY_CONTIGUITY:
            return "contiguity"
        return f"idw_{self.cutoff_m:g}m"

    def row(self, i: int) -> List[Tuple[int, float]]:
        start, end = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return [
            (int(j), float(w))
            for j, w in zip(self.matrix.indices[start:end], self.matrix.data[start:end])
        ]

    def neighbor_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)


def pairs_within(lat, lon, cutoff_m: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    All point pairs (i < j) with great-circle distance <= cutoff_m.

    Candidate pairs come from a KD-tree on 3D sphere coordinates using the
    chord length of the cutoff; the haversine distance then filters them.

    Returns:
        (i, j, distance_m) arrays sorted by (i, j)
    """
    lat_r = np.radians(np.asarray(lat, dtype=float))
    lon_r = np.radians(np.asarray(lon, dtype=float))
    xyz = EARTH_RADIUS_M * np.column_stack(
        [np.cos(lat_r) * np.cos(lon_r), np.cos(lat_r) * np.sin(lon_r), np.sin(lat_r)]
    )
    chord = 2.0 * EARTH_RADIUS_M * math.sin(min(cutoff_m / (2.0 * EARTH_RADIUS_M), math.pi / 2))
    pairs = cKDTree(xyz).query_pairs(r=chord * (1 + 1e-9), output_type="ndarray")
    if len(pairs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    lat_d, lon_d = np.asarray(lat, dtype=float), np.asarray(lon, dtype=float)
    d = haversine(lat_d[lo], lon_d[lo], lat_d[hi], lon_d[hi])
    keep = d <= cutoff_m
    lo, hi, d = lo[keep], hi[keep], d[keep]
    order = np.lexsort((hi, lo))
    return lo[order], hi[order], d[order]


def _symmetric_csr(n: int, i, j, w) -> sparse.csr_matrix:
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    data = np.concatenate([w, w])
    mat = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def row_standardize(matrix: sparse.csr_matrix) -> sparse.csr_matrix:
    """Scale each nonempty row to sum to one; empty rows stay empty"""
    matrix = sparse.csr_matrix(matrix, copy=True)
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    counts = np.diff(matrix.indptr)
    scale = np.ones_like(sums)
    nonzero = sums != 0
    scale[nonzero] = 1.0 / sums[nonzero]
    matrix.data *= np.repeat(scale, counts)
    return matrix


def build_weights(
    grid: HexGrid,
    scheme: Union[WeightScheme, str],
    cutoff_m: Optional[float] = None,
    row_standardize_rows: bool = True,
) -> WeightMatrix:
    """
    Build a spatial weight matrix over the grid's cells.

    BinaryContiguity links border-sharing cells with weight 1. InverseDistance
    gives every other cell within cutoff_m weight 1/d (meters).

    Args:
        grid: HexGrid
        scheme: WeightScheme or its value
        cutoff_m: Distance cutoff (InverseDistance only)
        row_standardize_rows: Scale nonempty rows to sum to one

    Returns:
        WeightMatrix
    """
    scheme = WeightScheme(scheme)
    n = grid.n_cells

    if scheme == WeightScheme.BINARY_CONTIGUITY:
        cutoff_m = None
        src, dst = [], []
        for dq, dr in HEX_DIRECTIONS[:3]:
            ids = grid.lookup(grid.q + dq, grid.r + dr)
            has = ids >= 0
            src.append(np.flatnonzero(has))
            dst.append(ids[has])
        i = np.concatenate(src)
        j = np.concatenate(dst)
        matrix = _symmetric_csr(n, i, j, np.ones(len(i)))
    else:
        if cutoff_m is None or cutoff_m <= 0:
            raise InvalidParameterError(
                f"Inverse-distance weights need a positive cutoff, got {cutoff_m}",
                parameter="cutoff_m",
            )
        i, j, d = pairs_within(grid.lat, grid.lon, float(cutoff_m))
        matrix = _symmetric_csr(n, i, j, 1.0 / d)

    if row_standardize_rows:
        matrix = row_standardize(matrix)

    avg = float(np.diff(matrix.indptr).mean()) if n else 0.0
    w = WeightMatrix(
        scheme=scheme,
        cutoff_m=None if cutoff_m is None else float(cutoff_m),
        row_standardized=row_standardize_rows,
        matrix=matrix,
        avg_neighbor_count=avg,
    )
    logger.info(f"Built weights {w.label}: nnz={matrix.nnz}, avg neighbours={avg:.2f}")
    return w


def apply_weights(w: WeightMatrix, x) -> np.ndarray:
    """
    Spatially lag a per-cell vector: out[i] = sum_j w_ij x[j].

    A 2D input of shape (n_cells, k) is lagged column by column.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != w.n_cells:
        raise DimensionError(
            f"Vector length {x.shape[0]} does not match {w.n_cells} cells",
            expected=w.n_cells,
            got=int(x.shape[0]),
        )
    return np.asarray(w.matrix @ x)


def catchment_counts(grid: HexGrid, cutoffs_m: Sequence[float]) -> Dict[str, Dict[str, float]]:
    """
    Neighbour counts within each cutoff.

    Returns per cutoff the mean over all cells and the maximum (interior)
    count; the mean is the denominator used for per-neighbour spatial effects.
    """
    result = {}
    for cutoff in cutoffs_m:
        i, j, _ = pairs_within(grid.lat, grid.lon, float(cutoff))
        counts = np.bincount(np.concatenate([i, j]), minlength=grid.n_cells)
        result[f"{cutoff:g}"] = {
            "mean": float(counts.mean()) if grid.n_cells else 0.0,
            "max": int(counts.max()) if grid.n_cells else 0,
        }
    return result


def rectangle_boundary(
    origin_lat: float, origin_lon: float, width_m: float, height_m: float
) -> List[GeoPoint]:
    """
    Axis-aligned rectangle whose projected size is exactly width x height.

    Args:
        origin_lat, origin_lon: South-west corner
        width_m, height_m: Extent in meters

    Returns:
        Counter-clockwise vertices
    """
    ky = EARTH_RADIUS_M * math.pi / 180.0
    lat_top = origin_lat + height_m / ky
    kx = EARTH_RADIUS_M * math.cos(math.radians((origin_lat + lat_top) / 2.0)) * math.pi / 180.0
    lon_right = origin_lon + width_m / kx
    return [
        GeoPoint(lat=origin_lat, lon=origin_lon),
        GeoPoint(lat=origin_lat, lon=lon_right),
        GeoPoint(lat=lat_top, lon=lon_right),
        GeoPoint(lat=lat_top, lon=origin_lon),
    ]


def lattice_rectangle(
    origin_lat: float, origin_lon: float, cols: int, rows: int, cell_area_km2: float
) -> List[GeoPoint]:
    """Rectangle that tessellates into exactly cols x rows cells"""
    s = hex_circumradius_m(cell_area_km2)
    return rectangle_boundary(origin_lat, origin_lon, 1.5 * s * cols, SQRT3 * s * rows)


def load_boundary_geojson(path: Union[str, Path]) -> List[GeoPoint]:
    """
    Read the outer ring of a GeoJSON polygon.

    Accepts a FeatureCollection (first feature), Feature, Polygon or
    MultiPolygon (largest part). Coordinates are (lon, lat).
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise InputFileError(f"Boundary file not found: {path}", path=str(path))
    except (OSError, json.JSONDecodeError) as e:
        raise InputFileError(f"Cannot read boundary file {path}: {e}", path=str(path))

    geometry = data
    if data.get("type") == "FeatureCollection":
        features = data.get("features") or []
        if not features:
            raise InvalidBoundaryError("FeatureCollection has no features")
        geometry = features[0].get("geometry", {})
    elif data.get("type") == "Feature":
        geometry = data.get("geometry", {})

    gtype = geometry.get("type")
    coords = geometry.get("coordinates")
    if gtype == "Polygon":
        ring = coords[0]
    elif gtype == "MultiPolygon":
        rings = [poly[0] for poly in coords]
        ring = max(rings, key=lambda rg: abs(polygon_area([c[0] for c in rg], [c[1] for c in rg])))
    else:
        raise InvalidBoundaryError(f"Unsupported boundary geometry type: {gtype}")

    try:
        return [GeoPoint(lat=float(c[1]), lon=float(c[0])) for c in ring]
    except (TypeError, ValueError, IndexError) as e:
        raise InvalidBoundaryError(f"Malformed boundary coordinates: {e}")


def write_boundary_geojson(boundary: Sequence[GeoPoint], path: Union[str, Path]) -> Path:
    """Write a boundary as a GeoJSON Polygon Feature (closed ring)"""
    path = Path(path)
    ring = [[p.lon, p.lat] for p in boundary]
    if ring[0] != ring[-1]:
        ring.append(ring[0])
    feature = {
        "type": "Feature",
        "properties": {},
        "geometry": {"type": "Polygon", "coordinates": [ring]},
    }
    path.write_text(json.dumps(feature, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_cells_csv(grid: HexGrid, path: Union[str, Path]) -> Path:
    """Cells CSV: id, centroid lat/lon, area"""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "lat", "lon", "area_km2"])
        for i in range(grid.n_cells):
            writer.writerow(
                [i, f"{grid.lat[i]:.8f}", f"{grid.lon[i]:.8f}", f"{grid.areas_km2[i]:.6f}"]
            )
    return path


def weights_to_csv(w: WeightMatrix, path: Union[str, Path]) -> Path:
    """Triplet export: header i,j,weight; weights to 12 significant digits"""
    path = Path(path)
    coo = w.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j", "weight"])
        for k in order:
            writer.writerow([int(coo.row[k]), int(coo.col[k]), f"{coo.data[k]:.12g}"])
    return path
