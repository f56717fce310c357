import math
import random

import numpy as np
import pytest

from proximity_audit.geo import (EARTH_RADIUS_KM, GeoPoint, Polygon, PolygonRing, build_index, haversine_array,
                                 haversine_km, point_in_polygon, points_in_ring, query_polygon, query_radius)
from proximity_audit import testkit as tk


def test_identical_points_zero():
    p = GeoPoint(41.9, -87.6)
    assert haversine_km(p, p) == 0.0


def test_one_degree_on_equator():
    d = haversine_km(GeoPoint(0, 0), GeoPoint(0, 1))
    assert d == pytest.approx(math.pi / 180 * 6371.0, abs=1e-9)
    assert d == pytest.approx(111.1949, abs=1e-3)


def test_symmetry_and_bounds():
    rng = random.Random(3)
    for _ in range(1000):
        a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        d = haversine_km(a, b)
        assert d == haversine_km(b, a)
        assert 0.0 <= d <= math.pi * EARTH_RADIUS_KM + 1e-9
        assert d == pytest.approx(tk.great_circle_km(a.lat, a.lon, b.lat, b.lon), abs=1e-7)


def test_antipodes():
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 180)) == pytest.approx(math.pi * EARTH_RADIUS_KM)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 180.1), (float("nan"), 0), (0, float("inf"))])
def test_geopoint_rejects_bad_coordinates(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_haversine_array_broadcasts():
    d = haversine_array(0.0, 0.0, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert d.shape == (2,)
    assert d[0] == pytest.approx(d[1])


UNIT_SQUARE = PolygonRing([GeoPoint(0, 0), GeoPoint(0, 1), GeoPoint(1, 1), GeoPoint(1, 0)])


def test_ring_validation():
    with pytest.raises(ValueError):
        PolygonRing([GeoPoint(0, 0), GeoPoint(1, 1)])
    with pytest.raises(ValueError):
        PolygonRing([GeoPoint(0, 0), GeoPoint(0, 0), GeoPoint(1, 1), GeoPoint(1, 0)])
    with pytest.raises(ValueError):
        # wraps around: last equals first
        PolygonRing([GeoPoint(0, 0), GeoPoint(1, 1), GeoPoint(1, 0), GeoPoint(0, 0)])


def test_from_lonlat_drops_closing_vertex():
    ring = PolygonRing.from_lonlat([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])
    assert len(ring.vertices) == 4
    assert ring.vertices[1] == GeoPoint(0, 1)


def test_square_interior_and_exterior():
    assert point_in_polygon(GeoPoint(0.5, 0.5), UNIT_SQUARE)
    assert not point_in_polygon(GeoPoint(1.5, 0.5), UNIT_SQUARE)


@pytest.mark.parametrize("lat,lon", [(0, 0), (1, 1), (0, 0.5), (0.5, 1), (1, 0.3), (0.25, 0)])
def test_boundary_counts_as_inside(lat, lon):
    assert point_in_polygon(GeoPoint(lat, lon), UNIT_SQUARE)


def test_concave_notch_is_outside():
    verts = tk.u_shape()
    ring = PolygonRing([GeoPoint(a, b) for a, b in verts])
    assert not point_in_polygon(GeoPoint(2.0, 1.5), ring)
    assert tk.winding_number(2.0, 1.5, verts) == 0
    assert point_in_polygon(GeoPoint(0.5, 1.5), ring)
    assert point_in_polygon(GeoPoint(2.0, 0.5), ring)


def test_polygon_hole():
    outer = PolygonRing([GeoPoint(0, 0), GeoPoint(0, 4), GeoPoint(4, 4), GeoPoint(4, 0)])
    hole = PolygonRing([GeoPoint(1, 1), GeoPoint(1, 3), GeoPoint(3, 3), GeoPoint(3, 1)])
    poly = Polygon(outer, [hole])
    got = poly.contains(np.array([0.5, 2.0, 1.0]), np.array([0.5, 2.0, 2.0]))
    assert got.tolist() == [True, False, True]   # hole edge belongs to the polygon


@pytest.mark.parametrize("convex", [True, False])
def test_agrees_with_winding_number(convex):
    rng = random.Random(11 + convex)
    for _ in range(500):
        verts = tk.random_star_ring(rng, 0.0, 0.0, 1.0, convex=convex)
        ring = PolygonRing([GeoPoint(a, b) for a, b in verts])
        lat = np.array([rng.uniform(-1.2, 1.2) for _ in range(20)])
        lon = np.array([rng.uniform(-1.2, 1.2) for _ in range(20)])
        got = points_in_ring(lat, lon, ring)
        want = [tk.winding_number(a, b, verts) != 0 for a, b in zip(lat, lon)]
        assert got.tolist() == want


def test_empty_index():
    idx = build_index([], 0.01)
    assert len(idx) == 0
    assert query_radius(idx, GeoPoint(0, 0), 100.0) == set()
    square = Polygon(UNIT_SQUARE)
    assert query_polygon(idx, [square]) == set()


def test_cell_size_must_be_positive():
    with pytest.raises(ValueError):
        build_index([("a", GeoPoint(0, 0))], 0.0)


def test_zero_radius():
    pts = [("a", GeoPoint(41.9, -87.6)), ("b", GeoPoint(41.9001, -87.6))]
    idx = build_index(pts, 0.01)
    assert query_radius(idx, GeoPoint(41.9, -87.6), 0.0) == {"a"}
    assert query_radius(idx, GeoPoint(41.95, -87.6), 0.0) == set()


def test_every_point_in_exactly_one_cell():
    rng = random.Random(5)
    pts = [(p, GeoPoint(a, b)) for p, a, b in tk.random_points(rng, 2000)]
    idx = build_index(pts, 0.013)
    listed = [i for ids in idx.cells.values() for i in ids]
    assert sorted(listed) == sorted(p for p, _ in pts)


@pytest.mark.parametrize("cell", [0.002, 0.01, 0.05])
def test_radius_query_matches_linear_scan(cell):
    rng = random.Random(int(cell * 1000))
    raw = tk.random_points(rng, 10_000)
    idx = build_index([(p, GeoPoint(a, b)) for p, a, b in raw], cell)
    for r in (0.0, 0.3, 1.25, 3.75, 10.0, 40.0):
        lat, lon = 41.8 + rng.uniform(0, 0.3), -87.7 + rng.uniform(0, 0.3)
        assert query_radius(idx, GeoPoint(lat, lon), r) == tk.radius_scan(raw, lat, lon, r)


def test_polygon_query_matches_linear_scan():
    rng = random.Random(8)
    raw = tk.random_points(rng, 10_000, lat0=0.0, lon0=0.0, span=3.0)
    idx = build_index([(p, GeoPoint(a, b)) for p, a, b in raw], 0.1)
    for verts in (tk.u_shape(), tk.random_star_ring(rng, 1.5, 1.5, 1.2, n=9)):
        ring = PolygonRing([GeoPoint(a, b) for a, b in verts])
        assert query_polygon(idx, [Polygon(ring)]) == tk.polygon_scan(raw, [verts])
