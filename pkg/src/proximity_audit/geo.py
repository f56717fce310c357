"""Geospatial primitives: great-circle distance, polygon membership and a
uniform-grid spatial index.

All polygon tests are planar in (lon, lat) space, which is adequate at city
scale. Points lying on a ring boundary count as inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0

# Distance-from-edge tolerance (degrees) for boundary membership.
_BOUNDARY_TOL = 1e-12
# Guard band (km) used when accepting a whole grid cell without exact tests.
_FULL_CELL_GUARD_KM = 1e-9
# Above this radius the corner argument for whole-cell acceptance is not used.
_FULL_CELL_MAX_KM = 1000.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised great-circle distance in km (broadcasting)."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points on a sphere of radius 6371 km."""
    return float(haversine_array(a.lat, a.lon, b.lat, b.lon))


@dataclass(frozen=True)
class PolygonRing:
    """A simple ring, implicitly closed (the first vertex is not repeated)."""

    vertices: tuple[GeoPoint, ...]
    lats: np.ndarray = field(init=False, repr=False, compare=False)
    lons: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(verts) < 3:
            raise ValueError(f"ring needs at least 3 vertices, got {len(verts)}")
        for i, v in enumerate(verts):
            if v == verts[i - 1]:
                raise ValueError(f"consecutive identical vertices at position {i}")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "lats", np.array([v.lat for v in verts]))
        object.__setattr__(self, "lons", np.array([v.lon for v in verts]))

    @classmethod
    def from_lonlat(cls, coords: Iterable[Sequence[float]]) -> "PolygonRing":
        """Build from GeoJSON-style ``[lon, lat]`` pairs.

        A repeated closing vertex and runs of duplicate vertices are dropped.
        """
        pts: list[GeoPoint] = []
        for c in coords:
            p = GeoPoint(lat=c[1], lon=c[0])
            if not pts or pts[-1] != p:
                pts.append(p)
        while len(pts) > 1 and pts[-1] == pts[0]:
            pts.pop()
        return cls(tuple(pts))

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return (float(self.lats.min()), float(self.lons.min()),
                float(self.lats.max()), float(self.lons.max()))


def _ring_test(lat, lon, ring: PolygonRing) -> tuple[np.ndarray, np.ndarray]:
    """Return (even-odd inside, on-boundary) masks for arrays of points."""
    y = np.asarray(lat, dtype=float)
    x = np.asarray(lon, dtype=float)
    inside = np.zeros(y.shape, dtype=bool)
    boundary = np.zeros(y.shape, dtype=bool)
    xs, ys = ring.lons, ring.lats
    n = len(xs)
    for i in range(n):
        x1, y1 = xs[i], ys[i]
        x2, y2 = xs[(i + 1) % n], ys[(i + 1) % n]
        seg = math.hypot(x2 - x1, y2 - y1)
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        boundary |= (
            (np.abs(cross) <= _BOUNDARY_TOL * seg)
            & (x >= min(x1, x2) - _BOUNDARY_TOL) & (x <= max(x1, x2) + _BOUNDARY_TOL)
            & (y >= min(y1, y2) - _BOUNDARY_TOL) & (y <= max(y1, y2) + _BOUNDARY_TOL)
        )
        if y1 == y2:
            continue
        straddles = (y1 > y) != (y2 > y)
        x_cross = (x2 - x1) * (y - y1) / (y2 - y1) + x1
        inside ^= straddles & (x < x_cross)
    return inside, boundary


def points_in_ring(lat, lon, ring: PolygonRing) -> np.ndarray:
    inside, boundary = _ring_test(lat, lon, ring)
    return inside | boundary


def point_in_polygon(p: GeoPoint, ring: PolygonRing) -> bool:
    """Even-odd membership of ``p`` in ``ring``; boundary points are inside."""
    return bool(points_in_ring(np.array([p.lat]), np.array([p.lon]), ring)[0])


@dataclass(frozen=True)
class Polygon:
    """Exterior ring with optional holes (GeoJSON Polygon semantics)."""

    exterior: PolygonRing
    holes: tuple[PolygonRing, ...] = ()

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        return self.exterior.bbox

    def contains(self, lat, lon) -> np.ndarray:
        mask = points_in_ring(lat, lon, self.exterior)
        for hole in self.holes:
            inside, boundary = _ring_test(lat, lon, hole)
            mask &= ~(inside & ~boundary)
        return mask


def points_in_polygons(lat, lon, polygons: Sequence[Polygon]) -> np.ndarray:
    """Membership in the union of ``polygons``."""
    mask = np.zeros(np.shape(lat), dtype=bool)
    for poly in polygons:
        mask |= poly.contains(lat, lon)
    return mask


class SpatialGrid:
    """Uniform lat/lon grid over a fixed point set.

    Points are stored sorted by cell so each occupied cell is a contiguous
    slice of ``_order``. Every query prefilters by cell and then applies the
    exact predicate, so results match a linear scan. Immutable after build.
    """

    def __init__(self, ids: Sequence, lats, lons, cell_size: float):
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self.ids = np.asarray(ids, dtype=object) if len(ids) else np.empty(0, dtype=object)
        self.lats = np.asarray(lats, dtype=float).reshape(-1)
        self.lons = np.asarray(lons, dtype=float).reshape(-1)
        if not (len(self.ids) == len(self.lats) == len(self.lons)):
            raise ValueError("ids, lats and lons must have equal length")
        self._ncols = int(math.ceil(360.0 / self.cell_size)) + 2
        rows, cols = self._cell_of(self.lats, self.lons)
        codes = rows * self._ncols + cols
        self._order = np.argsort(codes, kind="stable")
        sorted_codes = codes[self._order]
        self._codes, self._starts = np.unique(sorted_codes, return_index=True)
        self._ends = np.append(self._starts[1:], len(sorted_codes)).astype(np.int64)
        self._cells: dict | None = None
        self._xyz: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.lats)

    def _cell_of(self, lat, lon):
        rows = np.floor((np.asarray(lat) + 90.0) / self.cell_size).astype(np.int64)
        cols = np.floor((np.asarray(lon) + 180.0) / self.cell_size).astype(np.int64)
        return rows, cols

    @property
    def cells(self) -> dict[tuple[int, int], list]:
        """Mapping ``(row, col) -> [point ids]`` for occupied cells."""
        if self._cells is None:
            out = {}
            for code, s, e in zip(self._codes, self._starts, self._ends):
                key = (int(code // self._ncols), int(code % self._ncols))
                out[key] = [self.ids[i] for i in self._order[s:e]]
            self._cells = out
        return self._cells

    def _block(self, lat_lo, lat_hi, lon_lo, lon_hi):
        """Occupied cells intersecting a lat/lon box: (rows, cols, starts, ends)."""
        r0, c0 = self._cell_of(max(lat_lo, -90.0), max(lon_lo, -180.0))
        r1, c1 = self._cell_of(min(lat_hi, 90.0), min(lon_hi, 180.0))
        r0, r1, c0, c1 = int(r0), int(r1), int(c0), int(c1)
        if len(self._codes) == 0 or r1 < r0 or c1 < c0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty, empty
        n_block = (r1 - r0 + 1) * (c1 - c0 + 1)
        if n_block > len(self._codes):
            rows = self._codes // self._ncols
            cols = self._codes % self._ncols
            sel = np.nonzero((rows >= r0) & (rows <= r1) & (cols >= c0) & (cols <= c1))[0]
        else:
            rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
            want = (rr * self._ncols + cc).ravel()
            pos = np.searchsorted(self._codes, want)
            pos = np.minimum(pos, len(self._codes) - 1)
            sel = pos[self._codes[pos] == want]
        codes = self._codes[sel]
        return codes // self._ncols, codes % self._ncols, self._starts[sel], self._ends[sel]

    def _slots(self, starts, ends) -> np.ndarray:
        """Cell-order slots covered by the given runs."""
        lens = ends - starts
        total = int(lens.sum())
        if total == 0:
            return np.empty(0, dtype=np.int64)
        shift = starts - np.concatenate(([0], np.cumsum(lens)[:-1]))
        return np.arange(total) + np.repeat(shift, lens)

    def _gather(self, starts, ends) -> np.ndarray:
        return self._order[self._slots(starts, ends)]

    def _edge_hits(self, lat: float, lon: float, r: float, starts, ends) -> np.ndarray:
        """Positions in boundary cells with haversine distance <= r.

        A dot product against cos(r/R) settles all but a thin shell; only
        that shell pays for the exact haversine.
        """
        slots = self._slots(starts, ends)
        if not len(slots):
            return slots
        if self._xyz is None:
            p = np.radians(self.lats[self._order])
            l = np.radians(self.lons[self._order])
            self._xyz = np.stack((np.cos(p) * np.cos(l), np.cos(p) * np.sin(l), np.sin(p)))
        p0, l0 = math.radians(lat), math.radians(lon)
        x0, y0, z0 = math.cos(p0) * math.cos(l0), math.cos(p0) * math.sin(l0), math.sin(p0)
        xyz = self._xyz
        dot = xyz[0, slots] * x0 + xyz[1, slots] * y0 + xyz[2, slots] * z0
        c = math.cos(min(r / EARTH_RADIUS_KM, math.pi))
        keep = dot > c + 1e-12
        shell = np.nonzero(~keep & (dot >= c - 1e-12))[0]
        pos = self._order[slots]
        if len(shell):
            sp = pos[shell]
            keep[shell] = haversine_array(lat, lon, self.lats[sp], self.lons[sp]) <= r
        return pos[keep]

    def _radius_cells(self, lat: float, lon: float, r: float):
        """Split cells around a disk into wholly-inside and boundary sets."""
        delta = r / EARTH_RADIUS_KM
        dlat = math.degrees(delta)
        lat_lo, lat_hi = lat - dlat, lat + dlat
        if delta >= math.pi or lat_hi >= 90.0 or lat_lo <= -90.0:
            dlon = 360.0
        else:
            s = math.sin(delta) / math.cos(math.radians(lat))
            dlon = 360.0 if s >= 1.0 else math.degrees(math.asin(s))
        pad = 1e-9
        rows, cols, starts, ends = self._block(lat_lo - pad, lat_hi + pad,
                                               lon - dlon - pad, lon + dlon + pad)
        if r >= _FULL_CELL_MAX_KM or len(rows) == 0:
            return np.zeros(len(rows), dtype=bool), starts, ends
        cs = self.cell_size
        lat0 = rows * cs - 90.0
        lon0 = cols * cs - 180.0
        far = np.zeros(len(rows))
        for dy in (0.0, cs):
            for dx in (0.0, cs):
                corner_lat = np.clip(lat0 + dy, -90.0, 90.0)
                corner_lon = np.clip(lon0 + dx, -180.0, 180.0)
                far = np.maximum(far, haversine_array(lat, lon, corner_lat, corner_lon))
        full = far <= r - _FULL_CELL_GUARD_KM
        return full, starts, ends

    def radius_positions(self, lat: float, lon: float, r: float) -> np.ndarray:
        """Positions (input order) of points with haversine distance <= r, ascending."""
        if r < 0:
            raise ValueError("radius must be nonnegative")
        full, starts, ends = self._radius_cells(lat, lon, r)
        inner = self._gather(starts[full], ends[full])
        edge = self._edge_hits(lat, lon, r, starts[~full], ends[~full])
        return np.sort(np.concatenate((inner, edge)))

    def count_radius(self, lat: float, lon: float, r: float) -> int:
        full, starts, ends = self._radius_cells(lat, lon, r)
        n = int((ends[full] - starts[full]).sum())
        return n + len(self._edge_hits(lat, lon, r, starts[~full], ends[~full]))

    def polygon_positions(self, polygons: Sequence[Polygon]) -> np.ndarray:
        """Positions of points inside the union of ``polygons``, ascending."""
        hits = []
        for poly in polygons:
            lat_lo, lon_lo, lat_hi, lon_hi = poly.bbox
            _, _, starts, ends = self._block(lat_lo, lat_hi, lon_lo, lon_hi)
            cand = self._gather(starts, ends)
            if not len(cand):
                continue
            la, lo = self.lats[cand], self.lons[cand]
            in_box = (la >= lat_lo) & (la <= lat_hi) & (lo >= lon_lo) & (lo <= lon_hi)
            cand = cand[in_box]
            hits.append(cand[poly.contains(self.lats[cand], self.lons[cand])])
        if not hits:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(hits))


def build_index(points: Sequence[tuple[object, GeoPoint]], cell_size: float) -> SpatialGrid:
    ids = [pid for pid, _ in points]
    lats = [p.lat for _, p in points]
    lons = [p.lon for _, p in points]
    return SpatialGrid(ids, lats, lons, cell_size)


def query_radius(index: SpatialGrid, center: GeoPoint, r: float) -> set:
    """Ids of indexed points within ``r`` km of ``center`` (inclusive)."""
    return {index.ids[i] for i in index.radius_positions(center.lat, center.lon, r)}


def query_polygon(index: SpatialGrid, polygons: Sequence[Polygon]) -> set:
    return {index.ids[i] for i in index.polygon_positions(polygons)}


def nearest_position(index: SpatialGrid, lat: float, lon: float, max_km: float,
                     tiebreak: np.ndarray | None = None) -> tuple[int, float] | None:
    """Nearest indexed point within ``max_km``; ties go to the lowest ``tiebreak``
    rank (input position when omitted). None when nothing is in range."""
    cand = index.radius_positions(lat, lon, max_km)
    if not len(cand):
        return None
    d = haversine_array(lat, lon, index.lats[cand], index.lons[cand])
    rank = cand if tiebreak is None else tiebreak[cand]
    best = np.lexsort((rank, d))[0]
    return int(cand[best]), float(d[best])
