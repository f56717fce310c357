"""Travel-time catchments per (CBG, mode).

Three interchangeable providers answer "which POIs can this CBG reach within
the budget":

* :class:`FixedSpeedProvider` -- straight-line radius ``speed * budget``.
* :class:`NetworkProvider` -- budget-limited Dijkstra on a road network.
* :class:`PolygonProvider` -- imported isoline polygons (GeoJSON).

Catchment distances are always straight-line centroid-to-POI km unless a
``distance_fn`` hook is supplied.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .dataset import CityDataset, DataError, Issue
from .geo import EARTH_RADIUS_KM, GeoPoint, Polygon, PolygonRing, SpatialGrid, haversine_array

log = logging.getLogger(__name__)


class Mode(str, Enum):
    WALK = "walk"
    CYCLE = "cycle"
    TRANSIT = "transit"
    CAR = "car"


MODES = tuple(Mode)
MODE_LETTERS = {"w": Mode.WALK, "b": Mode.CYCLE, "t": Mode.TRANSIT, "c": Mode.CAR}

# km/h; artifact defaults, not taken from any survey
DEFAULT_SPEEDS = {Mode.WALK: 5.0, Mode.CYCLE: 15.0, Mode.TRANSIT: 20.0, Mode.CAR: 40.0}
# access/egress legs between a location and the network
DEFAULT_SNAP_SPEEDS = {Mode.WALK: 5.0, Mode.CYCLE: 5.0, Mode.TRANSIT: 5.0, Mode.CAR: 40.0}

DEFAULT_CELL_DEG = 0.01

DistanceFn = Callable[[float, float, np.ndarray, np.ndarray], np.ndarray]


class CatchmentError(Exception):
    """A catchment could not be produced for one (CBG, mode, budget)."""


def parse_mode(value) -> Mode:
    if isinstance(value, Mode):
        return value
    v = str(value).strip().lower()
    aliases = {"walking": "walk", "bike": "cycle", "cycling": "cycle", "bicycle": "cycle",
               "pt": "transit", "public_transit": "transit", "drive": "car", "driving": "car"}
    return Mode(aliases.get(v, v))


@dataclass(frozen=True)
class CatchmentSpec:
    mode: Mode
    budget: float = 15.0

    def __post_init__(self):
        object.__setattr__(self, "mode", parse_mode(self.mode))
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        object.__setattr__(self, "budget", float(self.budget))


def _straight(lat, lon, lats, lons):
    return haversine_array(lat, lon, lats, lons)


class Catchment:
    """POIs reachable from one CBG centroid under one spec.

    Subclasses implement ``num_reachable``, ``is_reachable`` and
    ``group_candidates``. POI arguments are dataset positions.
    """

    def __init__(self, ds: CityDataset, cbg: int, spec: CatchmentSpec,
                 distance_fn: DistanceFn | None = None):
        self.ds = ds
        self.cbg = int(cbg)
        self.cbg_id = ds.cbg_ids[self.cbg]
        self.spec = spec
        self.lat = float(ds.cbg_lat[self.cbg])
        self.lon = float(ds.cbg_lon[self.cbg])
        self.warnings: list[str] = []
        self._distance = distance_fn or _straight

    @property
    def centroid(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    def dist_km(self, pois=None) -> np.ndarray:
        """Centroid-to-POI distance for the given positions (all POIs by default)."""
        if pois is None:
            return self._distance(self.lat, self.lon, self.ds.poi_lat, self.ds.poi_lon)
        pois = np.asarray(pois, dtype=np.int64)
        return self._distance(self.lat, self.lon, self.ds.poi_lat[pois], self.ds.poi_lon[pois])

    def distance_to(self, poi_id: str) -> float:
        i = int(np.searchsorted(self.ds.poi_ids, poi_id))
        if i >= self.ds.n_pois or self.ds.poi_ids[i] != poi_id:
            raise KeyError(poi_id)
        return float(self.dist_km([i])[0])

    @property
    def num_reachable(self) -> int:
        raise NotImplementedError

    def is_reachable(self, pois) -> np.ndarray:
        raise NotImplementedError

    def group_candidates(self, group: int) -> Iterator[np.ndarray]:
        """Reachable POIs of one (category, subcategory) group, yielded in
        bands of nondecreasing distance: every POI in a later band is strictly
        farther than every POI in an earlier one."""
        raise NotImplementedError

    def reachable_positions(self) -> np.ndarray:
        return np.nonzero(self.is_reachable(np.arange(self.ds.n_pois)))[0]

    @property
    def reachable(self) -> frozenset:
        return frozenset(self.ds.poi_ids[self.reachable_positions()])


class MaskCatchment(Catchment):
    def __init__(self, ds, cbg, spec, mask: np.ndarray, distance_fn=None):
        super().__init__(ds, cbg, spec, distance_fn)
        self.mask = np.asarray(mask, dtype=bool)

    @property
    def num_reachable(self) -> int:
        return int(np.count_nonzero(self.mask))

    def is_reachable(self, pois) -> np.ndarray:
        return self.mask[np.asarray(pois, dtype=np.int64)]

    def reachable_positions(self) -> np.ndarray:
        return np.nonzero(self.mask)[0]

    def group_candidates(self, group: int) -> Iterator[np.ndarray]:
        members = self.ds.group_members[group]
        yield members[self.mask[members]]


class RadiusCatchment(Catchment):
    """Everything within ``radius_km`` of the centroid (inclusive)."""

    def __init__(self, provider: "FixedSpeedProvider", cbg, spec, radius_km: float):
        super().__init__(provider.ds, cbg, spec, provider.distance_fn)
        self.provider = provider
        self.radius_km = float(radius_km)
        self._query = None

    @property
    def num_reachable(self) -> int:
        return self.provider.grid.count_radius(self.lat, self.lon, self.radius_km)

    def is_reachable(self, pois) -> np.ndarray:
        pois = np.asarray(pois, dtype=np.int64)
        d = haversine_array(self.lat, self.lon, self.ds.poi_lat[pois], self.ds.poi_lon[pois])
        return d <= self.radius_km

    def reachable_positions(self) -> np.ndarray:
        return self.provider.grid.radius_positions(self.lat, self.lon, self.radius_km)

    def group_candidates(self, group: int) -> Iterator[np.ndarray]:
        members = self.ds.group_members[group]
        if not len(members):
            return
        r = self.radius_km
        if self.provider.distance_fn:
            # a custom distance hook gets a single band
            grid = self.provider.group_grid(group)
            yield members[grid.radius_positions(self.lat, self.lon, r)]
            return
        # k-nearest batches on the chord metric, cut exactly by haversine; a batch
        # ends strictly before its k-th distance so ties never straddle two bands
        tree = self.provider.group_tree(group)
        if self._query is None:
            bound = 2.0 * math.sin(min(r / EARTH_RADIUS_KM, math.pi) / 2.0) * (1 + 1e-9) + 1e-12
            self._query = (_unit(self.lat, self.lon)[0], bound)
        xyz, bound = self._query
        lo, floor, k, n = -math.inf, -math.inf, 8, len(members)
        while True:
            kk = min(k, n)
            dd, idx = tree.query(xyz, k=kk, distance_upper_bound=bound)
            dd, idx = np.atleast_1d(dd), np.atleast_1d(idx)
            finite = np.isfinite(dd)
            full = int(finite.sum()) == kk and kk < n
            # entries well inside the previous batch were settled there
            fresh = finite & (dd >= floor * (1 - 1e-9) - 1e-15)
            pos = members[idx[fresh]]
            d = haversine_array(self.lat, self.lon, self.ds.poi_lat[pos], self.ds.poi_lon[pos])
            keep = (d <= r) & (d >= lo)
            pos, d = pos[keep], d[keep]
            if not full:
                yield pos
                return
            cut = float(d.max()) if len(d) else lo
            yield pos[d < cut]
            lo, floor = cut, float(dd[-1])
            k *= 4


class FixedSpeedProvider:
    """Reachable iff straight-line distance <= speed * budget / 60."""

    name = "fixed"

    def __init__(self, ds: CityDataset, speeds: Mapping | None = None,
                 cell_size: float = DEFAULT_CELL_DEG, distance_fn: DistanceFn | None = None):
        self.ds = ds
        self.speeds = dict(DEFAULT_SPEEDS)
        for k, v in (speeds or {}).items():
            self.speeds[parse_mode(k)] = float(v)
        if any(not v > 0 for v in self.speeds.values()):
            raise ValueError("speeds must be positive")
        self.distance_fn = distance_fn
        self.grid = SpatialGrid(ds.poi_ids, ds.poi_lat, ds.poi_lon, cell_size)
        self._group_grids = [
            SpatialGrid(ds.poi_ids[m], ds.poi_lat[m], ds.poi_lon[m], cell_size)
            for m in ds.group_members
        ]
        self._group_trees: dict[int, object] = {}

    def radius_km(self, spec: CatchmentSpec) -> float:
        return self.speeds[spec.mode] * spec.budget / 60.0

    def group_grid(self, group: int) -> SpatialGrid:
        return self._group_grids[group]

    def group_tree(self, group: int):
        tree = self._group_trees.get(group)
        if tree is None:
            from scipy.spatial import cKDTree

            m = self.ds.group_members[group]
            tree = cKDTree(_unit(self.ds.poi_lat[m], self.ds.poi_lon[m]))
            self._group_trees[group] = tree
        return tree

    def catchment(self, cbg, spec: CatchmentSpec) -> RadiusCatchment:
        i = cbg if isinstance(cbg, (int, np.integer)) else self.ds.cbg_position(cbg)
        return RadiusCatchment(self, i, spec, self.radius_km(spec))


def fixed_speed_catchment(ds: CityDataset, cbg, spec: CatchmentSpec,
                          speeds: Mapping | None = None) -> Catchment:
    return FixedSpeedProvider(ds, speeds).catchment(cbg, spec)


# -- road network -----------------------------------------------------------------


@dataclass
class RoadNetwork:
    """Directed road graph; nodes are kept sorted by ``node_id``."""

    node_ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    length_m: np.ndarray
    allowed: dict[Mode, np.ndarray]
    speed: dict[Mode, np.ndarray]

    def __post_init__(self):
        order = np.argsort(self.node_ids.astype(str), kind="stable")
        if not np.array_equal(order, np.arange(len(order))):
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            self.node_ids, self.lat, self.lon = self.node_ids[order], self.lat[order], self.lon[order]
            self.src, self.dst = rank[self.src], rank[self.dst]
        for m in MODES:
            ok = self.allowed[m]
            if np.any(ok & ~(self.speed[m] > 0)):
                raise ValueError(f"edges allowing {m.value} need a positive speed")

    @classmethod
    def from_lists(cls, nodes: Sequence[tuple[str, GeoPoint]], edges: Sequence[Mapping]) -> "RoadNetwork":
        """Build from ``(node_id, GeoPoint)`` pairs and edge dicts with keys
        ``from, to, length_m, modes`` and optional ``speed_<mode>``."""
        ids = np.array([str(n) for n, _ in nodes], dtype=object)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids")
        index = {n: i for i, n in enumerate(ids)}
        try:
            src = np.array([index[str(e["from"])] for e in edges], dtype=np.int64)
            dst = np.array([index[str(e["to"])] for e in edges], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"edge references unknown node {exc.args[0]!r}") from None
        allowed, speed = {}, {}
        for letter, m in MODE_LETTERS.items():
            allowed[m] = np.array([letter in str(e.get("modes", "")) for e in edges], dtype=bool)
            speed[m] = np.array([float(e.get(f"speed_{m.value}") or 0.0) for e in edges])
        return cls(ids, np.array([p.lat for _, p in nodes], dtype=float),
                   np.array([p.lon for _, p in nodes], dtype=float), src, dst,
                   np.array([float(e["length_m"]) for e in edges]), allowed, speed)

    def edge_minutes(self, mode: Mode) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.allowed[mode],
                            self.length_m * 60.0 / (self.speed[mode] * 1000.0), np.inf)

    def mode_nodes(self, mode: Mode) -> np.ndarray:
        ok = self.allowed[mode]
        return np.unique(np.concatenate((self.src[ok], self.dst[ok])))


def load_network(nodes_csv, edges_csv) -> RoadNetwork:
    """Read ``node_id,lat,lon`` and
    ``from,to,length_m,modes,speed_walk,speed_cycle,speed_transit,speed_car``."""
    issues: list[Issue] = []
    nodes = pd.read_csv(nodes_csv, dtype=str, keep_default_na=False)
    edges = pd.read_csv(edges_csv, dtype=str, keep_default_na=False)
    for name, df, cols in ((Path(nodes_csv).name, nodes, ("node_id", "lat", "lon")),
                           (Path(edges_csv).name, edges, ("from", "to", "length_m", "modes"))):
        missing = [c for c in cols if c not in df.columns]
        if missing:
            issues.append(Issue(name, 1, missing[0], "schema", f"header lacks {', '.join(missing)}"))
    if issues:
        raise DataError(issues)
    en = Path(edges_csv).name
    try:
        pts = [(r.node_id, GeoPoint(float(r.lat), float(r.lon))) for r in nodes.itertuples()]
    except ValueError as exc:
        raise DataError([Issue(Path(nodes_csv).name, None, None, "schema", str(exc))]) from None
    records = edges.to_dict("records")
    for line, e in enumerate(records, start=2):
        bad = set(str(e["modes"]).strip()) - set(MODE_LETTERS)
        if bad:
            issues.append(Issue(en, line, "modes", "schema", f"unknown mode letters {''.join(sorted(bad))}"))
        try:
            if float(e["length_m"]) < 0:
                raise ValueError
        except ValueError:
            issues.append(Issue(en, line, "length_m", "schema", f"bad length {e['length_m']!r}"))
    if issues:
        raise DataError(issues)
    try:
        return RoadNetwork.from_lists(pts, records)
    except ValueError as exc:
        raise DataError([Issue(en, None, None, "referential", str(exc))]) from None


def _ranked_nearest(tree_pts: np.ndarray, tree, ranks: np.ndarray, lat, lon, k: int):
    """Nearest tree point to each (lat, lon) by great-circle distance, ties to lowest rank."""
    lat = np.atleast_1d(lat)
    lon = np.atleast_1d(lon)
    xyz = _unit(lat, lon)
    k = min(k, len(tree_pts))
    _, idx = tree.query(xyz, k=k)
    idx = idx.reshape(len(lat), k)
    d = haversine_array(lat[:, None], lon[:, None], tree_pts[idx, 0], tree_pts[idx, 1])
    best = np.lexsort((ranks[idx], d), axis=-1)[:, 0] if k > 1 else np.zeros(len(lat), dtype=int)
    rows = np.arange(len(lat))
    return idx[rows, best], d[rows, best]


def _unit(lat, lon):
    p, l = np.radians(lat), np.radians(lon)
    return np.column_stack((np.cos(p) * np.cos(l), np.cos(p) * np.sin(l), np.sin(p)))


@dataclass
class _ModeGraph:
    nodes: np.ndarray           # network node positions usable by this mode
    indptr: np.ndarray
    nbr: np.ndarray
    minutes: np.ndarray
    poi_node: np.ndarray        # snapped network node per POI (-1: unsnappable)
    poi_leg_min: np.ndarray     # snap leg in minutes
    tree: object = field(repr=False, default=None)
    tree_pts: np.ndarray | None = None


def shortest_minutes(indptr, nbr, minutes, origin: int, limit: float) -> dict[int, float]:
    """Budget-limited Dijkstra; nodes settled in (time, node rank) order."""
    best = {origin: 0.0}
    done = set()
    heap = [(0.0, origin)]
    while heap:
        t, u = heapq.heappop(heap)
        if u in done:
            continue
        if t > limit:
            break
        done.add(u)
        for k in range(indptr[u], indptr[u + 1]):
            v = int(nbr[k])
            nt = t + minutes[k]
            if nt <= limit and nt < best.get(v, math.inf):
                best[v] = nt
                heapq.heappush(heap, (nt, v))
    return {u: best[u] for u in done}


class NetworkProvider:
    """POI reachable iff origin leg + network time + POI leg <= budget.

    Legs are straight lines between a location and its nearest usable node,
    travelled at the mode's snap speed. An origin farther than
    ``max_snap_m`` from every node yields an empty catchment with a warning;
    such POIs are never reachable.
    """

    name = "network"

    def __init__(self, ds: CityDataset, net: RoadNetwork, snap_speeds: Mapping | None = None,
                 max_snap_m: float = 500.0, distance_fn: DistanceFn | None = None):
        self.ds = ds
        self.net = net
        self.max_snap_km = float(max_snap_m) / 1000.0
        self.snap_speeds = dict(DEFAULT_SNAP_SPEEDS)
        for k, v in (snap_speeds or {}).items():
            self.snap_speeds[parse_mode(k)] = float(v)
        self.distance_fn = distance_fn
        self._graphs: dict[Mode, _ModeGraph] = {}

    def _graph(self, mode: Mode) -> _ModeGraph:
        g = self._graphs.get(mode)
        if g is not None:
            return g
        from scipy.spatial import cKDTree

        net = self.net
        ok = net.allowed[mode]
        if not ok.any():
            raise CatchmentError(f"mode {mode.value} is not allowed on any edge")
        minutes = net.edge_minutes(mode)[ok]
        src, dst = net.src[ok], net.dst[ok]
        order = np.lexsort((dst, src))
        src, dst, minutes = src[order], dst[order], minutes[order]
        indptr = np.searchsorted(src, np.arange(len(net.node_ids) + 1))
        nodes = net.mode_nodes(mode)
        pts = np.column_stack((net.lat[nodes], net.lon[nodes]))
        tree = cKDTree(_unit(pts[:, 0], pts[:, 1]))
        poi_node = np.full(self.ds.n_pois, -1, dtype=np.int64)
        poi_leg = np.full(self.ds.n_pois, np.inf)
        if self.ds.n_pois:
            near, d = _ranked_nearest(pts, tree, nodes, self.ds.poi_lat, self.ds.poi_lon, k=4)
            snapped = d <= self.max_snap_km
            poi_node[snapped] = nodes[near[snapped]]
            poi_leg[snapped] = d[snapped] * 60.0 / self.snap_speeds[mode]
        g = _ModeGraph(nodes, indptr, dst, minutes, poi_node, poi_leg, tree, pts)
        self._graphs[mode] = g
        return g

    def snap_origin(self, lat: float, lon: float, mode: Mode) -> tuple[int, float]:
        g = self._graph(mode)
        near, d = _ranked_nearest(g.tree_pts, g.tree, g.nodes, lat, lon, k=4)
        return int(g.nodes[near[0]]), float(d[0])

    def node_minutes(self, mode: Mode, origin: int, limit: float) -> dict[int, float]:
        g = self._graph(mode)
        return shortest_minutes(g.indptr, g.nbr, g.minutes, origin, limit)

    def catchment(self, cbg, spec: CatchmentSpec) -> MaskCatchment:
        ds = self.ds
        i = cbg if isinstance(cbg, (int, np.integer)) else ds.cbg_position(cbg)
        g = self._graph(spec.mode)
        mask = np.zeros(ds.n_pois, dtype=bool)
        origin, snap_km = self.snap_origin(ds.cbg_lat[i], ds.cbg_lon[i], spec.mode)
        if snap_km > self.max_snap_km:
            c = MaskCatchment(ds, i, spec, mask, self.distance_fn)
            msg = (f"{ds.cbg_ids[i]}/{spec.mode.value}: centroid {snap_km * 1000:.1f} m from "
                   f"nearest node exceeds max snap {self.max_snap_km * 1000:.0f} m; empty catchment")
            log.warning(msg)
            c.warnings.append(msg)
            return c
        leg = snap_km * 60.0 / self.snap_speeds[spec.mode]
        times = self.node_minutes(spec.mode, origin, spec.budget - leg)
        node_t = np.full(len(self.net.node_ids), np.inf)
        if times:
            node_t[np.fromiter(times.keys(), dtype=np.int64)] = np.fromiter(times.values(), dtype=float)
        snapped = g.poi_node >= 0
        total = np.full(ds.n_pois, np.inf)
        total[snapped] = leg + node_t[g.poi_node[snapped]] + g.poi_leg_min[snapped]
        mask = total <= spec.budget
        return MaskCatchment(ds, i, spec, mask, self.distance_fn)


def network_isochrone(net: RoadNetwork, ds: CityDataset, cbg, spec: CatchmentSpec,
                      max_snap_m: float = 500.0, snap_speeds: Mapping | None = None) -> Catchment:
    return NetworkProvider(ds, net, snap_speeds, max_snap_m).catchment(cbg, spec)


# -- isoline polygons -------------------------------------------------------------

IsolineKey = tuple[str, Mode, float]


def _budget_key(b) -> float:
    return round(float(b), 6)


def _polygon_from_coords(rings) -> Polygon:
    return Polygon(PolygonRing.from_lonlat(rings[0]),
                   tuple(PolygonRing.from_lonlat(h) for h in rings[1:]))


def parse_isolines(collection: Mapping) -> dict[IsolineKey, list[Polygon]]:
    """Index a GeoJSON FeatureCollection by ``(cbg_id, mode, budget_min)``."""
    if collection.get("type") != "FeatureCollection":
        raise ValueError("isolines must be a GeoJSON FeatureCollection")
    out: dict[IsolineKey, list[Polygon]] = {}
    for n, feat in enumerate(collection.get("features", [])):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        try:
            key = (str(props["cbg_id"]), parse_mode(props["mode"]), _budget_key(props["budget_min"]))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"feature {n}: bad properties ({exc})") from None
        if geom.get("type") == "Polygon":
            polys = [_polygon_from_coords(geom["coordinates"])]
        elif geom.get("type") == "MultiPolygon":
            polys = [_polygon_from_coords(p) for p in geom["coordinates"]]
        else:
            raise ValueError(f"feature {n}: geometry must be Polygon or MultiPolygon")
        out.setdefault(key, []).extend(polys)
    return out


def load_isolines(path) -> dict[IsolineKey, list[Polygon]]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return parse_isolines(data)
    except ValueError as exc:
        raise DataError([Issue(Path(path).name, None, None, "schema", str(exc))]) from None


class PolygonProvider:
    """Reachable iff the POI lies inside the supplied isoline (boundary inclusive)."""

    name = "polygons"

    def __init__(self, ds: CityDataset, isolines: Mapping[IsolineKey, Sequence[Polygon]],
                 cell_size: float = DEFAULT_CELL_DEG, distance_fn: DistanceFn | None = None):
        self.ds = ds
        self.isolines = {(str(k[0]), parse_mode(k[1]), _budget_key(k[2])): list(v)
                         for k, v in isolines.items()}
        self.distance_fn = distance_fn
        self.grid = SpatialGrid(ds.poi_ids, ds.poi_lat, ds.poi_lon, cell_size)

    def catchment(self, cbg, spec: CatchmentSpec) -> MaskCatchment:
        ds = self.ds
        i = cbg if isinstance(cbg, (int, np.integer)) else ds.cbg_position(cbg)
        key = (str(ds.cbg_ids[i]), spec.mode, _budget_key(spec.budget))
        polys = self.isolines.get(key)
        if polys is None:
            raise CatchmentError(f"no isoline for cbg {key[0]}, mode {key[1].value}, budget {key[2]:g}")
        mask = np.zeros(ds.n_pois, dtype=bool)
        mask[self.grid.polygon_positions(polys)] = True
        return MaskCatchment(ds, i, spec, mask, self.distance_fn)


def polygon_catchment(polygons: Mapping[IsolineKey, Sequence[Polygon]], ds: CityDataset, cbg,
                      spec: CatchmentSpec) -> Catchment:
    return PolygonProvider(ds, polygons).catchment(cbg, spec)
