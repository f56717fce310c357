"""Brute-force oracles and random instance generators for the test suite.

Nothing here calls into the production geometry, catchment, indicator or
statistics code: every oracle recomputes its answer from first principles
(plain ``math``, double sums, exhaustive enumeration, all-pairs tables).
Generators return plain Python data; turning an instance into a dataset is
left to the caller.

Size bounds keep each oracle call well under 100 ms:

* ``gini_oracle``: O(n^2), n <= 50.
* ``substitution_oracle``: <= 20 activities, <= 5 candidates per subcategory.
* ``isochrone_oracle``: O(n^3), n <= 50 nodes.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Any, Sequence

R_KM = 6371.0
CATEGORY_NAMES = ("restaurants", "service", "religious", "grocery",
                  "recreation", "health", "greenspace", "education")


@dataclass
class OracleInstance:
    """A small random input bundled with the value an oracle expects for it."""

    kind: str
    seed: int
    data: Any
    expected: Any = None
    meta: dict = field(default_factory=dict)


# -- geometry ---------------------------------------------------------------------

def great_circle_km(lat1, lon1, lat2, lon2) -> float:
    """Spherical law of haversines written out with ``math`` only."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * R_KM * math.asin(min(1.0, math.sqrt(h)))


def radius_scan(points: Sequence[tuple[Any, float, float]], lat, lon, r_km) -> set:
    """Ids of ``(id, lat, lon)`` points within ``r_km`` by linear scan."""
    return {pid for pid, plat, plon in points if great_circle_km(lat, lon, plat, plon) <= r_km}


def winding_number(lat, lon, ring: Sequence[tuple[float, float]]) -> int:
    """Winding number of ``ring`` (list of (lat, lon)) around the point.

    Planar, lat as y and lon as x. Nonzero means inside.
    """
    wn = 0
    n = len(ring)
    for k in range(n):
        y1, x1 = ring[k]
        y2, x2 = ring[(k + 1) % n]
        cross = (x2 - x1) * (lat - y1) - (lon - x1) * (y2 - y1)
        if y1 <= lat:
            if y2 > lat and cross > 0:
                wn += 1
        elif y2 <= lat and cross < 0:
            wn -= 1
    return wn


def polygon_scan(points, rings: Sequence[Sequence[tuple[float, float]]]) -> set:
    """Ids of points inside any ring by the winding-number rule."""
    return {pid for pid, plat, plon in points
            if any(winding_number(plat, plon, ring) != 0 for ring in rings)}


def random_points(rng: random.Random, n: int, lat0=41.8, lon0=-87.7, span=0.3):
    return [(f"p{i:05d}", lat0 + rng.uniform(0, span), lon0 + rng.uniform(0, span)) for i in range(n)]


def random_star_ring(rng: random.Random, lat0: float, lon0: float, r: float,
                     n: int | None = None, convex: bool = False):
    """Star-shaped (or convex, if asked) ring around (lat0, lon0)."""
    n = n or rng.randint(3, 12)
    angles = sorted(rng.uniform(0, 2 * math.pi) for _ in range(n))
    if len(set(angles)) < n:
        angles = [2 * math.pi * k / n for k in range(n)]
    radii = [r] * n if convex else [r * rng.uniform(0.2, 1.0) for _ in range(n)]
    return [(lat0 + rr * math.sin(a), lon0 + rr * math.cos(a)) for a, rr in zip(angles, radii)]


def u_shape(lat0=0.0, lon0=0.0, size=3.0):
    """Concave U: a size x size square with a notch cut from the top middle third."""
    s = size / 3.0
    pts_xy = [(0, 0), (size, 0), (size, size), (2 * s, size), (2 * s, s), (s, s), (s, size), (0, size)]
    return [(lat0 + y, lon0 + x) for x, y in pts_xy]


# -- Gini -----------------------------------------------------------------------

def gini_oracle(values: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Weighted mean absolute difference: sum_ij w_i w_j |v_i - v_j| / (2 W^2 mu)."""
    values = [float(v) for v in values]
    weights = [1.0] * len(values) if weights is None else [float(w) for w in weights]
    if len(values) != len(weights) or not values:
        raise ValueError("values and weights must be nonempty and equally long")
    if any(v < 0 for v in values):
        raise ValueError("negative value")
    if any(w < 0 for w in weights):
        raise ValueError("negative weight")
    total_w = math.fsum(weights)
    if total_w <= 0:
        raise ValueError("zero total weight")
    mu = math.fsum(w * v for v, w in zip(values, weights)) / total_w
    if mu <= 0:
        raise ValueError("zero total value")
    s = math.fsum(wi * wj * abs(vi - vj)
                  for vi, wi in zip(values, weights) for vj, wj in zip(values, weights))
    return s / (2.0 * total_w * total_w * mu)


def random_weighted_series(rng: random.Random, n_max: int = 50):
    """Random nonnegative values with ties and zero weights mixed in."""
    n = rng.randint(1, n_max)
    style = rng.random()
    if style < 0.2:
        values = [float(rng.randint(0, 5)) for _ in range(n)]
    elif style < 0.4:
        values = [rng.expovariate(1.0) for _ in range(n)]
    else:
        values = [rng.uniform(0, 100) for _ in range(n)]
    weights = [rng.choice((0.0, 1.0, rng.uniform(0.1, 3000.0))) for _ in range(n)]
    if not any(weights):
        weights[0] = 1.0
    if not any(v * w > 0 for v, w in zip(values, weights)):
        values[weights.index(max(weights))] = 1.0
    return values, weights


# -- substitution ------------------------------------------------------------------

@dataclass
class SubstitutionCase:
    """Out-of-reach demand and in-reach candidate capacities per subcategory."""

    subcategory: str
    demand: int
    capacities: list[int]


def substitution_oracle(cases: Sequence[SubstitutionCase]) -> dict[str, tuple[int, list[int]]]:
    """Largest feasible substituted count per subcategory and a witness.

    Enumerates every vector ``x`` with ``0 <= x_i <= cap_i`` and
    ``sum(x) <= demand`` and keeps the one with the largest sum.
    """
    out = {}
    for case in cases:
        if case.demand > 20 or len(case.capacities) > 5:
            raise ValueError("instance too large for exhaustive enumeration")
        best, witness = 0, [0] * len(case.capacities)
        ranges = [range(min(c, case.demand) + 1) for c in case.capacities]
        for x in itertools.product(*ranges):
            s = sum(x)
            if s <= case.demand and s > best:
                best, witness = s, list(x)
        out[case.subcategory] = (best, witness)
    return out


def random_substitution_cases(rng: random.Random, max_subcats=6, max_activities=20,
                              max_candidates=5) -> list[SubstitutionCase]:
    k = rng.randint(1, max_subcats)
    budget = rng.randint(k, max_activities)
    cuts = sorted(rng.sample(range(1, budget), k - 1)) if k > 1 else []
    demands = [b - a for a, b in zip([0] + cuts, cuts + [budget])]
    cases = []
    for s, d in enumerate(demands):
        caps = [rng.choice((0, rng.randint(1, 3), rng.randint(1, 8)))
                for _ in range(rng.randint(0, max_candidates))]
        cases.append(SubstitutionCase(f"kind {s}", d, caps))
    return cases


# -- network isochrones ----------------------------------------------------------

def isochrone_oracle(n: int, edges: Sequence[tuple[int, int, float]], origin: int, budget: float) -> set[int]:
    """Nodes within ``budget`` of ``origin`` by a Floyd-Warshall table.

    ``edges`` are directed ``(u, v, minutes)`` over nodes ``0..n-1``.
    """
    if n > 50:
        raise ValueError("isochrone_oracle is bounded to 50 nodes")
    inf = math.inf
    d = [[0.0 if i == j else inf for j in range(n)] for i in range(n)]
    for u, v, t in edges:
        if t < d[u][v]:
            d[u][v] = t
    for k in range(n):
        dk = d[k]
        for i in range(n):
            dik = d[i][k]
            if dik == inf:
                continue
            di = d[i]
            for j in range(n):
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return {j for j in range(n) if d[origin][j] <= budget}


@dataclass
class GraphInstance:
    """Nodes on a jittered grid at least ~1 km apart; integer edge minutes."""

    nodes: list[tuple[str, float, float]]       # (node_id, lat, lon)
    edges: list[tuple[int, int, int, str]]      # (u, v, minutes, mode letters)

    def mode_edges(self, letter: str) -> list[tuple[int, int, float]]:
        return [(u, v, float(t)) for u, v, t, m in self.edges if letter in m]

    def mode_nodes(self, letter: str) -> set[int]:
        return {x for u, v, _, m in self.edges if letter in m for x in (u, v)}


def random_graph(rng: random.Random, n_max: int = 50, lat0=41.8, lon0=-87.7) -> GraphInstance:
    n = rng.randint(2, n_max)
    side = math.ceil(math.sqrt(n))
    step = 0.015            # ~1.67 km in latitude, ~1.24 km in longitude here
    cells = rng.sample(range(side * side), n)
    nodes = []
    for k, c in enumerate(cells):
        lat = lat0 + (c // side) * step + rng.uniform(-0.001, 0.001)
        lon = lon0 + (c % side) * step + rng.uniform(-0.001, 0.001)
        nodes.append((f"n{rng.randint(0, 10**6):07d}x{k:02d}", lat, lon))
    density = rng.uniform(0.5, 3.0)
    edges = []
    for _ in range(int(density * n)):
        u, v = rng.randrange(n), rng.randrange(n)
        if u == v:
            continue
        modes = rng.choice(("wbtc", "wbtc", "wb", "tc", "c", "w"))
        edges.append((u, v, rng.randint(1, 12), modes))
        if rng.random() < 0.5:
            edges.append((v, u, rng.randint(1, 12), modes))
    return GraphInstance(nodes, edges)


# -- indicators ---------------------------------------------------------------

def _norm(label: str) -> str:
    return " ".join(str(label).split()).lower()


def fixed_speed_indicators(pois: Sequence[dict], centroid: tuple[float, float], flows: dict[str, int],
                           radius_km: float, carbon_car: float, carbon_mode: float) -> dict | None:
    """Recompute the per-CBG indicators from raw records for a radius catchment.

    ``pois`` are dicts with poi_id, lat, lon, category, subcategory,
    total_visits; ``flows`` maps poi_id to visits for one CBG. Substitution
    fills unvisited in-reach POIs of the same subcategory nearest first,
    displacing the farthest activities first.
    """
    clat, clon = centroid
    info = {}
    for p in pois:
        d = great_circle_km(clat, clon, p["lat"], p["lon"])
        info[p["poi_id"]] = (d, d <= radius_km, p["category"], _norm(p["subcategory"]), int(p["total_visits"]))
    num_poi = sum(1 for v in info.values() if v[1])
    act_city = sum(flows.values())
    if act_city == 0:
        return None
    within = out = 0
    dist_within = dist_out = 0.0
    out_by_cat: dict[str, list] = {}
    displaced: dict[tuple[str, str], list] = {}
    for pid, visits in flows.items():
        d, ok, cat, sub, _ = info[pid]
        if ok:
            within += visits
            dist_within += visits * d
        else:
            out += visits
            dist_out += visits * d
            acc = out_by_cat.setdefault(cat, [0, 0.0])
            acc[0] += visits
            acc[1] += visits * d
            displaced.setdefault((cat, sub), []).append((d, pid, visits))
    alt_by_cat: dict[str, list] = {}
    for (cat, sub), items in displaced.items():
        demand = sum(v for _, _, v in items)
        cands = sorted((d, pid, cap) for pid, (d, ok, c, s, cap) in info.items()
                       if ok and c == cat and s == sub and pid not in flows)
        got, km = 0, 0.0
        for d, pid, cap in cands:
            take = min(cap, demand - got)
            got += take
            km += take * d
            if got == demand:
                break
        acc = alt_by_cat.setdefault(cat, [0, 0.0])
        acc[0] += got
        acc[1] += km
    dist_city = dist_within + dist_out
    prorated = sum(alt_by_cat.get(c, [0])[0] / v[0] * v[1] for c, v in out_by_cat.items() if v[0])
    alt_km = sum(v[1] for v in alt_by_cat.values())
    alt_n = sum(v[0] for v in alt_by_cat.values())
    denom = dist_out * carbon_car + dist_within * carbon_mode
    return {
        "num_poi": num_poi,
        "pct_act_15min": within / act_city,
        "pct_act_sat_15min": (within + alt_n) / act_city,
        "pct_reduced_dist": (prorated - alt_km) / dist_city if dist_city > 0 else None,
        "pct_reduced_carbon": (prorated * carbon_car - alt_km * carbon_mode) / denom if denom > 0 else None,
    }


def random_city_records(rng: random.Random, n_pois=60, n_cbgs=5, span_km=6.0, lat0=41.85, lon0=-87.65):
    """Plain-dict POIs, CBGs and flows for a small random city."""
    km_lat = math.pi * R_KM / 180.0
    km_lon = km_lat * math.cos(math.radians(lat0))
    subs = {c: [f"{c} kind {k}" for k in range(2)] for c in CATEGORY_NAMES[:4]}

    def spot():
        return (lat0 + rng.uniform(0, span_km) / km_lat, lon0 + rng.uniform(0, span_km) / km_lon)

    pois = []
    for i in range(n_pois):
        cat = rng.choice(list(subs))
        lat, lon = spot()
        pois.append({"poi_id": f"q{i:04d}", "lat": lat, "lon": lon, "category": cat,
                     "subcategory": rng.choice(subs[cat]), "total_visits": rng.choice((0, 3, 10, 40))})
    cbgs, flows = [], []
    for j in range(n_cbgs):
        lat, lon = spot()
        cbgs.append({"cbg_id": f"c{j:03d}", "lat": lat, "lon": lon, "population": rng.randint(600, 3000)})
        for p in rng.sample(pois, rng.randint(0, 8)):
            flows.append({"cbg_id": f"c{j:03d}", "poi_id": p["poi_id"], "visits": rng.randint(1, 30)})
    return pois, cbgs, flows
