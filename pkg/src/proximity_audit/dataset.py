"""City datasets: input schemas, CSV loading with quality filters, canonical
dumps and a synthetic city generator with planted structure.

A dataset holds three tables, always sorted by id:

* POIs ``poi_id,lat,lon,category,subcategory,total_visits,is_parent``
* CBGs ``cbg_id,lat,lon,population,median_income,pct_white,pct_black,pct_asian,pct_hispanic``
* flows ``cbg_id,poi_id,visits`` (visits from a home CBG to a POI)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .geo import EARTH_RADIUS_KM, GeoPoint


class FunctionCategory(str, Enum):
    RESTAURANTS = "restaurants"
    SERVICE = "service"
    RELIGIOUS = "religious"
    GROCERY = "grocery"
    RECREATION = "recreation"
    HEALTH = "health"
    GREENSPACE = "greenspace"
    EDUCATION = "education"


CATEGORIES = tuple(c.value for c in FunctionCategory)

POI_COLUMNS = ("poi_id", "lat", "lon", "category", "subcategory", "total_visits", "is_parent")
CBG_COLUMNS = ("cbg_id", "lat", "lon", "population", "median_income",
               "pct_white", "pct_black", "pct_asian", "pct_hispanic")
FLOW_COLUMNS = ("cbg_id", "poi_id", "visits")
DEMOGRAPHICS = ("median_income", "pct_white", "pct_black", "pct_asian", "pct_hispanic")

_TRUE = {"true", "1", "yes", "t", "y"}
_FALSE = {"false", "0", "no", "f", "n", ""}


def normalize_subcategory(label: str) -> str:
    return " ".join(str(label).split()).lower()


@dataclass(frozen=True)
class PoiRecord:
    poi_id: str
    location: GeoPoint
    category: FunctionCategory
    subcategory: str
    total_visits: int
    is_parent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "category", FunctionCategory(self.category))
        if self.total_visits < 0:
            raise ValueError(f"POI {self.poi_id}: negative total_visits")
        if not normalize_subcategory(self.subcategory):
            raise ValueError(f"POI {self.poi_id}: empty subcategory")


@dataclass(frozen=True)
class CbgRecord:
    cbg_id: str
    centroid: GeoPoint
    population: int
    median_income: float | None = None
    pct_white: float | None = None
    pct_black: float | None = None
    pct_asian: float | None = None
    pct_hispanic: float | None = None

    def __post_init__(self):
        if self.population < 0:
            raise ValueError(f"CBG {self.cbg_id}: negative population")
        for name in ("pct_white", "pct_black", "pct_asian", "pct_hispanic"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"CBG {self.cbg_id}: {name}={v} outside [0, 1]")


@dataclass(frozen=True)
class FlowRecord:
    cbg_id: str
    poi_id: str
    visits: int

    def __post_init__(self):
        if self.visits < 1:
            raise ValueError(f"flow {self.cbg_id}->{self.poi_id}: visits must be >= 1")


@dataclass(frozen=True)
class QualityConfig:
    min_visits: int = 5


@dataclass(frozen=True)
class Issue:
    file: str
    line: int | None
    column: str | None
    kind: str  # schema | duplicate | referential | parent | threshold
    message: str

    def __str__(self):
        loc = self.file
        if self.line is not None:
            loc += f":{self.line}"
        if self.column:
            loc += f" [{self.column}]"
        return f"{loc}: {self.kind}: {self.message}"


class DataError(Exception):
    """Input data violates a schema or referential constraint."""

    def __init__(self, issues: list[Issue]):
        self.issues = list(issues)
        first = self.issues[0] if self.issues else None
        self.file = first.file if first else None
        self.line = first.line if first else None
        self.column = first.column if first else None
        shown = "; ".join(str(i) for i in self.issues[:10])
        more = f" (+{len(self.issues) - 10} more)" if len(self.issues) > 10 else ""
        super().__init__(shown + more)


class CityDataset:
    """Validated POIs, CBGs and flows for one city. Treat as immutable.

    Tables are sorted ascending by id (flows by ``(cbg_id, poi_id)``); the
    numpy views below are positional against those orders.
    """

    def __init__(self, city_id: str, pois: pd.DataFrame, cbgs: pd.DataFrame, flows: pd.DataFrame):
        self.city_id = str(city_id)
        self.pois = pois.sort_values("poi_id", kind="stable").reset_index(drop=True)
        self.cbgs = cbgs.sort_values("cbg_id", kind="stable").reset_index(drop=True)
        self.flows = flows.sort_values(["cbg_id", "poi_id"], kind="stable").reset_index(drop=True)

        self.poi_ids = self.pois["poi_id"].to_numpy(dtype=object)
        self.poi_lat = self.pois["lat"].to_numpy(dtype=float)
        self.poi_lon = self.pois["lon"].to_numpy(dtype=float)
        self.poi_capacity = self.pois["total_visits"].to_numpy(dtype=np.int64)
        self.poi_category = self.pois["category"].to_numpy(dtype=object)
        sub_keys = self.pois["subcategory"].map(normalize_subcategory)
        # "\x1f" sorts below every printable character, so joined keys order like tuples
        joined = self.pois["category"].astype(str) + "\x1f" + sub_keys.astype(str)
        codes, uniques = pd.factorize(joined, sort=True)
        self.poi_group = np.asarray(codes, dtype=np.int64)
        self.group_keys: list[tuple[str, str]] = [tuple(k.split("\x1f", 1)) for k in uniques]
        self.group_lookup = {k: g for g, k in enumerate(self.group_keys)}
        by_group = np.argsort(self.poi_group, kind="stable")
        cuts = np.searchsorted(self.poi_group[by_group], np.arange(len(self.group_keys) + 1))
        self.group_members = [by_group[a:b] for a, b in zip(cuts[:-1], cuts[1:])]

        self.cbg_ids = self.cbgs["cbg_id"].to_numpy(dtype=object)
        self.cbg_lat = self.cbgs["lat"].to_numpy(dtype=float)
        self.cbg_lon = self.cbgs["lon"].to_numpy(dtype=float)
        self.cbg_population = self.cbgs["population"].to_numpy(dtype=np.int64)

        poi_pos = pd.Index(self.poi_ids).get_indexer(self.flows["poi_id"])
        cbg_pos = pd.Index(self.cbg_ids).get_indexer(self.flows["cbg_id"])
        if len(self.flows) and ((poi_pos < 0).any() or (cbg_pos < 0).any()):
            bad = sorted(set(self.flows["poi_id"][poi_pos < 0]) | set(self.flows["cbg_id"][cbg_pos < 0]))
            raise DataError([Issue("flows", None, None, "referential",
                                   f"unresolved ids: {', '.join(map(str, bad[:20]))}")])
        self.flow_poi = np.asarray(poi_pos, dtype=np.int64)
        self.flow_cbg = np.asarray(cbg_pos, dtype=np.int64)
        self.flow_visits = self.flows["visits"].to_numpy(dtype=np.int64)
        bounds = np.searchsorted(self.flow_cbg, np.arange(len(self.cbg_ids) + 1))
        self.flow_start = bounds[:-1]
        self.flow_end = bounds[1:]
        self.act_city = np.bincount(self.flow_cbg, weights=self.flow_visits,
                                    minlength=len(self.cbg_ids)).astype(np.int64)
        self._cbg_lookup = {c: i for i, c in enumerate(self.cbg_ids)}

    # -- record-level access -------------------------------------------------

    @classmethod
    def from_records(cls, pois: Iterable[PoiRecord], cbgs: Iterable[CbgRecord],
                     flows: Iterable[FlowRecord], city_id: str = "city") -> "CityDataset":
        pois, cbgs, flows = list(pois), list(cbgs), list(flows)
        poi_df = pd.DataFrame({
            "poi_id": [p.poi_id for p in pois],
            "lat": [p.location.lat for p in pois],
            "lon": [p.location.lon for p in pois],
            "category": [p.category.value for p in pois],
            "subcategory": [p.subcategory for p in pois],
            "total_visits": np.array([p.total_visits for p in pois], dtype=np.int64),
            "is_parent": np.array([p.is_parent for p in pois], dtype=bool),
        }, columns=list(POI_COLUMNS))
        cbg_df = pd.DataFrame({
            "cbg_id": [c.cbg_id for c in cbgs],
            "lat": [c.centroid.lat for c in cbgs],
            "lon": [c.centroid.lon for c in cbgs],
            "population": np.array([c.population for c in cbgs], dtype=np.int64),
            **{k: np.array([np.nan if getattr(c, k) is None else getattr(c, k) for c in cbgs], dtype=float)
               for k in DEMOGRAPHICS},
        }, columns=list(CBG_COLUMNS))
        flow_df = pd.DataFrame({
            "cbg_id": [f.cbg_id for f in flows],
            "poi_id": [f.poi_id for f in flows],
            "visits": np.array([f.visits for f in flows], dtype=np.int64),
        }, columns=list(FLOW_COLUMNS))
        for name, df, col in (("pois", poi_df, "poi_id"), ("cbgs", cbg_df, "cbg_id")):
            dup = df[col][df[col].duplicated()]
            if len(dup):
                raise DataError([Issue(name, None, col, "duplicate", f"duplicate id {dup.iloc[0]!r}")])
        return cls(city_id, poi_df, cbg_df, flow_df)

    def cbg_position(self, cbg_id: str) -> int:
        return self._cbg_lookup[cbg_id]

    def cbg_centroid(self, cbg) -> GeoPoint:
        i = cbg if isinstance(cbg, (int, np.integer)) else self.cbg_position(cbg)
        return GeoPoint(self.cbg_lat[i], self.cbg_lon[i])

    def flows_of(self, cbg: int) -> tuple[np.ndarray, np.ndarray]:
        """(poi positions, visits) of one CBG's flows, ordered by poi_id."""
        s, e = self.flow_start[cbg], self.flow_end[cbg]
        return self.flow_poi[s:e], self.flow_visits[s:e]

    def poi_record(self, i: int) -> PoiRecord:
        row = self.pois.iloc[i]
        return PoiRecord(row.poi_id, GeoPoint(row.lat, row.lon), FunctionCategory(row.category),
                         row.subcategory, int(row.total_visits), bool(row.is_parent))

    def cbg_record(self, i: int) -> CbgRecord:
        row = self.cbgs.iloc[i]
        demo = {k: (None if pd.isna(row[k]) else float(row[k])) for k in DEMOGRAPHICS}
        return CbgRecord(row.cbg_id, GeoPoint(row.lat, row.lon), int(row.population), **demo)

    @property
    def n_pois(self) -> int:
        return len(self.poi_ids)

    @property
    def n_cbgs(self) -> int:
        return len(self.cbg_ids)

    def __eq__(self, other):
        if not isinstance(other, CityDataset):
            return NotImplemented
        return self.city_id == other.city_id and dump_bytes(self) == dump_bytes(other)

    def __repr__(self):
        return (f"CityDataset({self.city_id!r}, pois={self.n_pois}, "
                f"cbgs={self.n_cbgs}, flows={len(self.flows)})")


# -- CSV parsing ----------------------------------------------------------------


def _read_csv(path: Path, columns: tuple[str, ...], issues: list[Issue]) -> pd.DataFrame | None:
    name = path.name
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        issues.append(Issue(name, 1, None, "schema", "missing header"))
        return None
    except UnicodeDecodeError as exc:
        issues.append(Issue(name, None, None, "schema", f"not UTF-8: {exc}"))
        return None
    missing = [c for c in columns if c not in df.columns]
    if missing:
        issues.append(Issue(name, 1, missing[0], "schema", f"header lacks column(s) {', '.join(missing)}"))
        return None
    return df


def _lines(mask: np.ndarray) -> np.ndarray:
    # header is line 1
    return np.nonzero(mask)[0] + 2


def _parse_float(df, name, col, issues, *, required=True, lo=None, hi=None) -> np.ndarray:
    raw = df[col].to_numpy(dtype=str)
    raw = np.char.strip(raw)
    empty = raw == ""
    out = np.full(len(raw), np.nan)
    try:
        out[~empty] = raw[~empty].astype(np.float64)
    except ValueError:
        for i in np.nonzero(~empty)[0]:
            try:
                out[i] = float(raw[i])
            except ValueError:
                issues.append(Issue(name, int(i) + 2, col, "schema", f"not a number: {raw[i]!r}"))
                empty[i] = True
    bad = ~empty & ~np.isfinite(out)
    if lo is not None:
        bad |= ~empty & (out < lo)
    if hi is not None:
        bad |= ~empty & (out > hi)
    for line in _lines(bad):
        issues.append(Issue(name, int(line), col, "schema", f"value {raw[line - 2]!r} out of range"))
    if required:
        blank = (raw == "")
        for line in _lines(blank):
            issues.append(Issue(name, int(line), col, "schema", "required value missing"))
    return out


def _parse_int(df, name, col, issues, *, lo=0) -> np.ndarray:
    vals = _parse_float(df, name, col, issues, lo=lo)
    frac = np.isfinite(vals) & (vals != np.floor(vals))
    for line in _lines(frac):
        issues.append(Issue(name, int(line), col, "schema", f"not an integer: {vals[line - 2]!r}"))
    return np.where(np.isfinite(vals), vals, 0).astype(np.int64)


def _parse_ids(df, name, col, issues, *, unique=True) -> np.ndarray:
    ids = np.char.strip(df[col].to_numpy(dtype=str)).astype(object)
    for line in _lines(ids == ""):
        issues.append(Issue(name, int(line), col, "schema", "empty id"))
    if unique:
        dup = pd.Series(ids).duplicated().to_numpy()
        for line in _lines(dup):
            issues.append(Issue(name, int(line), col, "duplicate", f"duplicate id {ids[line - 2]!r}"))
    return ids


@dataclass
class RawTables:
    pois: pd.DataFrame
    cbgs: pd.DataFrame
    flows: pd.DataFrame
    flow_lines: np.ndarray


def resolve_paths(paths) -> dict[str, Path]:
    """Accept a directory holding pois/cbgs/flows.csv or an explicit mapping."""
    if isinstance(paths, (str, Path)):
        root = Path(paths)
        return {k: root / f"{k}.csv" for k in ("pois", "cbgs", "flows")}
    return {k: Path(paths[k]) for k in ("pois", "cbgs", "flows")}


def inspect_files(paths, config: QualityConfig = QualityConfig()) -> tuple[RawTables | None, list[Issue]]:
    """Parse the three input files and report every issue found.

    Returned tables are unfiltered (parents and sub-threshold flows kept).
    Raises ``OSError`` for unreadable files.
    """
    paths = resolve_paths(paths)
    issues: list[Issue] = []
    raw = {}
    for key, cols in (("pois", POI_COLUMNS), ("cbgs", CBG_COLUMNS), ("flows", FLOW_COLUMNS)):
        with open(paths[key], "rb"):
            pass
        raw[key] = _read_csv(paths[key], cols, issues)
    if any(v is None for v in raw.values()):
        return None, issues

    pn, cn, fn = paths["pois"].name, paths["cbgs"].name, paths["flows"].name
    p = raw["pois"]
    cats = np.char.lower(np.char.strip(p["category"].to_numpy(dtype=str)))
    for line in _lines(~np.isin(cats, CATEGORIES)):
        issues.append(Issue(pn, int(line), "category", "schema",
                            f"unknown category {p['category'].iloc[line - 2]!r}"))
    subs = p["subcategory"].to_numpy(dtype=str)
    for line in _lines(np.char.strip(subs) == ""):
        issues.append(Issue(pn, int(line), "subcategory", "schema", "empty subcategory"))
    parent_raw = np.char.lower(np.char.strip(p["is_parent"].to_numpy(dtype=str)))
    for line in _lines(~np.isin(parent_raw, list(_TRUE | _FALSE))):
        issues.append(Issue(pn, int(line), "is_parent", "schema", f"not a boolean: {parent_raw[line - 2]!r}"))
    pois = pd.DataFrame({
        "poi_id": _parse_ids(p, pn, "poi_id", issues),
        "lat": _parse_float(p, pn, "lat", issues, lo=-90, hi=90),
        "lon": _parse_float(p, pn, "lon", issues, lo=-180, hi=180),
        "category": cats.astype(object),
        "subcategory": subs.astype(object),
        "total_visits": _parse_int(p, pn, "total_visits", issues),
        "is_parent": np.isin(parent_raw, list(_TRUE)),
    })

    c = raw["cbgs"]
    cbgs = pd.DataFrame({
        "cbg_id": _parse_ids(c, cn, "cbg_id", issues),
        "lat": _parse_float(c, cn, "lat", issues, lo=-90, hi=90),
        "lon": _parse_float(c, cn, "lon", issues, lo=-180, hi=180),
        "population": _parse_int(c, cn, "population", issues),
        "median_income": _parse_float(c, cn, "median_income", issues, required=False, lo=0),
        **{k: _parse_float(c, cn, k, issues, required=False, lo=0, hi=1)
           for k in ("pct_white", "pct_black", "pct_asian", "pct_hispanic")},
    })

    f = raw["flows"]
    flows = pd.DataFrame({
        "cbg_id": _parse_ids(f, fn, "cbg_id", issues, unique=False),
        "poi_id": _parse_ids(f, fn, "poi_id", issues, unique=False),
        "visits": _parse_int(f, fn, "visits", issues, lo=1),
    })
    flow_lines = np.arange(len(flows)) + 2
    dup = flows.duplicated(["cbg_id", "poi_id"]).to_numpy()
    for line in _lines(dup):
        issues.append(Issue(fn, int(line), None, "duplicate",
                            f"repeated flow {flows.cbg_id[line - 2]}->{flows.poi_id[line - 2]}"))
    known_cbg = flows["cbg_id"].isin(set(cbgs["cbg_id"])).to_numpy()
    known_poi = flows["poi_id"].isin(set(pois["poi_id"])).to_numpy()
    for line in _lines(~known_cbg):
        issues.append(Issue(fn, int(line), "cbg_id", "referential",
                            f"cbg_id {flows.cbg_id[line - 2]!r} not in {cn}"))
    for line in _lines(~known_poi):
        issues.append(Issue(fn, int(line), "poi_id", "referential",
                            f"poi_id {flows.poi_id[line - 2]!r} not in {pn}"))

    for line in _lines(pois["is_parent"].to_numpy()):
        issues.append(Issue(pn, int(line), "is_parent", "parent",
                            f"parent POI {pois.poi_id[line - 2]!r} is excluded with its flows"))
    low = (flows["visits"].to_numpy() < config.min_visits) & known_cbg & known_poi
    for line in _lines(low):
        issues.append(Issue(fn, int(line), "visits", "threshold",
                            f"visits {flows.visits[line - 2]} below min_visits {config.min_visits}"))
    return RawTables(pois, cbgs, flows, flow_lines), issues


FATAL_KINDS = ("schema", "duplicate", "referential")


def load_city(paths, config: QualityConfig = QualityConfig(), city_id: str | None = None) -> CityDataset:
    """Load, validate and quality-filter one city.

    Parent POIs are dropped together with their flows, and flows with fewer
    than ``config.min_visits`` visits are dropped (kept when equal).
    """
    resolved = resolve_paths(paths)
    tables, issues = inspect_files(resolved, config)
    fatal = [i for i in issues if i.kind in FATAL_KINDS]
    if fatal or tables is None:
        raise DataError(fatal or issues)
    pois = tables.pois
    parents = set(pois.loc[pois["is_parent"], "poi_id"])
    pois = pois[~pois["is_parent"]]
    flows = tables.flows
    keep = (flows["visits"] >= config.min_visits) & ~flows["poi_id"].isin(parents)
    flows = flows[keep]
    if city_id is None:
        city_id = resolved["pois"].parent.name or "city"
    return CityDataset(city_id, pois, tables.cbgs, flows)


# -- canonical dump -------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _table_text(df: pd.DataFrame, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    cols = [df[c].to_numpy(dtype=object) for c in columns]
    for row in zip(*cols):
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def dump_tables(ds: CityDataset) -> dict[str, str]:
    return {
        "pois.csv": _table_text(ds.pois, POI_COLUMNS),
        "cbgs.csv": _table_text(ds.cbgs, CBG_COLUMNS),
        "flows.csv": _table_text(ds.flows, FLOW_COLUMNS),
    }


def dump_bytes(ds: CityDataset) -> bytes:
    return b"".join(t.encode() for t in dump_tables(ds).values())


def dump_city(ds: CityDataset, out_dir) -> dict[str, Path]:
    """Write the canonical dump (sorted ids, LF endings, repr floats)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, text in dump_tables(ds).items():
        path = out / name
        path.write_bytes(text.encode("utf-8"))
        written[name] = path
    return written


def essential_share(ds: CityDataset) -> dict[str, float]:
    """Fraction of POIs in each of the eight function categories."""
    n = ds.n_pois
    if n == 0:
        raise ValueError("dataset has no POIs")
    counts = pd.Series(ds.poi_category).value_counts()
    return {c: float(counts.get(c, 0)) / n for c in CATEGORIES}


# -- synthetic cities -------------------------------------------------------------


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for :func:`synth_city`.

    With ``near_fraction`` set, every CBG gets a planted ring of
    ``near_ring_size`` POIs at ``near_radius_km`` (half visited, half spare
    alternatives of the same subcategories) and sends the remaining share of
    its activities to a far cluster that lies more than ``reach_guard_km``
    from every CBG. With ``near_fraction=None`` flows go to random background
    POIs instead.
    """

    city_id: str = "synth"
    center_lat: float = 41.88
    center_lon: float = -87.63
    n_cbgs: int = 16
    cbg_spacing_km: float = 3.0
    subcategories_per_category: int = 3
    near_fraction: float | None = 0.6
    near_ring_size: int = 12
    near_radius_km: float = 0.8
    activities_per_cbg: int = 1000
    spare_capacity: int | None = None
    far_distance_km: float = 40.0
    far_spread_km: float = 1.0
    reach_guard_km: float = 10.0
    category_counts: Mapping[str, int] | None = None
    background_visits: tuple[int, int] = (10, 500)
    flows_per_cbg: int = 10
    min_visits: int = 5
    missing_demographics: float = 0.0

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SynthError(f"unknown synth spec field(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        if "background_visits" in data:
            data["background_visits"] = tuple(data["background_visits"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["background_visits"] = list(self.background_visits)
        out["category_counts"] = dict(self.category_counts) if self.category_counts else None
        return out


def _destination(lat, lon, bearing, dist_km):
    """Point at ``dist_km`` along ``bearing`` (radians) on the sphere."""
    d = np.asarray(dist_km, dtype=float) / EARTH_RADIUS_KM
    p1, l1 = np.radians(lat), np.radians(lon)
    p2 = np.arcsin(np.sin(p1) * np.cos(d) + np.cos(p1) * np.sin(d) * np.cos(bearing))
    l2 = l1 + np.arctan2(np.sin(bearing) * np.sin(d) * np.cos(p1), np.cos(d) - np.sin(p1) * np.sin(p2))
    return np.degrees(p2), np.degrees(l2)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _check(spec: SynthSpec):
    if spec.n_cbgs <= 0 or spec.subcategories_per_category <= 0:
        raise SynthError("n_cbgs and subcategories_per_category must be positive")
    if spec.near_fraction is not None:
        if not 0.0 <= spec.near_fraction <= 1.0:
            raise SynthError("near_fraction must lie in [0, 1]")
        if spec.near_ring_size < 2 or spec.near_ring_size % 2:
            raise SynthError("near_ring_size must be a positive even number")
        if spec.near_ring_size // 2 > 8 * spec.subcategories_per_category:
            raise SynthError("near_ring_size needs more distinct subcategories than exist")
        if spec.near_radius_km <= 0 or spec.activities_per_cbg <= 0:
            raise SynthError("near_radius_km and activities_per_cbg must be positive")
    elif not spec.category_counts:
        raise SynthError("random flows need background POIs (category_counts)")
    if spec.category_counts:
        bad = set(spec.category_counts) - set(CATEGORIES)
        if bad:
            raise SynthError(f"unknown categories: {', '.join(sorted(bad))}")
        if any(v < 0 for v in spec.category_counts.values()):
            raise SynthError("category counts must be nonnegative")


def synth_city(spec: SynthSpec = SynthSpec(), seed: int = 0) -> CityDataset:
    """Generate a reproducible synthetic city; a pure function of (spec, seed)."""
    _check(spec)
    rng = np.random.default_rng(seed)
    side = int(math.ceil(math.sqrt(spec.n_cbgs)))
    half = (side - 1) / 2.0 * spec.cbg_spacing_km
    ring_r = spec.near_radius_km if spec.near_fraction is not None else 0.0
    half_width = half + ring_r
    city_radius = half_width * math.sqrt(2.0)
    clearance = spec.far_distance_km - spec.far_spread_km - city_radius
    if spec.near_fraction is not None and spec.near_fraction < 1.0 and clearance <= spec.reach_guard_km:
        raise SynthError(
            f"far cluster at {spec.far_distance_km} km is only {clearance:.3f} km beyond the "
            f"city radius {city_radius:.3f} km; needs more than {spec.reach_guard_km} km")

    km_lat = math.pi * EARTH_RADIUS_KM / 180.0
    km_lon = km_lat * math.cos(math.radians(spec.center_lat))

    # CBGs on a square grid centred on the city centre
    k = np.arange(spec.n_cbgs)
    gx = (k % side) * spec.cbg_spacing_km - half
    gy = (k // side) * spec.cbg_spacing_km - half
    cbg_lat = spec.center_lat + gy / km_lat
    cbg_lon = spec.center_lon + gx / km_lon
    cbg_ids = np.array([f"17031{i:07d}" for i in k], dtype=object)
    population = rng.integers(600, 3001, size=spec.n_cbgs)
    income = np.round(np.exp(rng.normal(11.0, 0.5, size=spec.n_cbgs)), 2)
    shares = rng.dirichlet([2.0, 2.0, 1.0, 1.0, 1.0], size=spec.n_cbgs)[:, :4]
    demo = {"median_income": income}
    for j, name in enumerate(("pct_white", "pct_black", "pct_asian", "pct_hispanic")):
        demo[name] = np.round(shares[:, j], 6)
    if spec.missing_demographics > 0:
        for name in DEMOGRAPHICS:
            gone = rng.random(spec.n_cbgs) < spec.missing_demographics
            demo[name] = np.where(gone, np.nan, demo[name])
    cbgs = pd.DataFrame({"cbg_id": cbg_ids, "lat": cbg_lat, "lon": cbg_lon,
                         "population": population.astype(np.int64), **demo})

    groups = [(c, f"{c} type {s + 1}") for c in CATEGORIES
              for s in range(spec.subcategories_per_category)]

    poi_parts: list[pd.DataFrame] = []
    flow_parts: list[pd.DataFrame] = []

    if spec.category_counts:
        counts = [int(spec.category_counts.get(c, 0)) for c in CATEGORIES]
        n_bg = sum(counts)
        cat_idx = np.repeat(np.arange(8), counts)
        sub_idx = rng.integers(0, spec.subcategories_per_category, size=n_bg)
        bg = pd.DataFrame({
            "poi_id": np.array([f"B{i:07d}" for i in range(n_bg)], dtype=object),
            "lat": spec.center_lat + rng.uniform(-half_width, half_width, n_bg) / km_lat,
            "lon": spec.center_lon + rng.uniform(-half_width, half_width, n_bg) / km_lon,
            "category": np.array(CATEGORIES, dtype=object)[cat_idx],
            "subcategory": np.array([f"{CATEGORIES[c]} type {s + 1}" for c, s in zip(cat_idx, sub_idx)],
                                    dtype=object),
            "total_visits": rng.integers(spec.background_visits[0], spec.background_visits[1] + 1,
                                         size=n_bg).astype(np.int64),
            "is_parent": np.zeros(n_bg, dtype=bool),
        })
        poi_parts.append(bg)
        if spec.near_fraction is None and n_bg:
            m = min(spec.flows_per_cbg, n_bg)
            picks = [np.sort(rng.choice(n_bg, size=m, replace=False)) for _ in range(spec.n_cbgs)]
            visits = rng.integers(spec.min_visits, 51, size=(spec.n_cbgs, m))
            flow_parts.append(pd.DataFrame({
                "cbg_id": np.repeat(cbg_ids, m),
                "poi_id": bg["poi_id"].to_numpy()[np.concatenate(picks)],
                "visits": visits.ravel().astype(np.int64),
            }))

    if spec.near_fraction is not None:
        poi_parts_planted, flows_planted = _plant(spec, rng, groups, cbg_ids, cbg_lat, cbg_lon)
        poi_parts.append(poi_parts_planted)
        flow_parts.append(flows_planted)

    pois = pd.concat(poi_parts, ignore_index=True) if poi_parts else pd.DataFrame(
        {c: [] for c in POI_COLUMNS})
    flows = pd.concat(flow_parts, ignore_index=True) if flow_parts else pd.DataFrame(
        {"cbg_id": [], "poi_id": [], "visits": np.array([], dtype=np.int64)})
    pois = pois[list(POI_COLUMNS)]
    return CityDataset(spec.city_id, pois, cbgs, flows[list(FLOW_COLUMNS)])


def _plant(spec: SynthSpec, rng, groups, cbg_ids, cbg_lat, cbg_lon):
    T = spec.activities_per_cbg
    near = int(round(spec.near_fraction * T))
    far = T - near
    for label, n in (("near", near), ("far", far)):
        if 0 < n < spec.min_visits:
            raise SynthError(f"{label} activities ({n}) below min_visits {spec.min_visits}")
    spare = T if spec.spare_capacity is None else int(spec.spare_capacity)
    S = spec.near_ring_size // 2
    angles = 2.0 * np.pi * np.arange(spec.near_ring_size) / spec.near_ring_size

    far_lat0, far_lon0 = _destination(spec.center_lat, spec.center_lon, 0.0, spec.far_distance_km)
    far_bear = rng.uniform(0, 2 * np.pi, len(groups))
    far_dist = spec.far_spread_km * np.sqrt(rng.random(len(groups)))
    far_lat, far_lon = _destination(far_lat0, far_lon0, far_bear, far_dist)
    far_in = np.zeros(len(groups), dtype=np.int64)

    ids, lats, lons, cats, subs, caps = [], [], [], [], [], []
    f_cbg, f_poi, f_vis = [], [], []
    n_near = min(S, near // spec.min_visits) if near else 0
    n_far = min(S, far // spec.min_visits) if far else 0
    for i, cid in enumerate(cbg_ids):
        chosen = np.sort(rng.choice(len(groups), size=S, replace=False))
        rlat, rlon = _destination(cbg_lat[i], cbg_lon[i], angles, spec.near_radius_km)
        for g_k, g in enumerate(chosen):
            cat, sub = groups[g]
            for role, slot in (("V", 2 * g_k), ("S", 2 * g_k + 1)):
                ids.append(f"P{i:05d}{role}{g_k:02d}")
                lats.append(rlat[slot])
                lons.append(rlon[slot])
                cats.append(cat)
                subs.append(sub)
                caps.append(spare)
        for g_k, v in enumerate(_split(near, n_near) if n_near else []):
            f_cbg.append(cid)
            f_poi.append(f"P{i:05d}V{g_k:02d}")
            f_vis.append(v)
        for g_k, v in enumerate(_split(far, n_far) if n_far else []):
            g = chosen[g_k]
            f_cbg.append(cid)
            f_poi.append(f"F{g:03d}")
            f_vis.append(v)
            far_in[g] += v
    used = np.nonzero(far_in)[0]
    for g in used:
        cat, sub = groups[g]
        ids.append(f"F{g:03d}")
        lats.append(far_lat[g])
        lons.append(far_lon[g])
        cats.append(cat)
        subs.append(sub)
        caps.append(int(far_in[g]))
    pois = pd.DataFrame({
        "poi_id": np.array(ids, dtype=object), "lat": np.array(lats, dtype=float),
        "lon": np.array(lons, dtype=float), "category": np.array(cats, dtype=object),
        "subcategory": np.array(subs, dtype=object), "total_visits": np.array(caps, dtype=np.int64),
        "is_parent": np.zeros(len(ids), dtype=bool),
    })
    flows = pd.DataFrame({"cbg_id": np.array(f_cbg, dtype=object), "poi_id": np.array(f_poi, dtype=object),
                          "visits": np.array(f_vis, dtype=np.int64)})
    return pois, flows
