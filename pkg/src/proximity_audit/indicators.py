"""Per-(CBG, mode) accessibility indicators.

For one catchment the pipeline is::

    ledger = build_ledger(ds, catchment)          # activities in/out of reach
    plan = plan_substitution(ds, catchment, ledger)
    indicators(ledger, plan, factors, mode)

Out-of-reach activities are substituted by reachable POIs of the same
(category, subcategory) that the CBG never visited, nearest first, each
alternative absorbing at most its ``total_visits``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .catchment import MODES, Catchment, CatchmentError, CatchmentSpec, Mode, parse_mode
from .dataset import CATEGORIES, CityDataset

INDICATOR_NAMES = ("num_poi", "pct_act_15min", "pct_act_sat_15min",
                   "pct_reduced_dist", "pct_reduced_carbon")


@dataclass(frozen=True)
class EmissionFactors:
    """Grams of CO2 per person-km by mode."""

    car: float = 197.0
    transit: float = 105.0
    walk: float = 26.0
    cycle: float = 21.0

    def __post_init__(self):
        for m in MODES:
            if not getattr(self, m.value) > 0:
                raise ValueError(f"emission factor for {m.value} must be positive")

    def of(self, mode) -> float:
        return getattr(self, parse_mode(mode).value)

    def to_dict(self) -> dict[str, float]:
        return {m.value: float(getattr(self, m.value)) for m in MODES}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EmissionFactors":
        return cls(**{parse_mode(k).value: float(v) for k, v in data.items()})


@dataclass
class LedgerEntry:
    act_within: int = 0
    act_out: int = 0
    dist_within_km: float = 0.0
    dist_out_km: float = 0.0


@dataclass
class ActivityLedger:
    cbg_id: str
    mode: Mode
    entries: dict[tuple[str, str], LedgerEntry]
    act_city: int
    dist_city_km: float
    # raw per-flow data kept for the planner: poi position, visits, km, reachable
    flow_poi: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, np.int64))
    flow_visits: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, np.int64))
    flow_km: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    flow_in: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, bool))

    @property
    def act_within(self) -> int:
        return sum(e.act_within for e in self.entries.values())

    @property
    def act_out(self) -> int:
        return sum(e.act_out for e in self.entries.values())

    @property
    def dist_within_km(self) -> float:
        return float(sum(e.dist_within_km for e in self.entries.values()))

    @property
    def dist_out_km(self) -> float:
        return float(sum(e.dist_out_km for e in self.entries.values()))

    def by_category(self) -> dict[str, LedgerEntry]:
        out: dict[str, LedgerEntry] = {}
        for (cat, _), e in sorted(self.entries.items()):
            agg = out.setdefault(cat, LedgerEntry())
            agg.act_within += e.act_within
            agg.act_out += e.act_out
            agg.dist_within_km += e.dist_within_km
            agg.dist_out_km += e.dist_out_km
        return out


@dataclass(frozen=True)
class Assignment:
    category: str
    subcategory: str
    origin_poi: str        # displaced activity's current POI
    alternative_poi: str
    count: int
    dist_km: float         # per-activity distance to the alternative


@dataclass
class SubstitutionPlan:
    cbg_id: str
    mode: Mode
    assignments: list[Assignment]
    act_alternative: dict[str, int]
    dist_alternative_km: dict[str, float]

    @property
    def total(self) -> int:
        return sum(self.act_alternative.values())

    def assigned_per_poi(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for a in self.assignments:
            out[a.alternative_poi] += a.count
        return dict(out)

    def assigned_per_group(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = defaultdict(int)
        for a in self.assignments:
            out[(a.category, a.subcategory)] += a.count
        return dict(out)


@dataclass(frozen=True)
class IndicatorSet:
    num_poi: int
    pct_act_15min: float | None
    pct_act_sat_15min: float | None
    pct_reduced_dist: float | None
    pct_reduced_carbon: float | None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in INDICATOR_NAMES}


def count_accessible_pois(catchment: Catchment, ds: CityDataset | None = None) -> int:
    """Number of reachable essential POIs (every loaded POI is essential)."""
    return catchment.num_reachable


def build_ledger(ds: CityDataset, catchment: Catchment) -> ActivityLedger:
    pois, visits = ds.flows_of(catchment.cbg)
    km = catchment.dist_km(pois)
    reach = catchment.is_reachable(pois)
    entries: dict[tuple[str, str], LedgerEntry] = {}
    for p, v, d, r in zip(pois.tolist(), visits.tolist(), km.tolist(), reach.tolist()):
        e = entries.setdefault(ds.group_keys[ds.poi_group[p]], LedgerEntry())
        if r:
            e.act_within += v
            e.dist_within_km += v * d
        else:
            e.act_out += v
            e.dist_out_km += v * d
    return ActivityLedger(
        cbg_id=catchment.cbg_id, mode=catchment.spec.mode, entries=entries,
        act_city=int(visits.sum()), dist_city_km=float(np.dot(visits, km)),
        flow_poi=pois, flow_visits=visits, flow_km=km, flow_in=reach,
    )


def pct_act_within(ledger: ActivityLedger) -> float | None:
    if ledger.act_city <= 0:
        return None
    return ledger.act_within / ledger.act_city


def plan_substitution(ds: CityDataset, catchment: Catchment, ledger: ActivityLedger) -> SubstitutionPlan:
    """Assign out-of-reach activities to unvisited reachable POIs.

    Per (category, subcategory) the assigned count is
    ``min(act_out, sum of candidate capacities)``; candidates fill nearest
    first (ties by poi_id) and displaced activities are taken farthest first.
    """
    visited = set(ledger.flow_poi.tolist())
    assignments: list[Assignment] = []
    act_alt: dict[str, int] = {}
    dist_alt: dict[str, float] = {}
    out_mask = ~ledger.flow_in
    for key in sorted(k for k, e in ledger.entries.items() if e.act_out > 0):
        demand = ledger.entries[key].act_out
        group = ds.group_lookup[key]
        picked: list[tuple[int, int, float]] = []   # (poi, count, km)
        need = demand
        for band in catchment.group_candidates(group):
            if need == 0:
                break
            if not len(band):
                continue
            if visited:
                if len(band) <= 64:
                    band = band[[int(b) not in visited for b in band]]
                else:
                    band = band[~np.isin(band, ledger.flow_poi)]
            if not len(band):
                continue
            km = catchment.dist_km(band)
            for j in np.lexsort((band, km)):
                cap = int(ds.poi_capacity[band[j]])
                if cap <= 0:
                    continue
                take = min(cap, need)
                picked.append((int(band[j]), take, float(km[j])))
                need -= take
                if need == 0:
                    break
        if not picked:
            continue
        cat = key[0]
        # displaced activities: this group's out-of-reach flows, farthest first
        sel = np.nonzero(out_mask & (ds.poi_group[ledger.flow_poi] == group))[0]
        order = sel[np.lexsort((ledger.flow_poi[sel], -ledger.flow_km[sel]))]
        origins = [(int(ledger.flow_poi[k]), int(ledger.flow_visits[k])) for k in order]
        oi, o_left = 0, origins[0][1]
        for alt, count, km in picked:
            left = count
            while left:
                n = min(left, o_left)
                assignments.append(Assignment(cat, key[1], ds.poi_ids[origins[oi][0]],
                                              ds.poi_ids[alt], n, km))
                left -= n
                o_left -= n
                if o_left == 0 and oi + 1 < len(origins):
                    oi += 1
                    o_left = origins[oi][1]
            act_alt[cat] = act_alt.get(cat, 0) + count
            dist_alt[cat] = dist_alt.get(cat, 0.0) + count * km
    return SubstitutionPlan(ledger.cbg_id, ledger.mode, assignments, act_alt, dist_alt)


def pct_act_satisfiable(ledger: ActivityLedger, plan: SubstitutionPlan) -> float | None:
    if ledger.act_city <= 0:
        return None
    return (ledger.act_within + plan.total) / ledger.act_city


def _prorated_out_km(ledger: ActivityLedger, plan: SubstitutionPlan) -> float:
    total = 0.0
    for cat, e in ledger.by_category().items():
        alt = plan.act_alternative.get(cat, 0)
        if e.act_out > 0 and alt:
            total += alt / e.act_out * e.dist_out_km
    return total


def pct_reduced_dist(ledger: ActivityLedger, plan: SubstitutionPlan) -> float | None:
    if not ledger.dist_city_km > 0:
        return None
    saved = _prorated_out_km(ledger, plan) - sum(plan.dist_alternative_km.values())
    return saved / ledger.dist_city_km


def pct_reduced_carbon(ledger: ActivityLedger, plan: SubstitutionPlan,
                       factors: EmissionFactors, mode) -> float | None:
    """Out-of-reach trips are assumed to be driven; in-reach trips use ``mode``."""
    c_car = factors.car
    c_m = factors.of(mode)
    denom = ledger.dist_out_km * c_car + ledger.dist_within_km * c_m
    if not denom > 0:
        return None
    num = _prorated_out_km(ledger, plan) * c_car - sum(plan.dist_alternative_km.values()) * c_m
    return num / denom


def indicators_for(ds: CityDataset, catchment: Catchment, factors: EmissionFactors) -> IndicatorSet:
    ledger = build_ledger(ds, catchment)
    num = count_accessible_pois(catchment)
    if ledger.act_city <= 0:
        return IndicatorSet(num, None, None, None, None)
    plan = plan_substitution(ds, catchment, ledger)
    mode = catchment.spec.mode
    return IndicatorSet(
        num_poi=num,
        pct_act_15min=pct_act_within(ledger),
        pct_act_sat_15min=pct_act_satisfiable(ledger, plan),
        pct_reduced_dist=pct_reduced_dist(ledger, plan),
        pct_reduced_carbon=pct_reduced_carbon(ledger, plan, factors, mode),
    )


@dataclass(frozen=True)
class IndicatorRow:
    cbg_id: str
    mode: Mode
    values: IndicatorSet | None


@dataclass
class Assessment:
    rows: list[IndicatorRow]
    warnings: list[str]
    excluded_cbgs: list[str]
    failed: list[tuple[str, str, str]]  # (cbg_id, mode, message)

    def table(self) -> list[IndicatorRow]:
        return [r for r in self.rows if r.values is not None]


def assess_cbgs(ds: CityDataset, provider, specs: Iterable[CatchmentSpec], factors: EmissionFactors,
                cbgs: Iterable[int]) -> Assessment:
    """Worker body: evaluate the listed CBG positions for every spec."""
    specs = list(specs)
    rows, warnings, excluded, failed = [], [], [], []
    for i in cbgs:
        cid = ds.cbg_ids[i]
        if ds.act_city[i] <= 0:
            excluded.append(cid)
            rows.extend(IndicatorRow(cid, s.mode, None) for s in specs)
            continue
        for s in specs:
            try:
                c = provider.catchment(int(i), s)
            except CatchmentError as exc:
                failed.append((cid, s.mode.value, str(exc)))
                rows.append(IndicatorRow(cid, s.mode, None))
                continue
            warnings.extend(c.warnings)
            rows.append(IndicatorRow(cid, s.mode, indicators_for(ds, c, factors)))
    return Assessment(rows, warnings, excluded, failed)


def merge_assessments(parts: Iterable[Assessment]) -> Assessment:
    rows, warnings, excluded, failed = [], [], [], []
    for p in parts:
        rows += p.rows
        warnings += p.warnings
        excluded += p.excluded_cbgs
        failed += p.failed
    mode_rank = {m: k for k, m in enumerate(MODES)}
    rows.sort(key=lambda r: (r.cbg_id, mode_rank[r.mode]))
    return Assessment(rows, warnings, sorted(set(excluded)), sorted(failed))


def compute_all(ds: CityDataset, provider, specs: Iterable[CatchmentSpec],
                factors: EmissionFactors = EmissionFactors()) -> Assessment:
    """Indicators for every (CBG, spec), ordered by (cbg_id, mode).

    CBGs without activities come back with ``values=None``; provider failures
    are collected in ``failed`` instead of raising.
    """
    specs = sorted(specs, key=lambda s: MODES.index(s.mode))
    return merge_assessments([assess_cbgs(ds, provider, specs, factors, range(ds.n_cbgs))])
