import random

import numpy as np
import pytest

from proximity_audit import testkit as tk
from proximity_audit.catchment import (CatchmentSpec, FixedSpeedProvider, MaskCatchment, Mode, PolygonProvider,
                                       fixed_speed_catchment)
from proximity_audit.dataset import SynthSpec, synth_city
from proximity_audit.indicators import (EmissionFactors, build_ledger, compute_all, count_accessible_pois,
                                        indicators_for, pct_act_satisfiable, pct_act_within, pct_reduced_carbon,
                                        pct_reduced_dist, plan_substitution)

from builders import cbg, city, poi

WALK = CatchmentSpec(Mode.WALK, 15)     # 1.25 km
CYCLE = CatchmentSpec(Mode.CYCLE, 15)   # 3.75 km


def evaluate(ds, spec, cbg_pos=0):
    c = fixed_speed_catchment(ds, cbg_pos, spec)
    ledger = build_ledger(ds, c)
    return c, ledger, plan_substitution(ds, c, ledger)


def test_emission_factor_defaults():
    f = EmissionFactors()
    assert (f.car, f.transit, f.walk, f.cycle) == (197.0, 105.0, 26.0, 21.0)
    assert EmissionFactors.from_dict(f.to_dict()) == f
    with pytest.raises(ValueError):
        EmissionFactors(car=0)


def test_ledger_fixture_hand_arithmetic():
    ds = city([poi("A", 0.5, sub="clinics"), poi("B", 2.0, sub="dentists")], [cbg()],
              [("c1", "A", 10), ("c1", "B", 5)])
    _, ledger, _ = evaluate(ds, WALK)
    assert ledger.act_city == 15
    assert ledger.dist_city_km == pytest.approx(15.0, abs=1e-9)
    assert (ledger.act_within, ledger.act_out) == (10, 5)
    assert ledger.dist_within_km == pytest.approx(5.0, abs=1e-9)
    assert pct_act_within(ledger) == pytest.approx(10 / 15, abs=1e-9)
    e = ledger.entries[("health", "dentists")]
    assert (e.act_within, e.act_out) == (0, 5)


def test_all_within_and_none_within():
    ds = city([poi("A", 0.2), poi("B", 9.0, sub="dentists")], [cbg("in"), cbg("out", km=20.0)],
              [("in", "A", 10), ("out", "A", 3), ("out", "B", 2)])
    _, ledger, _ = evaluate(ds, WALK, 0)
    assert ledger.act_out == 0 and pct_act_within(ledger) == 1.0
    _, ledger, _ = evaluate(ds, WALK, 1)
    assert ledger.act_within == 0 and pct_act_within(ledger) == 0.0


def test_capacity_caps_substitution():
    ds = city([poi("far", 3.0), poi("alt", 0.5, visits=3)], [cbg()], [("c1", "far", 4)])
    _, ledger, plan = evaluate(ds, WALK)
    assert plan.total == 3
    assert plan.assigned_per_poi() == {"alt": 3}
    assert pct_act_satisfiable(ledger, plan) == pytest.approx(0.75)


def test_substitution_matches_subcategory_only():
    ds = city([poi("ph_far", 3.0, sub="pharmacies"), poi("de_far", 3.2, sub="dentists"),
               poi("ph_alt", 0.4, sub="pharmacies", visits=5), poi("de_alt", 0.6, sub="dentists", visits=1),
               poi("other", 0.1, sub="clinics", visits=100)],
              [cbg()], [("c1", "ph_far", 2), ("c1", "de_far", 3)])
    _, ledger, plan = evaluate(ds, WALK)
    assert plan.assigned_per_group() == {("health", "pharmacies"): 2, ("health", "dentists"): 1}
    assert plan.total == 3
    assert "other" not in plan.assigned_per_poi()


def test_no_out_of_reach_gives_empty_plan():
    ds = city([poi("A", 0.2)], [cbg()], [("c1", "A", 8)])
    _, ledger, plan = evaluate(ds, WALK)
    assert plan.assignments == [] and plan.total == 0
    assert pct_act_satisfiable(ledger, plan) == pct_act_within(ledger)


def test_visited_and_unreachable_pois_are_not_alternatives():
    ds = city([poi("far", 3.0), poi("visited", 0.3, visits=50), poi("beyond", 1.3, visits=50),
               poi("ok", 0.9, visits=1)], [cbg()], [("c1", "far", 5), ("c1", "visited", 5)])
    _, _, plan = evaluate(ds, WALK)
    assert plan.assigned_per_poi() == {"ok": 1}


def test_nearest_first_with_id_tiebreak():
    ds = city([poi("far", 3.0), poi("z", 0.5, visits=2), poi("y", 0.5, visits=2), poi("x", 0.9, visits=9)],
              [cbg()], [("c1", "far", 3)])
    _, _, plan = evaluate(ds, WALK)
    assert [(a.alternative_poi, a.count) for a in plan.assignments] == [("y", 2), ("z", 1)]


def test_displaced_activities_taken_farthest_first():
    ds = city([poi("far1", 2.0), poi("far2", 3.0), poi("alt", 0.5, visits=4)], [cbg()],
              [("c1", "far1", 3), ("c1", "far2", 3)])
    _, _, plan = evaluate(ds, WALK)
    assert [(a.origin_poi, a.count) for a in plan.assignments] == [("far2", 3), ("far1", 1)]


def test_pct_sat_direct_arithmetic():
    ds = city([poi("w", 0.5, sub="clinics"), poi("far", 3.0), poi("alt", 0.5, visits=3)], [cbg()],
              [("c1", "w", 6), ("c1", "far", 4)])
    _, ledger, plan = evaluate(ds, WALK)
    assert pct_act_satisfiable(ledger, plan) == pytest.approx(0.9, abs=1e-12)


def worked_city(out_visits=5, out_km=4.0, alt_cap=5, alt_km=1.0):
    return city([poi("A", 1.0, sub="clinics"), poi("B", out_km), poi("C", alt_km, visits=alt_cap)], [cbg()],
                [("c1", "A", 10), ("c1", "B", out_visits)])


def test_reduced_distance_full_substitution():
    _, ledger, plan = evaluate(worked_city(), CYCLE)
    assert ledger.dist_city_km == pytest.approx(30.0, abs=1e-9)
    assert pct_reduced_dist(ledger, plan) == pytest.approx(0.5, abs=1e-9)


def test_reduced_distance_partial_substitution():
    _, ledger, plan = evaluate(worked_city(out_visits=4, out_km=5.0, alt_cap=3, alt_km=4 / 3), CYCLE)
    assert plan.total == 3
    assert sum(plan.dist_alternative_km.values()) == pytest.approx(4.0, abs=1e-9)
    assert pct_reduced_dist(ledger, plan) == pytest.approx(11 / 30, abs=1e-9)


def test_reduced_carbon_cycling_worked_case():
    _, ledger, plan = evaluate(worked_city(), CYCLE)
    got = pct_reduced_carbon(ledger, plan, EmissionFactors(), Mode.CYCLE)
    assert got == pytest.approx(3835 / 4150, abs=1e-9)
    assert got == pytest.approx(0.9241, abs=1e-4)


def test_no_substitution_gives_zero_reduction():
    ds = city([poi("A", 1.0, sub="clinics"), poi("B", 4.0)], [cbg()], [("c1", "A", 10), ("c1", "B", 5)])
    _, ledger, plan = evaluate(ds, CYCLE)
    assert pct_reduced_dist(ledger, plan) == 0.0
    ds = city([poi("A", 1.0)], [cbg()], [("c1", "A", 10)])
    _, ledger, plan = evaluate(ds, CYCLE)
    assert pct_reduced_carbon(ledger, plan, EmissionFactors(), Mode.CYCLE) == 0.0


def test_car_mode_cancels_when_alternatives_match_distance():
    ds = city([poi("B", 2.0), poi("C", 2.0, visits=10, lon=-87.6301)], [cbg()], [("c1", "B", 5)])
    mask = np.array([False, True])
    c = MaskCatchment(ds, 0, CatchmentSpec(Mode.CAR), mask)
    ledger = build_ledger(ds, c)
    plan = plan_substitution(ds, c, ledger)
    assert plan.total == 5
    f = EmissionFactors()
    got = pct_reduced_carbon(ledger, plan, f, Mode.CAR)
    # straight-line distance of C differs from B only by the small longitude offset
    prorated = ledger.dist_out_km
    alt = sum(plan.dist_alternative_km.values())
    assert got == pytest.approx((prorated - alt) / prorated, abs=1e-12)
    assert abs(got) < 1e-4


def test_zero_distance_city_gives_null_reductions():
    ds = city([poi("A", 0.0)], [cbg()], [("c1", "A", 3)])
    s = indicators_for(ds, fixed_speed_catchment(ds, 0, WALK), EmissionFactors())
    assert s.pct_act_15min == 1.0
    assert s.pct_reduced_dist is None and s.pct_reduced_carbon is None


def test_count_accessible_pois():
    ds = city([poi("a", 0.0), poi("b", 0.0, sub="x")], [cbg(), cbg("c2", km=50)], [])
    assert count_accessible_pois(fixed_speed_catchment(ds, 0, WALK)) == 2
    assert count_accessible_pois(fixed_speed_catchment(ds, 1, WALK)) == 0


def test_planted_ring_count():
    ds = synth_city(SynthSpec(n_cbgs=9, near_fraction=0.6), 3)
    prov = FixedSpeedProvider(ds)
    for i in range(ds.n_cbgs):
        assert count_accessible_pois(prov.catchment(i, WALK)) == 12


def random_instance(seed):
    rng = random.Random(seed)
    pois, cbgs, flows = tk.random_city_records(rng)
    ds = city(pois, cbgs, [(f["cbg_id"], f["poi_id"], f["visits"]) for f in flows])
    return ds, pois, cbgs, flows


@pytest.mark.parametrize("seed", range(12))
def test_matches_independent_recomputation(seed):
    ds, pois, cbgs, flows = random_instance(seed)
    prov = FixedSpeedProvider(ds)
    f = EmissionFactors()
    for j, row in enumerate(cbgs):
        mine = {fl["poi_id"]: fl["visits"] for fl in flows if fl["cbg_id"] == row["cbg_id"]}
        for m in Mode:
            spec = CatchmentSpec(m, 15)
            got = indicators_for(ds, prov.catchment(j, spec), f)
            want = tk.fixed_speed_indicators(pois, (row["lat"], row["lon"]), mine, prov.radius_km(spec),
                                             f.car, f.of(m))
            if want is None:
                assert got.pct_act_15min is None
                continue
            assert got.num_poi == want["num_poi"]
            for k in ("pct_act_15min", "pct_act_sat_15min", "pct_reduced_dist", "pct_reduced_carbon"):
                assert getattr(got, k) == pytest.approx(want[k], abs=1e-9), k


@pytest.mark.parametrize("seed", range(12))
def test_plan_invariants(seed):
    ds, *_ = random_instance(100 + seed)
    prov = FixedSpeedProvider(ds)
    pos = {p: i for i, p in enumerate(ds.poi_ids)}
    for j in range(ds.n_cbgs):
        for m in Mode:
            c = prov.catchment(j, CatchmentSpec(m))
            ledger = build_ledger(ds, c)
            plan = plan_substitution(ds, c, ledger)
            visited = set(ds.poi_ids[ledger.flow_poi])
            for poi_id, n in plan.assigned_per_poi().items():
                assert n <= ds.poi_capacity[pos[poi_id]]
                assert poi_id in c.reachable and poi_id not in visited
            for a in plan.assignments:
                assert ds.poi_group[pos[a.alternative_poi]] == ds.poi_group[pos[a.origin_poi]]
                assert a.dist_km < c.distance_to(a.origin_poi)
            for cat, e in ledger.by_category().items():
                assert plan.act_alternative.get(cat, 0) <= e.act_out
            if ledger.act_city:
                assert pct_act_satisfiable(ledger, plan) >= pct_act_within(ledger)
                if plan.total:
                    assert pct_reduced_dist(ledger, plan) >= 0


def test_scaling_visits_and_capacity():
    ds, pois, cbgs, flows = random_instance(7)
    k = 3
    pois3 = [dict(p, total_visits=p["total_visits"] * k) for p in pois]
    ds3 = city(pois3, cbgs, [(f["cbg_id"], f["poi_id"], f["visits"] * k) for f in flows])
    dsv = city(pois, cbgs, [(f["cbg_id"], f["poi_id"], f["visits"] * k) for f in flows])
    for m in Mode:
        a = compute_all(ds, FixedSpeedProvider(ds), [CatchmentSpec(m)]).rows
        b = compute_all(ds3, FixedSpeedProvider(ds3), [CatchmentSpec(m)]).rows
        v = compute_all(dsv, FixedSpeedProvider(dsv), [CatchmentSpec(m)]).rows
        for ra, rb, rv in zip(a, b, v):
            if ra.values is None:
                continue
            assert rb.values.pct_act_15min == pytest.approx(ra.values.pct_act_15min, abs=1e-12)
            assert rv.values.pct_act_15min == pytest.approx(ra.values.pct_act_15min, abs=1e-12)
            assert rb.values.pct_act_sat_15min == pytest.approx(ra.values.pct_act_sat_15min, abs=1e-12)


def test_compute_all_nulls_order_and_failures():
    ds = city([poi("A", 0.2), poi("B", 4.0)], [cbg("z"), cbg("a", km=1.0), cbg("m", km=2.0)],
              [("z", "A", 5), ("a", "B", 7)])
    res = compute_all(ds, FixedSpeedProvider(ds), [CatchmentSpec("car"), CatchmentSpec("walk")])
    assert [(r.cbg_id, r.mode.value) for r in res.rows] == [
        ("a", "walk"), ("a", "car"), ("m", "walk"), ("m", "car"), ("z", "walk"), ("z", "car")]
    assert res.excluded_cbgs == ["m"]
    assert [r.values for r in res.rows if r.cbg_id == "m"] == [None, None]
    assert len(res.table()) == 4

    poly = PolygonProvider(ds, {})
    res = compute_all(ds, poly, [CatchmentSpec("walk")])
    assert [f[0] for f in res.failed] == ["a", "z"]
    assert "no isoline" in res.failed[0][2]


def test_planted_everything_in_reach():
    ds = synth_city(SynthSpec(n_cbgs=4, near_fraction=1.0), 0)
    res = compute_all(ds, FixedSpeedProvider(ds), [CatchmentSpec("walk")])
    for r in res.rows:
        v = r.values
        assert v.num_poi == 12
        assert v.pct_act_15min == 1.0 and v.pct_act_sat_15min == 1.0
        assert v.pct_reduced_dist == 0.0 and v.pct_reduced_carbon == 0.0


def test_planted_partial_with_ample_capacity():
    ds = synth_city(SynthSpec(n_cbgs=4, near_fraction=0.6), 0)
    res = compute_all(ds, FixedSpeedProvider(ds), [CatchmentSpec(m) for m in Mode])
    for r in res.rows:
        assert r.values.pct_act_15min == pytest.approx(0.6, abs=1e-9)
        assert r.values.pct_act_sat_15min == pytest.approx(1.0, abs=1e-9)


def test_budget_monotonicity_of_indicators():
    ds = synth_city(SynthSpec(n_cbgs=25, near_fraction=None,
                              category_counts={c: 40 for c in ("health", "grocery", "service")}), 2)
    prov = FixedSpeedProvider(ds)
    for j in range(ds.n_cbgs):
        prev = None
        for b in (5, 10, 15, 20, 30):
            s = indicators_for(ds, prov.catchment(j, CatchmentSpec("walk", b)), EmissionFactors())
            if prev:
                assert s.num_poi >= prev.num_poi
                assert s.pct_act_15min >= prev.pct_act_15min
            prev = s
