import csv
import io
import json
import subprocess
import sys

import pytest
import yaml

from proximity_audit.cli import main
from proximity_audit.dataset import SynthSpec, dump_city, synth_city
from proximity_audit.pipeline import (WORKERS_ENV, ConfigError, RunConfig, fmt_float, resolve_workers, run)

from builders import write_csvs
from test_dataset import CBGS, FLOWS, POIS


@pytest.fixture
def planted(tmp_path):
    ds = synth_city(SynthSpec(n_cbgs=9, near_fraction=0.6, missing_demographics=0.1), 11)
    dump_city(ds, tmp_path / "city")
    return tmp_path / "city"


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_fmt_float():
    assert fmt_float(None) == ""
    assert fmt_float(1 / 3) == "0.333333333"
    assert fmt_float(-1e-12) == "0.000000000"
    assert fmt_float(2) == "2.000000000"


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig().validate()
    with pytest.raises(ConfigError):
        RunConfig(data="x", provider="network").validate()
    with pytest.raises(ConfigError):
        RunConfig(data="x", budget_min=0).validate()
    with pytest.raises(ConfigError):
        RunConfig(data="x", emission_factors={"car": -1}).validate()
    with pytest.raises(ConfigError):
        RunConfig(data="x", modes=["walk", "walk"]).validate()
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"budget": 15})
    cfg = RunConfig(data="x", modes=["Car", "bike"]).validate()
    assert [s.mode.value for s in cfg.specs()] == ["cycle", "car"]


def test_config_file_paths_relative_to_file(tmp_path):
    (tmp_path / "cfg.yaml").write_text("data: city\nout: results\nemission_factors: {walk: 30}\n")
    cfg = RunConfig.from_file(tmp_path / "cfg.yaml")
    assert cfg.data == str(tmp_path / "city") and cfg.out == str(tmp_path / "results")
    assert cfg.emission_factors["walk"] == 30 and cfg.emission_factors["car"] == 197.0


def test_workers_precedence(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(None, None) == 1
    assert resolve_workers(None, 3) == 3
    monkeypatch.setenv(WORKERS_ENV, "5")
    assert resolve_workers(None, 3) == 5
    assert resolve_workers(2, 3) == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_workers(None, None)


def test_run_planted_end_to_end(planted, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--data", str(planted), "--out", str(out)]) == 0
    rows = read_csv(out / "indicators.csv")
    assert len(rows) == 9 * 4
    for r in rows:
        assert r["pct_act_15min"] == "0.600000000"
        assert r["pct_act_sat_15min"] == "1.000000000"
    gini = read_csv(out / "gini.csv")
    assert {g["weighting"] for g in gini} == {"population"}
    assert len(read_csv(out / "correlations.csv")) == 5 * 4 * 5
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_cbgs"] == 9
    report = json.loads((out / "run_report.json").read_text())
    assert report["counts"]["cbgs_processed"] == 9
    assert set(report["digests"]) == {"indicators.csv", "gini.csv", "correlations.csv", "summary.json"}
    assert b"\r" not in (out / "indicators.csv").read_bytes()


def test_config_echo_reproduces_digests(planted, tmp_path):
    first = run(RunConfig(data=str(planted), out=str(tmp_path / "a"), modes=["walk", "car"]))
    echo = dict(first.config, out=str(tmp_path / "b"))
    again = run(RunConfig.from_mapping(echo))
    assert again.digests == first.digests


def test_workers_do_not_change_output(planted, tmp_path):
    one = run(RunConfig(data=str(planted), out=str(tmp_path / "w1"), workers=1))
    three = run(RunConfig(data=str(planted), out=str(tmp_path / "w3"), workers=3))
    assert one.digests == three.digests


def test_empty_flows_excludes_everything(tmp_path, capsys):
    data = write_csvs(tmp_path / "c", POIS, CBGS, "cbg_id,poi_id,visits\n")
    out = tmp_path / "out"
    assert main(["run", "--data", str(data), "--out", str(out)]) == 0
    assert (out / "indicators.csv").read_text() == (
        "cbg_id,mode,num_poi,pct_act_15min,pct_act_sat_15min,pct_reduced_dist,pct_reduced_carbon\n")
    report = json.loads((out / "run_report.json").read_text())
    assert report["counts"]["cbgs_excluded"] == 2
    assert any("no flows" in w for w in report["warnings"])


def test_polygon_run_collects_missing_isolines(tmp_path, capsys):
    data = write_csvs(tmp_path / "c", POIS, CBGS, FLOWS)
    iso = tmp_path / "iso.geojson"
    ring = [[-87.64, 41.87], [-87.61, 41.87], [-87.61, 41.89], [-87.64, 41.89], [-87.64, 41.87]]
    iso.write_text(json.dumps({"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"cbg_id": "a", "mode": "walk", "budget_min": 15},
         "geometry": {"type": "Polygon", "coordinates": [ring]}}]}))
    out = tmp_path / "out"
    rc = main(["run", "--data", str(data), "--provider", "polygons", "--isolines", str(iso),
               "--modes", "walk", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "run_report.json").read_text())
    assert [f["cbg_id"] for f in report["failures"]] == ["b"]
    rows = read_csv(out / "indicators.csv")
    assert [(r["cbg_id"], r["num_poi"]) for r in rows] == [("a", "2")]


def test_network_run(tmp_path):
    data = write_csvs(tmp_path / "c", POIS, CBGS, FLOWS)
    (tmp_path / "nodes.csv").write_text("node_id,lat,lon\nn1,41.880,-87.630\nn2,41.885,-87.625\n"
                                        "n3,41.890,-87.620\nn4,41.900,-87.600\n")
    (tmp_path / "edges.csv").write_text(
        "from,to,length_m,modes,speed_walk,speed_cycle,speed_transit,speed_car\n"
        "n1,n2,700,wbtc,5,15,20,40\nn2,n1,700,wbtc,5,15,20,40\n"
        "n2,n3,700,wbtc,5,15,20,40\nn3,n2,700,wbtc,5,15,20,40\n"
        "n3,n4,2000,wbtc,5,15,20,40\nn4,n3,2000,wbtc,5,15,20,40\n")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"data": "c", "provider": "network", "network_nodes": "nodes.csv",
                                   "network_edges": "edges.csv", "out": "out", "modes": ["walk", "car"]}))
    assert main(["run", "--config", str(cfg)]) == 0
    rows = {(r["cbg_id"], r["mode"]): r for r in read_csv(tmp_path / "out" / "indicators.csv")}
    assert int(rows[("a", "walk")]["num_poi"]) <= int(rows[("a", "car")]["num_poi"]) == 3


def test_config_error_exit_1(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path / "o")]) == 1
    diag = stderr_json(capsys)
    assert diag["error"] == "config" and "input data missing" in diag["message"]


def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as ex:
        main(["run", "--provider", "helicopter"])
    assert ex.value.code == 1
    assert stderr_json(capsys)["error"] == "usage"


def test_bad_mode_exit_1(tmp_path, capsys):
    data = write_csvs(tmp_path / "c", POIS, CBGS, FLOWS)
    assert main(["run", "--data", str(data), "--modes", "walk,hover", "--out", str(tmp_path / "o")]) == 1


def test_data_error_exit_2(tmp_path, capsys):
    data = write_csvs(tmp_path / "c", POIS, CBGS, FLOWS + "a,nope,9\n")
    assert main(["run", "--data", str(data), "--out", str(tmp_path / "o")]) == 2
    diag = stderr_json(capsys)
    assert (diag["error"], diag["file"], diag["line"], diag["column"]) == ("input", "flows.csv", 6, "poi_id")


def test_missing_input_exit_2(tmp_path, capsys):
    assert main(["run", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 2


def test_validate_clean(tmp_path, capsys):
    data = write_csvs(tmp_path / "c", POIS, CBGS, FLOWS)
    assert main(["validate", str(data)]) == 0
    assert capsys.readouterr().out.strip().splitlines() == ["0 issues"]


def test_validate_dangling(tmp_path, capsys):
    data = write_csvs(tmp_path / "c", POIS, CBGS, FLOWS + "a,p9,12\n")
    assert main(["validate", str(data)]) == 2
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == ["flows.csv:6 [poi_id]: referential: poi_id 'p9' not in pois.csv", "1 issues"]


def test_validate_sub_threshold(tmp_path, capsys):
    flows = "cbg_id,poi_id,visits\na,p1,1\na,p2,4\nb,p3,3\nb,p1,5\n"
    data = write_csvs(tmp_path / "c", POIS, CBGS, flows)
    assert main(["validate", str(data), "--min-visits", "5"]) == 2
    lines = capsys.readouterr().out.strip().splitlines()
    assert [l for l in lines if ": threshold:" in l] and len([l for l in lines if ": threshold:" in l]) == 3
    assert lines[-1] == "3 issues"


def test_validate_reports_parents(tmp_path, capsys):
    pois = POIS.replace("Supermarkets,300,false", "Supermarkets,300,true")
    data = write_csvs(tmp_path / "c", pois, CBGS, FLOWS)
    assert main(["validate", str(data)]) == 2
    assert ": parent:" in capsys.readouterr().out


def test_validate_unreadable(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nothing")]) == 2


def test_synth_cli_deterministic(tmp_path, capsys):
    spec = tmp_path / "spec.yaml"
    spec.write_text("n_cbgs: 4\nnear_fraction: 0.5\ncategory_counts: {health: 5}\n")
    for name in ("a", "b"):
        assert main(["synth", "--spec", str(spec), "--seed", "3", "--out", str(tmp_path / name)]) == 0
    for f in ("pois.csv", "cbgs.csv", "flows.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_cli_infeasible(tmp_path, capsys):
    spec = tmp_path / "spec.yaml"
    spec.write_text("far_distance_km: 5\n")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "x")]) == 1
    assert stderr_json(capsys)["error"] == "config"


def test_transit_share_by_construction(tmp_path, capsys):
    spec = tmp_path / "spec.yaml"
    spec.write_text("n_cbgs: 9\nnear_fraction: 0.315\nnear_radius_km: 4.5\n")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "city")]) == 0
    assert main(["run", "--data", str(tmp_path / "city"), "--modes", "transit", "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "indicators.csv")
    assert {r["pct_act_15min"] for r in rows} == {"0.315000000"}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "proximity_audit", "validate", str(tmp_path / "none")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"] == "input"
