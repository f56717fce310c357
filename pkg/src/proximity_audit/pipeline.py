"""Batch run: load a city, evaluate every (CBG, mode) in parallel, compute
equity statistics and write deterministic reports.

Outputs (all LF, ids ascending, floats fixed at 9 decimals):
``indicators.csv``, ``gini.csv``, ``correlations.csv``, ``summary.json`` and
``run_report.json`` (the latter carries timings and is not itself digested).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .catchment import (DEFAULT_CELL_DEG, MODES, CatchmentSpec, FixedSpeedProvider, NetworkProvider,
                        PolygonProvider, load_isolines, load_network, parse_mode)
from .dataset import CityDataset, QualityConfig, essential_share, load_city, resolve_paths
from .equity import CitySummary, CorrelationMatrix, city_summary, correlation_matrix
from .indicators import (INDICATOR_NAMES, Assessment, EmissionFactors, assess_cbgs,
                         merge_assessments)

log = logging.getLogger(__name__)

WORKERS_ENV = "PROXIMITY_AUDIT_WORKERS"
PROVIDERS = ("fixed", "network", "polygons")
OUTPUT_FILES = ("indicators.csv", "gini.csv", "correlations.csv", "summary.json")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    pois: str | None = None
    cbgs: str | None = None
    flows: str | None = None
    city_id: str | None = None
    provider: str = "fixed"
    speeds: dict = field(default_factory=lambda: {"walk": 5.0, "cycle": 15.0, "transit": 20.0, "car": 40.0})
    network_nodes: str | None = None
    network_edges: str | None = None
    max_snap_m: float = 500.0
    snap_speeds: dict = field(default_factory=lambda: {"walk": 5.0, "cycle": 5.0, "transit": 5.0, "car": 40.0})
    isolines: str | None = None
    modes: list = field(default_factory=lambda: [m.value for m in MODES])
    budget_min: float = 15.0
    min_visits: int = 5
    emission_factors: dict = field(default_factory=lambda: EmissionFactors().to_dict())
    weighting: str = "population"
    out: str = "out"
    workers: int = 1
    seed: int = 0
    cell_size_deg: float = DEFAULT_CELL_DEG

    _PATHS = ("data", "pois", "cbgs", "flows", "network_nodes", "network_edges", "isolines", "out")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = cls()
        for k, v in data.items():
            if k in ("speeds", "snap_speeds", "emission_factors") and v is not None:
                merged = dict(getattr(cfg, k))
                merged.update({str(m): v2 for m, v2 in dict(v).items()})
                v = merged
            if k in cls._PATHS and v is not None and base_dir is not None:
                v = str((base_dir / v).resolve()) if not Path(v).is_absolute() else v
            setattr(cfg, k, v)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_mapping(data, path.parent.resolve())

    def validate(self) -> "RunConfig":
        if self.provider not in PROVIDERS:
            raise ConfigError(f"provider must be one of {', '.join(PROVIDERS)}")
        if not (self.data or (self.pois and self.cbgs and self.flows)):
            raise ConfigError("input data missing: set 'data' or all of 'pois', 'cbgs', 'flows'")
        if self.provider == "network" and not (self.network_nodes and self.network_edges):
            raise ConfigError("network provider needs network_nodes and network_edges")
        if self.provider == "polygons" and not self.isolines:
            raise ConfigError("polygons provider needs isolines")
        try:
            self.modes = [parse_mode(m).value for m in self.modes]
            self.speeds = {parse_mode(k).value: float(v) for k, v in self.speeds.items()}
            self.snap_speeds = {parse_mode(k).value: float(v) for k, v in self.snap_speeds.items()}
            self.emission_factors = EmissionFactors.from_dict(self.emission_factors).to_dict()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if not self.modes or len(set(self.modes)) != len(self.modes):
            raise ConfigError("modes must be a nonempty list without repeats")
        if any(not v > 0 for v in self.speeds.values()) or any(not v > 0 for v in self.snap_speeds.values()):
            raise ConfigError("speeds must be positive")
        for name, lo in (("budget_min", 0.0), ("max_snap_m", 0.0), ("cell_size_deg", 0.0)):
            try:
                val = float(getattr(self, name))
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be a number") from None
            if not val > lo:
                raise ConfigError(f"{name} must be positive")
            setattr(self, name, val)
        for name, lo in (("min_visits", 1), ("workers", 1)):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}")
        if self.weighting not in ("population", "unweighted"):
            raise ConfigError("weighting must be 'population' or 'unweighted'")
        return self

    def input_paths(self) -> dict[str, Path]:
        if self.pois and self.cbgs and self.flows:
            return resolve_paths({"pois": self.pois, "cbgs": self.cbgs, "flows": self.flows})
        return resolve_paths(self.data)

    def echo(self) -> dict:
        return {k: v for k, v in asdict(self).items()}

    def specs(self) -> list[CatchmentSpec]:
        return [CatchmentSpec(m, self.budget_min) for m in sorted(self.modes, key=lambda m: MODES.index(parse_mode(m)))]


def build_provider(cfg: RunConfig, ds: CityDataset):
    if cfg.provider == "fixed":
        return FixedSpeedProvider(ds, cfg.speeds, cfg.cell_size_deg)
    if cfg.provider == "network":
        net = load_network(cfg.network_nodes, cfg.network_edges)
        return NetworkProvider(ds, net, cfg.snap_speeds, cfg.max_snap_m)
    return PolygonProvider(ds, load_isolines(cfg.isolines), cfg.cell_size_deg)


# -- parallel evaluation --------------------------------------------------------------

_SHARED: dict[str, Any] = {}


def _init_worker(state):
    _SHARED.update(state)


def _run_chunk(cbgs: list[int]) -> Assessment:
    s = _SHARED
    return assess_cbgs(s["ds"], s["provider"], s["specs"], s["factors"], cbgs)


def evaluate(ds: CityDataset, provider, specs, factors: EmissionFactors, workers: int = 1) -> Assessment:
    """Fan (CBG, mode) work out over ``workers`` processes; merged in key order."""
    specs = sorted(specs, key=lambda s: MODES.index(s.mode))
    positions = list(range(ds.n_cbgs))
    if workers <= 1 or ds.n_cbgs < 2:
        return merge_assessments([assess_cbgs(ds, provider, specs, factors, positions)])
    n_chunks = min(len(positions), workers * 4)
    chunks = [positions[k::n_chunks] for k in range(n_chunks)]
    state = {"ds": ds, "provider": provider, "specs": specs, "factors": factors}
    methods = mp.get_all_start_methods()
    ctx = mp.get_context("fork" if "fork" in methods else None)
    if ctx.get_start_method() == "fork":
        # children inherit the state; nothing large is pickled
        _SHARED.update(state)
        init, args = None, ()
    else:
        init, args = _init_worker, (state,)
    try:
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=init, initargs=args) as ex:
            parts = list(ex.map(_run_chunk, chunks))
    finally:
        _SHARED.clear()
    return merge_assessments(parts)


# -- report writers -----------------------------------------------------------------


def fmt_float(x: float | None) -> str:
    if x is None:
        return ""
    s = f"{x:.9f}"
    return "0.000000000" if s == "-0.000000000" else s


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def indicators_csv(assessment: Assessment) -> str:
    rows = []
    for r in assessment.table():
        v = r.values
        rows.append([r.cbg_id, r.mode.value, str(v.num_poi), fmt_float(v.pct_act_15min),
                     fmt_float(v.pct_act_sat_15min), fmt_float(v.pct_reduced_dist),
                     fmt_float(v.pct_reduced_carbon)])
    return _csv_text(("cbg_id", "mode") + INDICATOR_NAMES, rows)


def gini_csv(summary: CitySummary) -> str:
    rows = [[summary.city, s.indicator, s.mode.value, fmt_float(s.gini), str(s.n), s.weighting]
            for s in summary.stats]
    return _csv_text(("city", "indicator", "mode", "gini", "n", "weighting"), rows)


def correlations_csv(matrix: CorrelationMatrix) -> str:
    rows = [[matrix.city, c.indicator, c.mode.value, c.variable, fmt_float(c.r), str(c.n),
             "true" if c.reportable else "false"] for c in matrix.cells]
    return _csv_text(("city", "indicator", "mode", "variable", "r", "n", "reportable"), rows)


def _r9(x):
    return None if x is None else float(fmt_float(x))


def summary_json(ds: CityDataset, assessment: Assessment, summary: CitySummary,
                 matrix: CorrelationMatrix) -> str:
    doc = {
        "city": summary.city,
        "n_cbgs": ds.n_cbgs,
        "n_pois": ds.n_pois,
        "n_flows": int(len(ds.flows)),
        "excluded_cbgs": len(assessment.excluded_cbgs),
        "failed_items": len(assessment.failed),
        "essential_share": {k: _r9(v) for k, v in essential_share(ds).items()} if ds.n_pois else {},
        "indicators": [
            {"indicator": s.indicator, "mode": s.mode.value, "n": s.n, "mean": _r9(s.mean),
             "median": _r9(s.median), "gini": _r9(s.gini), "weighting": s.weighting}
            for s in summary.stats
        ],
        "reportable_correlations": sum(c.reportable for c in matrix.cells),
        "diagnostics": summary.diagnostics + matrix.diagnostics,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunReport:
    counts: dict
    warnings: list[str]
    failures: list[dict]
    timing_s: dict
    config: dict
    digests: dict[str, str]
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def run(cfg: RunConfig) -> RunReport:
    """Execute a full run and write every output file into ``cfg.out``."""
    cfg.validate()
    t0 = time.perf_counter()
    ds = load_city(cfg.input_paths(), QualityConfig(cfg.min_visits), city_id=cfg.city_id)
    t_load = time.perf_counter()
    provider = build_provider(cfg, ds)
    factors = EmissionFactors.from_dict(cfg.emission_factors)
    assessment = evaluate(ds, provider, cfg.specs(), factors, cfg.workers)
    t_eval = time.perf_counter()
    rows = assessment.rows
    summary = city_summary(rows, ds, cfg.weighting)
    matrix = correlation_matrix(rows, ds)
    texts = {
        "indicators.csv": indicators_csv(assessment),
        "gini.csv": gini_csv(summary),
        "correlations.csv": correlations_csv(matrix),
        "summary.json": summary_json(ds, assessment, summary, matrix),
    }
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name in OUTPUT_FILES:
        data = texts[name].encode("utf-8")
        (out / name).write_bytes(data)
        digests[name] = digest(data)
    warnings = list(assessment.warnings)
    if len(ds.flows) == 0:
        warnings.insert(0, "no flows after filtering; every CBG excluded")
    elif assessment.excluded_cbgs:
        warnings.append(f"{len(assessment.excluded_cbgs)} CBG(s) without activities excluded")
    for w in warnings:
        log.warning(w)
    report = RunReport(
        counts={"cbgs": ds.n_cbgs, "pois": ds.n_pois, "flows": int(len(ds.flows)),
                "cbgs_processed": ds.n_cbgs - len(assessment.excluded_cbgs),
                "cbgs_excluded": len(assessment.excluded_cbgs),
                "items": len(assessment.rows), "items_failed": len(assessment.failed)},
        warnings=warnings,
        failures=[{"cbg_id": c, "mode": m, "error": e} for c, m, e in assessment.failed],
        timing_s={"load": round(t_load - t0, 3), "evaluate": round(t_eval - t_load, 3),
                  "total": round(time.perf_counter() - t0, 3)},
        config=cfg.echo(),
        digests=digests,
    )
    (out / "run_report.json").write_text(report.to_json(), encoding="utf-8")
    return report


def resolve_workers(flag: int | None, configured: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return configured or 1
