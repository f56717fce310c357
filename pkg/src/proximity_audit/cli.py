"""``proximity-audit`` command line: run, synth, validate.

Exit codes: 0 ok, 1 usage or configuration error, 2 input data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .catchment import CatchmentError
from .dataset import DataError, QualityConfig, SynthError, SynthSpec, dump_city, inspect_files, synth_city
from .pipeline import ConfigError, RunConfig, resolve_workers, run

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _diagnose("usage", message)
        sys.exit(EXIT_USAGE)


def _diagnose(kind: str, message: str, **extra) -> None:
    doc = {"error": kind, "message": message}
    doc.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="proximity-audit", description="15-minute city accessibility assessment")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="compute indicators, Gini and correlations")
    r.add_argument("--config", type=Path)
    r.add_argument("--data", help="directory with pois.csv, cbgs.csv, flows.csv")
    r.add_argument("--provider", choices=("fixed", "network", "polygons"))
    r.add_argument("--budget-min", type=float)
    r.add_argument("--modes", help="comma-separated, e.g. walk,cycle,transit,car")
    r.add_argument("--min-visits", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--network-nodes")
    r.add_argument("--network-edges")
    r.add_argument("--isolines")
    r.add_argument("--city-id")
    r.add_argument("--weighting", choices=("population", "unweighted"))

    s = sub.add_parser("synth", help="write a synthetic city")
    s.add_argument("--spec", type=Path, help="YAML/JSON file with SynthSpec fields")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="check input files against schemas and quality rules")
    v.add_argument("data", help="directory with pois.csv, cbgs.csv, flows.csv")
    v.add_argument("--min-visits", type=int, default=5)
    return p


def _run(args) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        "data": args.data, "provider": args.provider, "budget_min": args.budget_min,
        "min_visits": args.min_visits, "seed": args.seed, "out": args.out,
        "network_nodes": args.network_nodes, "network_edges": args.network_edges,
        "isolines": args.isolines, "city_id": args.city_id, "weighting": args.weighting,
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.modes:
        cfg.modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    cfg.workers = resolve_workers(args.workers, cfg.workers if args.config else None)
    report = run(cfg)
    print(f"wrote {len(report.digests) + 1} files to {cfg.out}: "
          f"{report.counts['cbgs_processed']} CBGs processed, {report.counts['cbgs_excluded']} excluded, "
          f"{report.counts['items_failed']} failed items")
    return EXIT_OK


def _synth(args) -> int:
    data = {}
    if args.spec:
        try:
            data = yaml.safe_load(args.spec.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read synth spec {args.spec}: {exc}") from None
    spec = SynthSpec.from_dict(data)
    ds = synth_city(spec, args.seed)
    dump_city(ds, args.out)
    print(f"wrote {ds.n_pois} POIs, {ds.n_cbgs} CBGs, {len(ds.flows)} flows to {args.out}")
    return EXIT_OK


def _validate(args) -> int:
    try:
        _, issues = inspect_files(args.data, QualityConfig(args.min_visits))
    except OSError as exc:
        _diagnose("input", f"cannot read input: {exc}", file=getattr(exc, "filename", None))
        return EXIT_DATA
    for issue in issues:
        print(issue)
    print(f"{len(issues)} issues")
    return EXIT_OK if not issues else EXIT_DATA


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _run, "synth": _synth, "validate": _validate}[args.command]
    try:
        return handler(args)
    except (ConfigError, SynthError) as exc:
        _diagnose("config", str(exc))
        return EXIT_USAGE
    except DataError as exc:
        _diagnose("input", str(exc), file=exc.file, line=exc.line, column=exc.column)
        return EXIT_DATA
    except (OSError, CatchmentError) as exc:
        _diagnose("input", str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
