"""Command-line front end: ``trlkit {simulate,quantify,fit,report,run-all}``.

Exit codes
----------
0  success (warnings never change the code)
1  unexpected failure
2  bad command-line usage
3  input or I/O problem (missing file, schema, duplicate key, referential,
   empty horizon, missing county outage data, unwritable output)
4  numeric guard (constant or collinear predictor, non-positive response)
5  single group: the random-intercept model is not identified
6  no convergence

Settings resolve as: flags, then the manifest JSON (``landfall`` and a
``thresholds`` object), then built-in defaults.  The effective settings go to
``<out>/run.json``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from . import report
from .covariates import CovariateOptions, assemble_rows, diagnostics, standardize
from .data_model import load_inputs, read_manifest
from .errors import InputError, TrlError
from .glmm import FitControls, ModelSpec, fit_glmm, model_report
from .resilience import (
    DEFAULT_LANDFALL,
    SelectionThresholds,
    build_series,
    screen_regions,
    transient_loss,
)
from .synth import WorldParams, simulate_world

logger = logging.getLogger("trlkit")


@dataclass
class RunConfig:
    manifest_path: Path | None
    output_dir: Path
    thresholds: SelectionThresholds = field(default_factory=SelectionThresholds)
    boundaries_path: Path | None = None
    emit_geojson: bool = False
    warnings: list = field(default_factory=list)

    def effective(self) -> dict:
        t = self.thresholds
        return {
            "manifest": str(self.manifest_path) if self.manifest_path else None,
            "output_dir": str(self.output_dir),
            "landfall": t.landfall.isoformat(),
            "rate_floor": t.rate_floor,
            "window_days": t.window_days,
            "z_floor": t.z_floor,
            "z_days_min": t.z_days_min,
            "boundaries": str(self.boundaries_path) if self.boundaries_path else None,
        }


def resolve_config(args) -> RunConfig:
    manifest = read_manifest(args.manifest) if args.manifest else {}
    from_file = dict(manifest.get("thresholds") or {})
    if "landfall" in manifest:
        from_file.setdefault("landfall", manifest["landfall"])
    flags = {
        "landfall": args.landfall,
        "rate_floor": args.rate_floor,
        "z_floor": args.z_floor,
        "z_days_min": args.z_days,
    }
    merged = {**from_file, **{k: v for k, v in flags.items() if v is not None}}
    if "landfall" in merged:
        merged["landfall"] = dt.date.fromisoformat(str(merged["landfall"]))
    known = {"landfall", "rate_floor", "z_floor", "z_days_min", "window_days"}
    try:
        thresholds = SelectionThresholds(**{k: v for k, v in merged.items() if k in known})
    except ValueError as exc:
        raise InputError(f"invalid thresholds: {exc}") from exc
    boundaries = getattr(args, "boundaries", None)
    return RunConfig(
        manifest_path=Path(args.manifest) if args.manifest else None,
        output_dir=Path(args.out),
        thresholds=thresholds,
        boundaries_path=Path(boundaries) if boundaries else None,
        emit_geojson=bool(boundaries),
    )


def _warn(config: RunConfig, message: str) -> None:
    config.warnings.append(message)
    logger.warning(message)


# ----------------------------------------------------------------------------
# stages


def _quantify(config: RunConfig):
    dataset = load_inputs(config.manifest_path)
    screens = screen_regions(dataset, config.thresholds)
    selected = [s.region for s in screens if s.included]
    results = [transient_loss(build_series(dataset, r)) for r in selected]
    return dataset, screens, results


def cmd_quantify(config: RunConfig):
    dataset, screens, results = _quantify(config)
    out = config.output_dir
    report.write_regions(out / "regions.csv", results)
    report.write_json(out / "selection.json",
                      report.selection_payload(screens, config.thresholds, dataset.report))
    if not results:
        _warn(config, "no region passed the selection screen; regions.csv has a header only")
    logger.info("quantify: %d of %d regions selected", len(results), len(screens))
    return dataset, results


def cmd_fit(config: RunConfig):
    dataset, _, results = _quantify(config)
    if not results:
        raise InputError("no affected regions to fit")
    rows = assemble_rows(dataset, results, CovariateOptions())
    out = config.output_dir
    report.write_covariates(out / "covariates.csv", rows)
    spec, controls = ModelSpec(), FitControls()
    fit = fit_glmm(rows, spec, controls, on_single_group="raise")
    payload = model_report(fit, spec, controls)
    payload["diagnostics"] = diagnostics(
        standardize(rows[list(spec.predictors)])).as_dict()
    if fit.boundary:
        _warn(config, "group variance estimated at its floor (boundary fit)")
    report.write_json(out / "model.json", payload)
    return fit


def cmd_report(config: RunConfig):
    out = config.output_dir
    regions_path = out / "regions.csv"
    if regions_path.exists():
        dataset = load_inputs(config.manifest_path)
        regions = report.read_regions(regions_path)
    else:
        dataset, _ = cmd_quantify(config)
        regions = report.read_regions(regions_path)
    T = dataset.horizon.days
    report.write_histogram(out / "histogram.csv", regions["trl"].tolist(), T)
    series = [build_series(dataset, r) for r in dataset.regions]
    report.write_curves(out / "curves.csv", series, set(regions["polygon_id"]))
    if config.emit_geojson:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            geo, missing = report.choropleth(config.boundaries_path, regions)
        if missing:
            _warn(config, f"{len(missing)} region(s) lack a boundary feature: "
                          + ", ".join(missing[:10]))
        report.write_json(out / "choropleth.geojson", geo)


def cmd_simulate(args) -> Path:
    params = WorldParams(seed=args.seed, n_groups=args.groups, per_group=args.per_group)
    simulate_world(params, directory=args.out)
    return Path(args.out) / "manifest.json"


# ----------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trlkit", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic input set and manifest")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--groups", type=int, default=12)
    sim.add_argument("--per-group", type=int, default=5)

    for name, text in (("quantify", "resilience loss per region"),
                       ("fit", "covariates and the mixed model"),
                       ("report", "histogram, curves and optional choropleth"),
                       ("run-all", "quantify, fit and report in one go")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--landfall", help="YYYY-MM-DD (default %s)" % DEFAULT_LANDFALL)
        p.add_argument("--rate-floor", type=float)
        p.add_argument("--z-floor", type=float)
        p.add_argument("--z-days", type=int)
        if name in ("report", "run-all"):
            p.add_argument("--boundaries", help="GeoJSON keyed by polygon_id")
    return parser


def _run(args) -> None:
    if args.command == "simulate":
        cmd_simulate(args)
        return
    config = resolve_config(args)
    try:
        if args.command == "quantify":
            cmd_quantify(config)
        elif args.command == "fit":
            cmd_fit(config)
        elif args.command == "report":
            cmd_report(config)
        elif args.command == "run-all":
            cmd_quantify(config)
            cmd_fit(config)
            cmd_report(config)
    finally:
        report.write_json(config.output_dir / "run.json",
                          {"command": args.command, "config": config.effective(),
                           "warnings": config.warnings})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except TrlError as exc:
        print(f"trlkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"trlkit {args.command}: I/O error: {exc}", file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
