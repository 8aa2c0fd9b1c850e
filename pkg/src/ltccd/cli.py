"""Staged command-line pipeline driven by one TOML config.

Each subcommand runs exactly one stage and writes its outputs under the
configured output directory with stable names. Delimited and JSON outputs
are byte-identical across reruns of the same config and inputs; every such
output gets an audit sidecar hashing the config and the stage inputs.

Exit codes: 0 success, 1 stage error, 2 usage error, 3 config error.
Failures print a single JSON object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import aggregate as agg
from . import detect as det
from . import evaluate as ev
from . import ingest
from . import report as rep
from . import synth
from .catalog import (
    Catalog,
    StackPlan,
    TimestepPlans,
    conflict_references,
    plan_timestep,
)
from .config import RunConfig, load_config
from .errors import ConfigError, EmptyReportError, EmptyStackError, LtccdError
from .raster import (
    CoherenceGrid,
    MaskGrid,
    load_aligned_stack,
    load_grid,
    load_mask,
    write_outputs,
)
from .reduce import load_summary, reduce_stack, save_summary

log = logging.getLogger(__name__)

STAGES = ("plan", "fetch", "reduce", "detect", "mask", "aggregate",
          "evaluate", "stability", "simulate", "report")


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_audit(out_path: Path, cfg: RunConfig, inputs: Sequence[Path]) -> None:
    """Sidecar hashing the output, the effective config, and stage inputs."""
    sidecar = {
        "config_sha256": cfg.content_hash(),
        "output_sha256": _sha256_file(out_path),
        "inputs": {
            str(p): _sha256_file(p) for p in sorted(set(inputs)) if p.is_file()
        },
    }
    with open(f"{out_path}.audit.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plans_dir(cfg: RunConfig) -> Path:
    d = cfg.output_dir() / "plans"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_plan_triples(cfg: RunConfig) -> list[TimestepPlans]:
    triples = []
    for path in sorted(_plans_dir(cfg).glob("*.json")):
        try:
            date.fromisoformat(path.stem)
        except ValueError:
            continue
        with open(path) as fh:
            payload = json.load(fh)
        triples.append(TimestepPlans(
            conflict=StackPlan.from_dict(payload["conflict"]),
            pre=StackPlan.from_dict(payload["pre"]),
            counterfactual=StackPlan.from_dict(payload["counterfactual"]),
        ))
    if not triples:
        raise ConfigError("no stack plans found; run the plan or simulate stage first")
    return triples


def _limited_refs(catalog: Catalog, cfg: RunConfig, limit_key: str = "run") -> list:
    refs = conflict_references(catalog, cfg.epochs)
    limit = int(cfg.section(limit_key).get("max_timesteps", 0))
    return refs[:limit] if limit > 0 else refs


def _raster_dir(cfg: RunConfig, plan: StackPlan) -> Path:
    return cfg.path("rasters_dir") / f"{plan.epoch}_{plan.timestep_date.isoformat()}"


def _plan_timestep_args(cfg: RunConfig) -> dict:
    p = cfg.section("planning")
    return {
        "window_days": int(p["window_days"]),
        "max_pairs": int(p["max_pairs"]),
        "min_pairs": int(p["min_pairs"]),
        "max_bperp_m": float(p["max_bperp_m"]),
        "tolerance_days": int(p["tolerance_days"]),
    }


def stage_plan(cfg: RunConfig, args) -> int:
    catalog = Catalog.from_csv(cfg.path("catalog", must_exist=True))
    plans_dir = _plans_dir(cfg)
    kwargs = _plan_timestep_args(cfg)
    planned, skipped = 0, {}
    for ref in _limited_refs(catalog, cfg):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("always")
                triple = plan_timestep(catalog, ref, cfg.epochs, **kwargs)
        except LtccdError as exc:
            skipped[ref.day.isoformat()] = f"{type(exc).__name__}: {exc}"
            continue
        out = plans_dir / f"{triple.conflict.timestep_date.isoformat()}.json"
        _write_json(out, {
            "conflict": triple.conflict.to_dict(),
            "pre": triple.pre.to_dict(),
            "counterfactual": triple.counterfactual.to_dict(),
        })
        write_audit(out, cfg, [cfg.path("catalog")])
        planned += 1
    _write_json(plans_dir / "skipped.json", skipped)
    print(f"planned {planned} timesteps, skipped {len(skipped)}")
    if planned == 0:
        raise EmptyStackError("no timestep could be planned from this catalog")
    return 0


def stage_fetch(cfg: RunConfig, args) -> int:
    f = cfg.section("fetch")
    options = ingest.ProcessOptions(
        max_concurrent=int(getattr(args, "jobs", 0) or cfg.section("run")["jobs"]),
        max_retries=int(f["max_retries"]),
        poll_initial_s=float(f["poll_initial_s"]),
        poll_cap_s=float(f["poll_cap_s"]),
        looks=str(f["looks"]),
    )
    endpoint = str(f["endpoint"]) or None
    succeeded = failed = 0
    for triple in _load_plan_triples(cfg):
        for plan in triple:
            outcomes = ingest.process_pairs(
                plan, _raster_dir(cfg, plan), endpoint=endpoint, options=options,
            )
            succeeded += sum(1 for o in outcomes.values() if o.state == ingest.SUCCEEDED)
            failed += sum(1 for o in outcomes.values() if o.state != ingest.SUCCEEDED)
    print(f"fetched {succeeded} products, {failed} failures")
    return 0


def stage_reduce(cfg: RunConfig, args) -> int:
    min_pairs = int(cfg.section("planning")["min_pairs"])
    out_dir = cfg.output_dir() / "summaries"
    out_dir.mkdir(parents=True, exist_ok=True)
    reduced = 0
    for triple in _load_plan_triples(cfg):
        for plan in triple:
            raster_dir = _raster_dir(cfg, plan)
            paths, pair_dicts = [], []
            for pair in plan.pairs:
                p = raster_dir / f"{pair.reference}__{pair.secondary}.tif"
                if p.exists():
                    paths.append(p)
                    pair_dicts.append(pair.to_dict())
                else:
                    log.warning("missing product %s", p)
            grids = load_aligned_stack(paths)
            summary = reduce_stack(
                grids, min_count=min_pairs,
                epoch=plan.epoch, timestep_date=plan.timestep_date,
            )
            basename = f"{plan.epoch}_{plan.timestep_date.isoformat()}"
            save_summary(summary, out_dir, basename, pairs=pair_dicts)
            write_audit(out_dir / f"{basename}.json", cfg, paths)
            reduced += 1
    print(f"reduced {reduced} stacks")
    return 0


def _detection_dates(cfg: RunConfig) -> list[date]:
    return sorted(t.conflict.timestep_date for t in _load_plan_triples(cfg))


def stage_detect(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    summaries = out / "summaries"
    det_dir = out / "detections"
    det_dir.mkdir(parents=True, exist_ok=True)
    conflict_dets, cf_dets = [], []
    for day in _detection_dates(cfg):
        stem = day.isoformat()
        pre = load_summary(summaries, f"pre_{stem}")
        conflict = load_summary(summaries, f"conflict_{stem}")
        cf = load_summary(summaries, f"counterfactual_{stem}")
        d_conflict = det.classify_damage(conflict, pre, cfg.detector)
        d_cf = det.classify_damage(cf, pre, cfg.detector)
        det.save_detection(d_conflict, det_dir, f"conflict_{stem}")
        det.save_detection(d_cf, det_dir, f"counterfactual_{stem}")
        conflict_dets.append(d_conflict)
        cf_dets.append(d_cf)

    confirmed, records = det.confirm_persistence(
        conflict_dets, window_days=cfg.detector.persistence_window_days,
    )
    cumulative = det.accumulate_damage(conflict_dets)
    first = det.first_detection_grid(conflict_dets)
    write_outputs(confirmed, out / "confirmed_mask.tif", "mask")
    write_outputs(cumulative, out / "cumulative.tif", "mask")
    write_outputs(
        CoherenceGrid(meta=cumulative.meta, values=first.astype(np.float32)),
        out / "first_detected.tif", "statistic",
    )
    records_path = out / "damage_records.csv"
    det.save_damage_records(records, records_path)
    write_audit(records_path, cfg, sorted(summaries.glob("*.tif")))
    print(f"classified {len(conflict_dets)} timesteps, "
          f"{len(records)} flagged pixels, "
          f"{sum(1 for r in records if r.confirmed)} confirmed")
    return 0


def stage_mask(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    first_date = min(_detection_dates(cfg))
    pre = load_summary(out / "summaries", f"pre_{first_date.isoformat()}")
    valid = det.compute_valid_mask(pre, cfg.detector)
    write_outputs(valid, out / "valid_mask.tif", "mask")
    share = float(np.mean(valid.values == 1))
    print(f"valid area: {100.0 * share:.2f}% of pixels")
    return 0


def stage_aggregate(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    footprints = agg.load_footprints(cfg.path("footprints", must_exist=True))
    cumulative = load_mask(out / "cumulative.tif")
    first = load_grid(out / "first_detected.tif").values.astype(np.int64)
    threshold = float(cfg.section("evaluation")["coverage_threshold"])
    flags = agg.mark_buildings(footprints, cumulative, first, coverage_threshold=threshold)

    buildings_path = out / "buildings.geojson"
    agg.save_flags(flags, footprints, buildings_path)
    write_audit(buildings_path, cfg, [cfg.path("footprints"), out / "cumulative.tif"])

    series = agg.region_timeseries(flags, footprints, _detection_dates(cfg))
    series_path = out / "series.csv"
    agg.save_series(series, series_path)
    write_audit(series_path, cfg, [cfg.path("footprints"), out / "cumulative.tif"])
    damaged = sum(1 for f in flags if f.damaged)
    print(f"{damaged} of {len(flags)} buildings damaged")
    return 0


def _load_detections(cfg: RunConfig, epoch: str) -> list[det.DetectionGrid]:
    det_dir = cfg.output_dir() / "detections"
    return [
        det.load_detection(det_dir, f"{epoch}_{d.isoformat()}", d)
        for d in _detection_dates(cfg)
    ]


def stage_evaluate(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    e = cfg.section("evaluation")
    scope = str(e["scope"])
    grace = int(e["grace_steps"])
    points = ev.load_points(cfg.path("reference_points", must_exist=True))
    valid = load_mask(out / "valid_mask.tif")
    conflict_dets = _load_detections(cfg, "conflict")
    cf_dets = _load_detections(cfg, "counterfactual")

    reports = []
    for survey_date in sorted({p.survey_date for p in points}):
        subset = [p for p in points if p.survey_date == survey_date]
        cum_c = ev.accumulate_with_grace(conflict_dets, survey_date, grace)
        cum_f = ev.accumulate_with_grace(cf_dets, survey_date, grace)
        reports.append(ev.agreement_metrics(
            ev.match_points(subset, cum_c, valid, scope),
            ev.match_points(subset, cum_f, valid, scope),
            survey_date,
            scope,
        ))
    agreement_path = out / "agreement.csv"
    ev.save_agreement_reports(reports, agreement_path)
    write_audit(agreement_path, cfg, [cfg.path("reference_points"), out / "valid_mask.tif"])
    for r in reports:
        print(f"{r.survey_date} agreement={r.agreement:.2f} tpr={r.tpr:.2f} "
              f"fpr={r.fpr:.2f} f1={r.f1:.2f} csi={r.csi:.2f} n={r.total_locations}")
    return 0


def stage_stability(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    rect = [float(v) for v in cfg.section("evaluation")["stable_region"]]
    if len(rect) != 4:
        raise ConfigError("evaluation.stable_region must be [xmin, ymin, xmax, ymax]")
    summaries = out / "summaries"
    rows = []
    region: Optional[MaskGrid] = None
    for day in _detection_dates(cfg):
        stem = day.isoformat()
        pre = load_summary(summaries, f"pre_{stem}")
        conflict = load_summary(summaries, f"conflict_{stem}")
        if region is None:
            region = _region_from_rect(pre.meta, rect)
        row = ev.stability_report(region, conflict, pre, bins=int(cfg.section("evaluation")["bins"]))
        rows.append((day, row.hellinger, row.mean_offset))
    stability_path = out / "stability.csv"
    with open(stability_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep_date", "hellinger", "mean_offset"])
        for day, h, offset in rows:
            writer.writerow([day.isoformat(), f"{h:.6f}", f"{offset:.6f}"])
    write_audit(stability_path, cfg, sorted(summaries.glob("*_mean.tif")))
    print(f"stability over {len(rows)} timesteps; max H={max(h for _, h, _ in rows):.4f}")
    return 0


def _region_from_rect(meta, rect: list[float]) -> MaskGrid:
    xmin, ymin, xmax, ymax = rect
    values = np.zeros((meta.height, meta.width), dtype=np.uint8)
    for row in range(meta.height):
        for col in range(meta.width):
            x0, y0, x1, y1 = meta.pixel_bounds(row, col)
            cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
            if xmin <= cx <= xmax and ymin <= cy <= ymax:
                values[row, col] = 1
    return MaskGrid(meta=meta, values=values)


def stage_simulate(cfg: RunConfig, args) -> int:
    s = cfg.section("simulate")
    spec_path = cfg.path("scene_spec")
    if spec_path.exists():
        spec = synth.load_scene_spec(spec_path)
    else:
        spec = synth.standard_scene(
            seed=int(s["seed"]), width=int(s["width"]), height=int(s["height"]),
        )
        synth.save_scene_spec(spec, spec_path)

    catalog = synth.lattice_catalog()
    catalog.to_csv(cfg.path("catalog"))
    refs = conflict_references(catalog, cfg.epochs)
    limit = int(s.get("max_timesteps", 0))
    if limit > 0:
        refs = refs[:limit]

    plans_dir = _plans_dir(cfg)
    kwargs = _plan_timestep_args(cfg)
    truth = None
    written = 0
    for ref in refs:
        triple = plan_timestep(catalog, ref, cfg.epochs, **kwargs)
        _write_json(plans_dir / f"{triple.conflict.timestep_date.isoformat()}.json", {
            "conflict": triple.conflict.to_dict(),
            "pre": triple.pre.to_dict(),
            "counterfactual": triple.counterfactual.to_dict(),
        })
        for plan in triple:
            raster_dir = _raster_dir(cfg, plan)
            raster_dir.mkdir(parents=True, exist_ok=True)
            triples = synth.generate_plan_grids(spec, plan, catalog)
            for ref_id, sec_id, grid in triples:
                write_outputs(grid, raster_dir / f"{ref_id}__{sec_id}.tif", "coherence")
                written += 1
            if truth is None and plan.epoch == "pre":
                truth = synth.build_truth(spec, [g for _, _, g in triples], cfg.detector)
    _write_json(plans_dir / "skipped.json", {})

    out = cfg.output_dir()
    truth_dir = out / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)
    write_outputs(
        MaskGrid(meta=truth.meta, values=truth.expected_valid.astype(np.uint8)),
        truth_dir / "expected_valid.tif", "mask",
    )
    write_outputs(
        CoherenceGrid(meta=truth.meta, values=truth.damage_ordinals.astype(np.float32)),
        truth_dir / "damage_ordinals.tif", "statistic",
    )

    footprints = synth.synthetic_footprints(truth)
    fp_path = cfg.path("footprints")
    _write_footprints_geojson(footprints, fp_path)
    survey = refs[len(refs) // 2].day
    points = synth.synthetic_points(truth, survey, count=200, seed=int(s["seed"]))
    _write_points_geojson(points, cfg.path("reference_points"))
    print(f"simulated {written} coherence grids over {len(refs)} timesteps; "
          f"{len(footprints)} footprints, {len(points)} reference points")
    return 0


def _write_footprints_geojson(footprints, path: Path) -> None:
    features = []
    for fp in footprints:
        ring = list(fp.polygon) + [fp.polygon[0]]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in ring]]},
            "properties": {"id": fp.id, "region_id": fp.region_id},
        })
    _write_json(path, {"type": "FeatureCollection", "features": features})


def _write_points_geojson(points, path: Path) -> None:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": list(p.location)},
            "properties": {"label": p.label, "survey_date": p.survey_date.isoformat()},
        }
        for p in points
    ]
    _write_json(path, {"type": "FeatureCollection", "features": features})


def stage_report(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    wrote = []

    series_path = out / "series.csv"
    if series_path.exists():
        rep.render_series(agg.load_series(series_path), report_dir / "series.svg")
        wrote.append("series.svg")

    records_path = out / "damage_records.csv"
    if records_path.exists():
        records = det.load_damage_records(records_path)
        if any(r.confirmed for r in records):
            rep.render_persistence(records, report_dir / "persistence.svg")
            wrote.append("persistence.svg")

    agreement_path = out / "agreement.csv"
    if agreement_path.exists():
        with open(agreement_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rep.render_agreement_table(rows, report_dir / "agreement.txt")
        wrote.append("agreement.txt")

    if not wrote:
        raise EmptyReportError("no series, damage-record, or agreement artifacts to report")
    print(f"report wrote {', '.join(wrote)}")
    return 0


HANDLERS = {
    "plan": stage_plan,
    "fetch": stage_fetch,
    "reduce": stage_reduce,
    "detect": stage_detect,
    "mask": stage_mask,
    "aggregate": stage_aggregate,
    "evaluate": stage_evaluate,
    "stability": stage_stability,
    "simulate": stage_simulate,
    "report": stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltccd",
        description="Coherence-stack damage monitoring pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config value (dotted key path)",
        )
        p.add_argument("--jobs", type=int, default=0, help="worker-count cap")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(command: str, exc: BaseException, code: int) -> int:
    payload = {
        "error": type(exc).__name__,
        "message": str(exc),
        "command": command,
        "exit_code": code,
    }
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, tuple(args.set))
        return HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(args.command, exc, 3)
    except LtccdError as exc:
        return _fail(args.command, exc, 1)
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        log.debug("unexpected failure", exc_info=True)
        return _fail(args.command, exc, 1)


if __name__ == "__main__":
    raise SystemExit(main())
