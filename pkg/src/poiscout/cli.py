"""Command-line entry point: ``poiscout <command> [flags]``.

Exit codes: 0 success, 1 validation or domain error, 2 I/O or environment
error. Data goes to stdout or ``--out``; diagnostics go to stderr. Every
command finishes by writing a run manifest (``<out>.manifest.json`` unless
``--manifest`` is given; commands printing to stdout emit it on stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import OrderedDict
from decimal import Decimal
from pathlib import Path
from typing import Any

from . import __version__
from .attr import build_source_set, score_locations_attr
from .cost import CostModel, country_table, format_usd
from .errors import PoiError, ValidationError
from .geo import DEFAULT_MAX_IMAGES, DEFAULT_RADIUS_M, CoLocationTable, colocate
from .ingest import CorpusStats, DrivingLog, dataset_stats, parse_attributes, parse_images, parse_logs, read_embeddings
from .knn import DEFAULT_K, AggregationReport, KnnConfig, default_workers, score_locations_knn
from .manifest import RunManifest
from .select import (
    PoiScore,
    SelectionBudget,
    budget_to_k,
    export_subset,
    random_select,
    read_scores,
    read_selection,
    select_top_k,
    write_scores,
)

logger = logging.getLogger("poiscout")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class CommandFailed(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _warn_rejected(path: str, result) -> None:
    for err in result.errors:
        logger.warning("%s:%d: %s", path, err.line, err.message)


def _load_logs(path: str, strict: bool) -> list[DrivingLog]:
    result = parse_logs(path, strict=strict)
    _warn_rejected(path, result)
    return result.records


def _finish(manifest: RunManifest, args: argparse.Namespace) -> None:
    target = getattr(args, "manifest", None)
    out = getattr(args, "out", None)
    if target is None and out:
        target = f"{out}.manifest.json"
    if target:
        manifest.write(target)
    else:
        print(json.dumps(manifest.finish(), sort_keys=True), file=sys.stderr)


def _config(args: argparse.Namespace, *skip: str) -> dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "manifest", *skip)}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)


def _plain(x: float | Decimal) -> str:
    """Shortest fixed-point rendering, no exponent."""
    d = Decimal(str(x)).normalize()
    return f"{d:f}"


def _table(rows: list[list[str]], csv_mode: bool, right: set[int]) -> str:
    buf = io.StringIO()
    if csv_mode:
        csv.writer(buf, lineterminator="\n").writerows(rows)
        return buf.getvalue()
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        cells = [c.rjust(w) if i in right else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))]
        buf.write("  ".join(cells).rstrip() + "\n")
    return buf.getvalue()


# --- commands ---------------------------------------------------------------


def cmd_colocate(args: argparse.Namespace) -> int:
    manifest = RunManifest("colocate", _config(args), [args.logs, args.images])
    parsed_logs = parse_logs(args.logs, strict=args.strict)
    _warn_rejected(args.logs, parsed_logs)
    logs = parsed_logs.records
    images = parse_images(args.images, strict=args.strict)
    _warn_rejected(args.images, images)
    table = colocate(logs, images.records, radius_m=args.radius_m, max_images=args.max_images)
    table.write(args.out)
    with_images = sum(1 for v in table.entries.values() if v)
    manifest.outputs.append(args.out)
    manifest.diagnostics = {
        "logs": len(logs),
        "images": len(images.records),
        "logs_with_images": with_images,
        "rejected_log_lines": len(parsed_logs.errors),
        "rejected_image_lines": len(images.errors),
    }
    logger.info("co-located %d logs, %d with at least one image", len(logs), with_images)
    _finish(manifest, args)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    table = CoLocationTable.read(args.colocations)
    if args.method == "knn":
        for flag in ("source_emb", "source_ids", "target_emb", "target_ids"):
            if not getattr(args, flag):
                raise CommandFailed(f"--{flag.replace('_', '-')} is required for method knn")
        inputs = [args.colocations, args.source_emb, args.source_ids, args.target_emb, args.target_ids]
        manifest = RunManifest("score", _config(args), inputs)
        source = read_embeddings(args.source_emb, args.source_ids)
        targets = read_embeddings(args.target_emb, args.target_ids)
        report = AggregationReport()
        scores = score_locations_knn(
            table, targets, source, KnnConfig(k=args.k, normalize=not args.no_normalize), args.workers, report
        )
        diagnostics: dict[str, Any] = report.to_json()
    else:
        for flag in ("source_attrs", "target_attrs"):
            if not getattr(args, flag):
                raise CommandFailed(f"--{flag.replace('_', '-')} is required for method attr")
        manifest = RunManifest("score", _config(args), [args.colocations, args.source_attrs, args.target_attrs])
        src = parse_attributes(args.source_attrs, "lenient")
        tgt = parse_attributes(args.target_attrs, "lenient")
        source_set = build_source_set(src.records)
        scores = score_locations_attr(table.entries, tgt.records, source_set, args.workers)
        unplaced = sum(1 for r in tgt.records if r.location_id not in table.entries)
        diagnostics = {
            "locations": len(scores),
            "source_signs_unique": len(source_set),
            "dropped_source_signs": len(src.errors),
            "dropped_target_signs": len(tgt.errors),
            "target_records_outside_table": unplaced,
        }
    write_scores(args.out, scores, k=args.k)
    manifest.outputs.append(args.out)
    manifest.diagnostics = diagnostics
    print(json.dumps({"diagnostics": diagnostics}, sort_keys=True), file=sys.stderr)
    if args.figure:
        from .plotting import score_histogram

        score_histogram([s.score for s in scores], args.figure, method=args.method)
        manifest.outputs.append(args.figure)
    _finish(manifest, args)
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    if (args.alpha is None) == (args.k is None):
        raise CommandFailed("give exactly one of --alpha or --k")
    budget = SelectionBudget(alpha=args.alpha, k_absolute=args.k)
    inputs = [args.logs] + ([args.scores] if args.scores else [])
    manifest = RunManifest("select", _config(args), inputs)
    logs = _load_logs(args.logs, strict=False)
    pool = [log for log in logs if args.split == "all" or log.split == args.split]
    if not pool:
        raise CommandFailed(f"no logs in split {args.split!r}")
    pool_ids = {log.log_id for log in pool}
    scores: list[PoiScore] | None = None
    if args.scores:
        scores = [s for s in read_scores(args.scores) if s.location_id in pool_ids]
    if args.method == "random":
        if args.seed is None:
            raise CommandFailed("--seed is required for method random")
        k = budget_to_k(budget, len(pool))
        sel = random_select(pool_ids, k, args.seed, budget=budget, logs=logs)
    else:
        if not scores:
            raise CommandFailed(f"--scores with {args.method} scores for split {args.split!r} is required")
        if any(s.method != args.method for s in scores):
            raise CommandFailed(f"scores file does not hold {args.method} scores")
        sel = select_top_k(scores, budget, logs, n_total=len(pool))
    export_subset(sel, scores, args.out)
    manifest.outputs.append(args.out)
    manifest.diagnostics = {"pool": len(pool), "k": sel.k, "selected": len(sel.locations)}
    if args.figure:
        from .plotting import selection_map

        by_id = {log.log_id: log for log in logs}
        selection_map(
            [(log.lon, log.lat) for log in pool],
            [(by_id[lid].lon, by_id[lid].lat) for lid in sel.logs],
            args.figure,
            title=f"{sel.method}: {len(sel.logs)} of {len(pool)} logs",
        )
        manifest.outputs.append(args.figure)
    _finish(manifest, args)
    return EXIT_OK


def selection_geojson(selection_path: str, logs: list[DrivingLog]) -> dict[str, Any]:
    sel = read_selection(selection_path)
    by_id = {log.log_id: log for log in logs}
    features = []
    for rank, log_id in enumerate(sel.logs, start=1):
        log = by_id.get(log_id)
        if log is None:
            raise ValidationError(f"selection references unknown log_id {log_id!r}")
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [log.lon, log.lat]},
                "properties": {
                    "rank": rank,
                    "score": sel.scores.get(sel.locations[rank - 1]),
                    "method": sel.method,
                    "log_id": log_id,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def cmd_export_geojson(args: argparse.Namespace) -> int:
    manifest = RunManifest("export-geojson", _config(args), [args.selection, args.logs])
    doc = selection_geojson(args.selection, _load_logs(args.logs, strict=False))
    _emit(json.dumps(doc, indent=1) + "\n", args.out)
    if args.out:
        manifest.outputs.append(args.out)
    manifest.diagnostics = {"features": len(doc["features"])}
    _finish(manifest, args)
    return EXIT_OK


def _read_road_table(path: str) -> list[tuple[str, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"name", "road_length_km"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: header must contain name,road_length_km")
        entries = []
        for row in reader:
            try:
                entries.append((row["name"], float(row["road_length_km"].replace(",", "").replace("_", ""))))
            except ValueError:
                raise ValidationError(f"{path}:{reader.line_num}: bad road length {row['road_length_km']!r}") from None
    return entries


def cmd_cost(args: argparse.Namespace) -> int:
    if not args.road_km and not args.table:
        raise CommandFailed("give --road-km and/or --table")
    manifest = RunManifest("cost", _config(args), [args.table] if args.table else [])
    model = CostModel(args.interval_m, args.tokens_per_image, args.usd_per_million)
    entries = [(f"{_plain(km)} km", km) for km in args.road_km or []]
    if args.table:
        entries += _read_road_table(args.table)
    estimates = country_table(entries, model)
    if args.csv:
        rows = [["name", "road_length_km", "images", "tokens", "usd_exact", "usd"]]
        rows += [[e.name or "", _plain(e.road_length_km), str(e.images), str(e.tokens), _plain(e.usd_exact), str(e.usd_display)] for e in estimates]
    else:
        rows = [["name", "road_km", "images", "tokens", "cost_usd"]]
        rows += [
            [e.name or "", f"{e.road_length_km:,.0f}", f"{e.images:,}", f"{e.tokens:,}", format_usd(e.usd_display)]
            for e in estimates
        ]
    _emit(_table(rows, args.csv, right={1, 2, 3, 4, 5}), args.out)
    manifest.diagnostics = {"rows": len(estimates)}
    if args.out:
        manifest.outputs.append(args.out)
    if args.figure:
        from .plotting import bar_chart

        bar_chart({e.name or "": e.usd_display for e in estimates}, args.figure, "estimated cost (USD)")
        manifest.outputs.append(args.figure)
    _finish(manifest, args)
    return EXIT_OK


def stats_by_country(logs: list[DrivingLog], table: CoLocationTable) -> "OrderedDict[str, CorpusStats]":
    unknown = set(table.entries) - {log.log_id for log in logs}
    if unknown:
        raise ValidationError(f"co-location table has {len(unknown)} log_id(s) not in the log corpus, e.g. {min(unknown)!r}")
    groups: dict[str, list[DrivingLog]] = {}
    for log in logs:
        groups.setdefault(log.country, []).append(log)
    out: OrderedDict[str, CorpusStats] = OrderedDict((c, dataset_stats(groups[c], table)) for c in sorted(groups))
    out["ALL"] = dataset_stats(logs, table)
    return out


def cmd_stats(args: argparse.Namespace) -> int:
    manifest = RunManifest("stats", _config(args), [args.logs, args.colocations])
    logs = _load_logs(args.logs, strict=False)
    if args.split != "all":
        logs = [log for log in logs if log.split == args.split]
    table = CoLocationTable.read(args.colocations)
    stats = stats_by_country(logs, table)
    if args.csv:
        rows = [["country", "total_logs", "logs_with_sign", "logs_with_returns", "return_pct"]]
        fmt = str
    else:
        rows = [["country", "logs", "logs_w_sign", "w_returns", "return_ratio"]]
        fmt = "{:,}".format
    for country, s in stats.items():
        pct = str(s.return_percent) + ("" if args.csv else "%")
        rows.append([country, fmt(s.total_logs), fmt(s.logs_with_sign), fmt(s.logs_with_returns), pct])
    _emit(_table(rows, args.csv, right={1, 2, 3, 4}), args.out)
    manifest.diagnostics = {c: [s.total_logs, s.logs_with_sign, s.logs_with_returns] for c, s in stats.items()}
    if args.out:
        manifest.outputs.append(args.out)
    if args.figure:
        from .plotting import bar_chart

        per_country = {c: float(s.return_percent) for c, s in stats.items() if c != "ALL"}
        bar_chart(per_country, args.figure, "logs with street-view returns (%)", fmt="{:.2f}")
        manifest.outputs.append(args.figure)
    _finish(manifest, args)
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poiscout", description="Score and select driving-log locations for data collection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", help="run manifest path (default: <out>.manifest.json)")

    p = sub.add_parser("colocate", help="pair driving logs with nearby street-view images")
    p.add_argument("--logs", required=True, help="driving logs (JSONL or CSV)")
    p.add_argument("--images", required=True, help="street-view image metadata (JSONL)")
    p.add_argument("--radius-m", type=float, default=DEFAULT_RADIUS_M)
    p.add_argument("--max-images", type=int, default=DEFAULT_MAX_IMAGES)
    p.add_argument("--strict", action="store_true", help="fail on the first invalid input line")
    p.add_argument("--out", required=True, help="co-location table (JSONL)")
    common(p)
    p.set_defaults(func=cmd_colocate)

    p = sub.add_parser("score", help="score locations by KNN feature distance or sign attributes")
    p.add_argument("--method", choices=("knn", "attr"), required=True)
    p.add_argument("--colocations", required=True)
    p.add_argument("--source-emb")
    p.add_argument("--source-ids")
    p.add_argument("--target-emb")
    p.add_argument("--target-ids")
    p.add_argument("--source-attrs")
    p.add_argument("--target-attrs")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="neighbor rank for knn (default 10)")
    p.add_argument("--no-normalize", action="store_true", help="skip L2 normalization (knn)")
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--out", required=True, help="location scores (JSONL)")
    p.add_argument("--figure", help="write a score histogram (PNG/PDF/SVG)")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="pick a budgeted subset of locations")
    p.add_argument("--method", choices=("knn", "attr", "random"), required=True)
    p.add_argument("--scores", help="location scores from `score` (not needed for random)")
    p.add_argument("--logs", required=True)
    p.add_argument("--alpha", type=float, help="budget as a fraction of the pool")
    p.add_argument("--k", type=int, help="budget as an absolute count")
    p.add_argument("--seed", type=int, help="required for random")
    p.add_argument("--split", default="train", choices=("train", "val", "all"), help="log split forming the pool")
    p.add_argument("--out", required=True, help="selection manifest (JSONL)")
    p.add_argument("--figure", help="write a map of the selected logs")
    common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("export-geojson", help="render a selection as a GeoJSON FeatureCollection")
    p.add_argument("--selection", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--out", help="output file (default: stdout)")
    common(p)
    p.set_defaults(func=cmd_export_geojson)

    p = sub.add_parser("cost", help="estimate attribute-extraction cost for a road network")
    p.add_argument("--road-km", type=float, action="append", help="road length in km (repeatable)")
    p.add_argument("--table", help="CSV with columns name,road_length_km")
    p.add_argument("--interval-m", type=float, default=CostModel.sampling_interval_m)
    p.add_argument("--tokens-per-image", type=int, default=CostModel.tokens_per_image)
    p.add_argument("--usd-per-million", type=float, default=CostModel.usd_per_million_tokens)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--figure", help="write a bar chart of the estimates")
    common(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("stats", help="per-country street-view return statistics")
    p.add_argument("--logs", required=True)
    p.add_argument("--colocations", required=True)
    p.add_argument("--split", default="all", choices=("train", "val", "all"))
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--figure", help="write a bar chart of return ratios")
    common(p)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CommandFailed as exc:
        print(f"poiscout {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (PoiError, ValueError) as exc:
        print(f"poiscout {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"poiscout {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
