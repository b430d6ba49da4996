"""Command-line interface: ``remoteness compute | analyze | generate``.

Errors are reported as a single JSON line on stderr, and the process
exits with the error's code (see :mod:`remoteness.errors`); argument
errors exit with 2.  Output files are written to temporary names and
renamed only after everything has been computed, so a failed run leaves
no partial results behind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analysis import analyze, format_table, read_county_codes
from .core import (
    PRESETS,
    Computation,
    DegenerateGroupWarning,
    RIResult,
    RunConfig,
    ScalingMode,
    config_from_dict,
    run,
    weights_from_obj,
)
from .errors import ConfigError, InputNotFound, InvalidRow, MalformedHeader, NoCountyIds, RemotenessError
from .generate import generate_places
from .ingest import CoordinateMode, ParseResult, parse_many, write_places
from .spatial import FallbackPolicy, Provenance

# ----------------------------------------------------------------------------
# file helpers
# ----------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class StagedOutputs:
    """Collect output files in temporary siblings; publish them all at once."""

    def __init__(self):
        self._staged: list[tuple[str, Path]] = []

    def add(self, path, data: bytes) -> str:
        path = Path(path)
        if not path.parent.is_dir():
            raise InputNotFound(f"output directory does not exist: {path.parent}", path=str(path))
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
        except BaseException:
            os.unlink(tmp)
            raise
        self._staged.append((tmp, path))
        return hashlib.sha256(data).hexdigest()

    def commit(self) -> None:
        for tmp, path in self._staged:
            os.replace(tmp, path)
        self._staged.clear()

    def discard(self) -> None:
        for tmp, _ in self._staged:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
        self._staged.clear()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def _csv_text(header: Sequence[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode("utf-8")


# ----------------------------------------------------------------------------
# results table
# ----------------------------------------------------------------------------


def results_header(n_categories: int) -> list[str]:
    return ["place_id", "year", "population", *(f"d{k}_km" for k in range(1, n_categories + 1)), "raw_ri", "ri", "flags"]


def results_csv(comp: Computation) -> bytes:
    n_cat = len(comp.config.categories)
    rows = (
        [r.place_id, r.year, r.population, *map(repr, r.distances), repr(r.raw), repr(r.scaled), r.flags_text]
        for r in comp.results
    )
    return _csv_text(results_header(n_cat), rows)


def read_results(path) -> list[RIResult]:
    """Read a results CSV written by ``compute``."""
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"results file not found: {path}", path=str(path))
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        n_cat = sum(1 for h in header if h.startswith("d") and h.endswith("_km"))
        if header != results_header(n_cat):
            raise MalformedHeader(f"{path}: not a results file (header {','.join(header)})")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidRow(f"{path}:{reader.line_num}: expected {len(header)} fields")
            try:
                out.append(
                    RIResult(
                        place_id=row[0],
                        year=int(row[1]),
                        population=int(row[2]),
                        distances=tuple(float(v) for v in row[3 : 3 + n_cat]),
                        raw=float(row[3 + n_cat]),
                        scaled=float(row[4 + n_cat]),
                        clamp_flags=frozenset(f for f in row[5 + n_cat].split("|") if f),
                    )
                )
            except ValueError:
                raise InvalidRow(f"{path}:{reader.line_num}: malformed number") from None
    return out


def results_geojson(comp: Computation, mode: CoordinateMode) -> bytes:
    features = []
    for yr in comp.years:
        offset = len(features)
        for i, rec in enumerate(yr.places.records):
            res = comp.results[offset + i]
            props = {
                "place_id": rec.place_id,
                "name": rec.name,
                "year": rec.year,
                "population": rec.population,
                "county_id": rec.county_id,
                "raw_ri": res.raw,
                "ri": res.scaled,
                "flags": res.flags_text,
            }
            for k, d in enumerate(res.distances, start=1):
                props[f"d{k}_km"] = d
            features.append(
                {"type": "Feature", "geometry": {"type": "Point", "coordinates": [rec.x, rec.y]}, "properties": props}
            )
    return _json_bytes({"type": "FeatureCollection", "coord_mode": mode.value, "features": features})


def debug_distances_csv(comp: Computation) -> bytes:
    names = {p: str(p) for p in Provenance}
    rows = []
    for yr in comp.years:
        t = yr.table
        d = t.d.tolist()
        prov = t.provenance.tolist()
        for i, pid in enumerate(t.place_ids):
            for j in range(t.d.shape[1]):
                near = t.nearest_id(i, j)
                rows.append([pid, yr.places.year, j + 1, repr(d[i][j]), near or "", names[Provenance(prov[i][j])]])
    return _csv_text(["place_id", "year", "pc", "distance_km", "nearest_id", "provenance"], rows)


# ----------------------------------------------------------------------------
# compute
# ----------------------------------------------------------------------------


def _load_json(path, what: str):
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"{what} file not found: {path}", path=str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def resolve_config(args) -> RunConfig:
    """Config file first, then any flags that were given."""
    cfg = config_from_dict(_load_json(args.config, "config")) if args.config else RunConfig()
    changes = {}
    if args.weights is not None:
        if args.weights in PRESETS:
            changes["weights"] = PRESETS[args.weights]
        else:
            changes["weights"] = weights_from_obj(_load_json(args.weights, "weights"), Path(args.weights).stem)
    if args.scaling is not None:
        changes["scaling"] = ScalingMode.parse(args.scaling)
    if args.fallback is not None:
        changes["fallback"] = FallbackPolicy(args.fallback)
    if args.log_base is not None:
        changes["log_base"] = args.log_base
    if args.population_floor is not None:
        changes["population_floor"] = args.population_floor
    if args.distance_floor_km is not None:
        changes["distance_floor_km"] = args.distance_floor_km
    return replace(cfg, **changes)


def build_manifest(
    cfg: RunConfig,
    parsed: ParseResult,
    comp: Computation,
    inputs: Sequence[str],
    outputs: dict[str, dict],
) -> dict:
    counts = comp.warning_counts()
    by_reason: dict[str, int] = {}
    for rej in parsed.rejections:
        by_reason[rej.reason] = by_reason.get(rej.reason, 0) + 1
    messages = list(parsed.warnings)
    messages += [f"degenerate scaling group {g}: all raw values equal, scaled to 0.5" for g in comp.degenerate_groups]
    return {
        "tool": "remoteness",
        "version": __version__,
        "created_utc": _timestamp(),
        "coord_mode": parsed.mode.value,
        "config": cfg.to_dict(parsed.mode),
        "inputs": [{"path": str(p), "sha256": sha256_file(p), "bytes": Path(p).stat().st_size} for p in inputs],
        "years": {
            str(yr.places.year): {
                "places": len(yr.places),
                "raw_min": float(yr.raw.min()),
                "raw_max": float(yr.raw.max()),
                "fallback_km": yr.table.fallback_km,
            }
            for yr in comp.years
        },
        "rejections": {
            "count": len(parsed.rejections),
            "by_reason": dict(sorted(by_reason.items())),
            "rows": [r.to_dict() for r in parsed.rejections],
        },
        "warnings": {"counts": counts, "messages": messages},
        "outputs": outputs,
    }


def cmd_compute(args) -> int:
    cfg = resolve_config(args)
    mode = CoordinateMode(args.coord_mode) if args.coord_mode else None
    parsed = parse_many(args.input, mode)
    if args.strict and parsed.rejections:
        first = parsed.rejections[0]
        raise InvalidRow(
            f"{len(parsed.rejections)} row(s) rejected; first at {first.source}:{first.row}: {first.message}",
            reason=first.reason,
        )
    if not parsed.place_sets:
        raise InvalidRow("no valid place rows in input")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGroupWarning)
        comp = run(parsed.place_sets, cfg)

    out = Path(args.out)
    manifest_path = Path(args.manifest) if args.manifest else out.with_name(out.stem + ".manifest.json")
    staged = StagedOutputs()
    try:
        outputs = {"results": {"file": out.name, "sha256": staged.add(out, results_csv(comp))}}
        if args.geojson:
            p = Path(args.geojson)
            outputs["geojson"] = {"file": p.name, "sha256": staged.add(p, results_geojson(comp, parsed.mode))}
        if args.debug_distances:
            p = Path(args.debug_distances)
            outputs["debug_distances"] = {"file": p.name, "sha256": staged.add(p, debug_distances_csv(comp))}
        manifest = build_manifest(cfg, parsed, comp, args.input, outputs)
        staged.add(manifest_path, _json_bytes(manifest))
        staged.commit()
    finally:
        staged.discard()

    for msg in manifest["warnings"]["messages"]:
        print(f"warning: {msg}", file=sys.stderr)
    if parsed.rejections:
        print(f"warning: {len(parsed.rejections)} row(s) rejected, see {manifest_path.name}", file=sys.stderr)
    years = ", ".join(f"{yr.places.year}: {len(yr.places)}" for yr in comp.years)
    print(f"wrote {len(comp.results)} rows ({years}) to {out}; manifest {manifest_path}")
    return 0


# ----------------------------------------------------------------------------
# analyze
# ----------------------------------------------------------------------------


def _results_from_geojson(path) -> tuple[list[RIResult], dict]:
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"results file not found: {path}", path=str(path))
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: not valid JSON ({exc})") from None
    results, counties = [], {}
    for feat in doc.get("features") or []:
        p = feat.get("properties") or {}
        try:
            res = RIResult(p["place_id"], int(p["year"]), float(p["raw_ri"]), float(p["ri"]))
        except (KeyError, TypeError, ValueError):
            raise InvalidRow(f"{path}: feature lacks place_id/year/raw_ri/ri") from None
        results.append(res)
        counties[(res.place_id, res.year)] = p.get("county_id") or None
    return results, counties


def analysis_report(results: Sequence[RIResult], places, codes=None) -> dict:
    """Per-year heterogeneity reports keyed by year (as strings)."""
    years = sorted({r.year for r in results})
    out = {}
    for year in years:
        subset = [r for r in results if r.year == year]
        out[str(year)] = analyze(subset, places, codes)
    return out


def cmd_analyze(args) -> int:
    if args.results.lower().endswith((".geojson", ".json")):
        results, places = _results_from_geojson(args.results)
        if args.places:
            places = _places_lookup(args.places, args.coord_mode)
    else:
        results = read_results(args.results)
        if not args.places:
            raise NoCountyIds("a results CSV carries no county_id; pass --places with the input place file")
        places = _places_lookup(args.places, args.coord_mode)
    codes = read_county_codes(args.codes, args.scheme) if args.codes else None
    reports = analysis_report(results, places, codes)

    doc = {
        "tool": "remoteness",
        "version": __version__,
        "scheme": codes.scheme if codes else None,
        "years": {year: rep.to_dict() for year, rep in reports.items()},
    }
    if args.json:
        staged = StagedOutputs()
        try:
            staged.add(args.json, _json_bytes(doc))
            staged.commit()
        finally:
            staged.discard()
    for year, rep in reports.items():
        print(format_table(rep, title=f"year {year}"))
        print()
    return 0


def _places_lookup(path, coord_mode) -> dict:
    parsed = parse_many([path], CoordinateMode(coord_mode) if coord_mode else None)
    return {(r.place_id, r.year): r.county_id for ps in parsed.place_sets for r in ps.records}


# ----------------------------------------------------------------------------
# generate
# ----------------------------------------------------------------------------


def _floats(text: str, n: int, what: str) -> list[float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(values) != n:
        raise ConfigError(f"{what}: expected {n} comma-separated numbers, got {text!r}")
    return values


def cmd_generate(args) -> int:
    mode = CoordinateMode(args.coord_mode or "geographic")
    extent = _floats(args.extent, 4, "--extent") if args.extent else None
    try:
        years = [int(y) for y in args.years.split(",") if y.strip()]
    except ValueError:
        raise ConfigError(f"--years: expected comma-separated integers, got {args.years!r}") from None
    try:
        rows, cols = (int(v) for v in args.county_grid.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--county-grid: expected ROWSxCOLS, got {args.county_grid!r}") from None
    if args.n < 1 or rows < 1 or cols < 1:
        raise ConfigError("--n and --county-grid dimensions must be >= 1")
    try:
        sets = generate_places(args.n, args.seed, mode, extent, years or (2010,), (rows, cols))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    staged = StagedOutputs()
    try:
        with tempfile.TemporaryDirectory() as tmp:
            scratch = Path(tmp) / "places.csv"
            write_places(sets, scratch)
            staged.add(args.out, scratch.read_bytes())
        staged.commit()
    finally:
        staged.discard()
    print(f"wrote {sum(len(ps) for ps in sets)} places ({len(sets)} year(s)) to {args.out}")
    return 0


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remoteness",
        description="Place-level remoteness index from populated-place points.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="compute the index for one or more years")
    p.add_argument("--input", action="append", required=True, metavar="PATH", help="place CSV or GeoJSON (repeatable)")
    p.add_argument("--coord-mode", choices=[m.value for m in CoordinateMode])
    p.add_argument("--weights", metavar="equal|ascending|FILE", help="weight preset or JSON file")
    p.add_argument("--scaling", choices=["per-year", "per_year", "global"])
    p.add_argument("--fallback", choices=[f.value for f in FallbackPolicy])
    p.add_argument("--log-base", type=float, metavar="N")
    p.add_argument("--population-floor", type=int, metavar="N")
    p.add_argument("--distance-floor-km", type=float, metavar="X")
    p.add_argument("--config", metavar="PATH", help="JSON run config; flags override it")
    p.add_argument("--out", required=True, metavar="PATH", help="results CSV")
    p.add_argument("--manifest", metavar="PATH", help="manifest JSON (default: OUT stem + .manifest.json)")
    p.add_argument("--geojson", metavar="PATH", help="also write results as GeoJSON points")
    p.add_argument("--debug-distances", metavar="PATH", help="per place and category distance dump")
    p.add_argument("--strict", action="store_true", help="fail if any input row is rejected")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("analyze", help="within-county heterogeneity of computed results")
    p.add_argument("--results", required=True, metavar="PATH", help="results CSV or GeoJSON from compute")
    p.add_argument("--places", metavar="PATH", help="place file supplying county_id (required for CSV results)")
    p.add_argument("--coord-mode", choices=[m.value for m in CoordinateMode])
    p.add_argument("--codes", metavar="PATH", help="county_id,code CSV")
    p.add_argument("--scheme", help="label for the county codes (default: codes file name)")
    p.add_argument("--json", metavar="PATH", help="write the report as JSON")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("generate", help="write a seeded synthetic place file")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--coord-mode", choices=[m.value for m in CoordinateMode])
    p.add_argument("--extent", metavar="XMIN,YMIN,XMAX,YMAX")
    p.add_argument("--years", default="2010", metavar="Y1,Y2,...")
    p.add_argument("--county-grid", default="10x20", metavar="ROWSxCOLS")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RemotenessError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = RemotenessError(f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
        print(json.dumps(err.to_dict(), sort_keys=True), file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
