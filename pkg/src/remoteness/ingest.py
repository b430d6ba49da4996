"""Reading, validating and writing place tables.

A place is a point (typically a census place centroid) with a population
count.  Input is either CSV with a fixed header or a GeoJSON
FeatureCollection of Point features.  Rows that fail validation are not
dropped silently: each one lands in a rejection list with its row number
and the error class that rejected it.

Centroids are taken as given.  Whether they are geometric centroids or
label points is up to whoever produced the file.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    CoordinateModeError,
    DuplicatePlace,
    InputNotFound,
    InvalidCoordinate,
    InvalidRow,
    MalformedHeader,
    NegativePopulation,
    RemotenessError,
)


class CoordinateMode(str, enum.Enum):
    GEOGRAPHIC = "geographic"  # lon/lat in degrees
    PLANAR = "planar"  # x/y in meters

    @property
    def coordinate_columns(self) -> tuple[str, str]:
        return ("lon", "lat") if self is CoordinateMode.GEOGRAPHIC else ("x", "y")

    @property
    def header(self) -> tuple[str, ...]:
        a, b = self.coordinate_columns
        return ("place_id", "name", "year", a, b, "population", "county_id")


@dataclass(frozen=True, slots=True)
class PlaceRecord:
    """One populated place in one year.

    ``x``/``y`` hold lon/lat degrees in geographic mode and meters in
    planar mode.
    """

    place_id: str
    year: int
    x: float
    y: float
    population: int
    name: Optional[str] = None
    county_id: Optional[str] = None

    @property
    def lon(self) -> float:
        return self.x

    @property
    def lat(self) -> float:
        return self.y


@dataclass(frozen=True)
class PlaceSet:
    """All places of one year, in input order."""

    year: int
    records: tuple[PlaceRecord, ...]
    mode: CoordinateMode
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.records, tuple):
            object.__setattr__(self, "records", tuple(self.records))
        for rec in self.records:
            if rec.year != self.year:
                raise ValueError(
                    f"record {rec.place_id!r} has year {rec.year}, place set is {self.year}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PlaceRecord]:
        return iter(self.records)

    @cached_property
    def coords(self) -> np.ndarray:
        """(n, 2) float64 array of x/y (or lon/lat)."""
        arr = np.empty((len(self.records), 2), dtype=np.float64)
        for i, rec in enumerate(self.records):
            arr[i, 0] = rec.x
            arr[i, 1] = rec.y
        arr.setflags(write=False)
        return arr

    @cached_property
    def populations(self) -> np.ndarray:
        arr = np.fromiter((r.population for r in self.records), dtype=np.int64, count=len(self.records))
        arr.setflags(write=False)
        return arr

    @cached_property
    def place_ids(self) -> tuple[str, ...]:
        return tuple(r.place_id for r in self.records)

    def same_content(self, other: "PlaceSet") -> bool:
        return (self.year, self.mode, self.records) == (other.year, other.mode, other.records)


@dataclass(frozen=True)
class Rejection:
    source: str
    row: int
    reason: str
    message: str
    place_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "row": self.row,
            "reason": self.reason,
            "message": self.message,
            "place_id": self.place_id,
        }


@dataclass
class ParseResult:
    place_sets: list[PlaceSet]
    mode: CoordinateMode
    rejections: list[Rejection] = field(default_factory=list)

    def by_year(self) -> dict[int, PlaceSet]:
        return {ps.year: ps for ps in self.place_sets}

    @property
    def warnings(self) -> list[str]:
        return [w for ps in self.place_sets for w in ps.warnings]


# ----------------------------------------------------------------------------
# field parsing
# ----------------------------------------------------------------------------


def _opt_str(value) -> Optional[str]:
    if value is None:
        return None
    value = str(value)
    return value if value.strip() != "" else None


def _parse_int(value, what: str) -> int:
    if isinstance(value, bool):
        raise InvalidRow(f"{what} must be an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not value.is_integer():
            raise InvalidRow(f"{what} must be an integer, got {value!r}")
        return int(value)
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        as_float = float(text)
    except ValueError:
        raise InvalidRow(f"{what} must be an integer, got {value!r}") from None
    if not math.isfinite(as_float) or not as_float.is_integer():
        raise InvalidRow(f"{what} must be an integer, got {value!r}")
    return int(as_float)


def _parse_coordinate(value, what: str, place_id: Optional[str]) -> float:
    if isinstance(value, bool):
        raise InvalidCoordinate(f"{what} is not a number: {value!r}", place_id=place_id)
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise InvalidCoordinate(f"{what} is not a number: {value!r}", place_id=place_id) from None
    return out


def check_coordinate(x: float, y: float, mode: CoordinateMode, place_id: Optional[str] = None) -> None:
    """Raise InvalidCoordinate unless (x, y) is legal for ``mode``."""
    a, b = mode.coordinate_columns
    if not math.isfinite(x) or not math.isfinite(y):
        raise InvalidCoordinate(
            f"non-finite coordinate {a}={x!r}, {b}={y!r} for place {place_id!r}", place_id=place_id
        )
    if mode is CoordinateMode.GEOGRAPHIC:
        if not -90.0 <= y <= 90.0:
            raise InvalidCoordinate(f"lat={y!r} outside [-90, 90] for place {place_id!r}", place_id=place_id)
        if not -180.0 <= x <= 180.0:
            raise InvalidCoordinate(f"lon={x!r} outside [-180, 180] for place {place_id!r}", place_id=place_id)


def _build_record(raw: dict, mode: CoordinateMode) -> PlaceRecord:
    place_id = _opt_str(raw.get("place_id"))
    if place_id is None:
        raise InvalidRow("place_id is empty")
    year = _parse_int(raw.get("year"), "year")
    a, b = mode.coordinate_columns
    x = _parse_coordinate(raw.get(a), a, place_id)
    y = _parse_coordinate(raw.get(b), b, place_id)
    check_coordinate(x, y, mode, place_id)
    population = _parse_int(raw.get("population"), "population")
    if population < 0:
        raise NegativePopulation(f"population {population} < 0 for place {place_id!r}", place_id=place_id)
    return PlaceRecord(
        place_id=place_id,
        year=year,
        x=x,
        y=y,
        population=population,
        name=_opt_str(raw.get("name")),
        county_id=_opt_str(raw.get("county_id")),
    )


# ----------------------------------------------------------------------------
# readers
# ----------------------------------------------------------------------------


def _mode_from_header(columns: Sequence[str], source: str) -> CoordinateMode:
    cols = set(columns)
    if len(cols) != len(columns):
        raise MalformedHeader(f"{source}: duplicate column names in header {list(columns)}")
    matches = [m for m in CoordinateMode if cols == set(m.header)]
    if not matches:
        has_geo = {"lon", "lat"} <= cols
        has_planar = {"x", "y"} <= cols
        if has_geo and has_planar:
            raise MalformedHeader(f"{source}: header mixes lon/lat and x/y columns")
        expected = " or ".join(",".join(m.header) for m in CoordinateMode)
        raise MalformedHeader(f"{source}: header {','.join(columns)} does not match {expected}")
    return matches[0]


def _iter_csv(path: Path, mode: Optional[CoordinateMode]):
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: file is empty, header required") from None
        header = [h.strip() for h in header]
        file_mode = _mode_from_header(header, str(path))
        if mode is not None and mode is not file_mode:
            raise MalformedHeader(
                f"{path}: header has {'/'.join(file_mode.coordinate_columns)} columns "
                f"but coordinate mode {mode.value} was requested"
            )
        yield file_mode
        for row in reader:
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                yield reader.line_num, None, InvalidRow(
                    f"expected {len(header)} fields, found {len(row)}"
                )
                continue
            yield reader.line_num, dict(zip(header, row)), None


def _iter_geojson(path: Path, mode: Optional[CoordinateMode]):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedHeader(f"{path}: expected a GeoJSON FeatureCollection")
    declared = doc.get("coord_mode")
    if declared is not None:
        try:
            declared = CoordinateMode(declared)
        except ValueError:
            raise MalformedHeader(f"{path}: unknown coord_mode {declared!r}") from None
        if mode is not None and declared is not mode:
            raise MalformedHeader(f"{path}: file declares {declared.value} coordinates, {mode.value} requested")
    file_mode = mode or declared or CoordinateMode.GEOGRAPHIC
    yield file_mode
    a, b = file_mode.coordinate_columns
    for i, feat in enumerate(doc.get("features") or [], start=1):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "Point":
            yield i, None, InvalidRow(f"feature {i} is not a Point geometry")
            continue
        coords = geom.get("coordinates") or []
        if len(coords) < 2:
            yield i, None, InvalidRow(f"feature {i} has no coordinates")
            continue
        props = dict(feat.get("properties") or {})
        missing = [k for k in ("place_id", "year", "population") if k not in props]
        if missing:
            yield i, None, InvalidRow(f"feature {i} lacks properties {missing}")
            continue
        raw = {k: props.get(k) for k in ("place_id", "name", "year", "population", "county_id")}
        raw[a], raw[b] = coords[0], coords[1]
        yield i, raw, None


def parse_places(path, mode: Optional[CoordinateMode] = None) -> ParseResult:
    """Parse a CSV or GeoJSON place file into one PlaceSet per year.

    ``mode`` defaults to whatever the file declares (CSV header columns, or
    the ``coord_mode`` member of a GeoJSON collection, else geographic).
    Row-level problems become :class:`Rejection` entries; header and
    file-level problems raise.
    """
    return parse_many([path], mode)


def parse_many(paths: Iterable, mode: Optional[CoordinateMode] = None) -> ParseResult:
    """Parse several files into one combined set of years.

    All files must share one coordinate mode.  A (place_id, year) pair
    that repeats, within or across files, is rejected after its first
    occurrence.
    """
    mode = CoordinateMode(mode) if mode is not None else None
    by_year: dict[int, list[PlaceRecord]] = defaultdict(list)
    seen: set[tuple[str, int]] = set()
    rejections: list[Rejection] = []
    run_mode: Optional[CoordinateMode] = None

    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise InputNotFound(f"input file not found: {path}", path=str(path))
        if path.suffix.lower() in (".geojson", ".json"):
            rows = _iter_geojson(path, mode)
        else:
            rows = _iter_csv(path, mode)
        file_mode = next(rows)
        if run_mode is None:
            run_mode = file_mode
        elif file_mode is not run_mode:
            raise CoordinateModeError(
                f"{path}: {file_mode.value} coordinates, earlier inputs are {run_mode.value}"
            )
        for row_no, raw, err in rows:
            if err is None:
                try:
                    rec = _build_record(raw, file_mode)
                except RemotenessError as exc:
                    err = exc
                else:
                    key = (rec.place_id, rec.year)
                    if key in seen:
                        err = DuplicatePlace(
                            f"place {rec.place_id!r} repeated in year {rec.year}", place_id=rec.place_id
                        )
                    else:
                        seen.add(key)
                        by_year[rec.year].append(rec)
                        continue
            rejections.append(
                Rejection(
                    source=str(path),
                    row=row_no,
                    reason=err.name,
                    message=err.message,
                    place_id=err.context.get("place_id") or (raw or {}).get("place_id") or None,
                )
            )

    if run_mode is None:
        run_mode = mode or CoordinateMode.GEOGRAPHIC
    sets = [validate_coordinates(PlaceSet(year, tuple(recs), run_mode)) for year, recs in sorted(by_year.items())]
    return ParseResult(place_sets=sets, mode=run_mode, rejections=rejections)


def validate_coordinates(ps: PlaceSet) -> PlaceSet:
    """Check coordinate invariants and flag co-located places.

    Raises InvalidCoordinate naming the first offending place.  Places
    sharing an exact position are kept; a warning lists their ids.
    """
    positions: dict[tuple[float, float], list[str]] = defaultdict(list)
    for rec in ps.records:
        check_coordinate(rec.x, rec.y, ps.mode, rec.place_id)
        positions[(rec.x, rec.y)].append(rec.place_id)
    warnings = [w for w in ps.warnings if not w.startswith("duplicate position")]
    for (x, y), ids in positions.items():
        if len(ids) > 1:
            warnings.append(f"duplicate position ({x!r}, {y!r}) in {ps.year}: {', '.join(ids)}")
    return replace(ps, warnings=tuple(warnings))


# ----------------------------------------------------------------------------
# writers
# ----------------------------------------------------------------------------


def write_places(place_sets: Sequence[PlaceSet], path) -> None:
    """Write place sets as canonical CSV (years in the given order)."""
    if not place_sets:
        raise ValueError("nothing to write")
    mode = place_sets[0].mode
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(mode.header)
        for ps in place_sets:
            if ps.mode is not mode:
                raise CoordinateModeError("cannot write mixed coordinate modes to one file")
            for r in ps.records:
                writer.writerow(
                    [r.place_id, r.name or "", r.year, repr(r.x), repr(r.y), r.population, r.county_id or ""]
                )
