"""Within-county heterogeneity of the place-level index.

County-level rurality codes assign one value to every place in a county.
These diagnostics measure how much place-level variation that hides: per
county dispersion, the share of total variance that sits within counties,
and rank agreement with an external ordinal county code.

All sums use :func:`math.fsum`, so reports do not depend on input order.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import RIResult
from .errors import InputNotFound, InsufficientOverlap, InvalidRow, MalformedHeader, NoCountyIds
from .ingest import PlaceRecord, PlaceSet

PlaceSource = Union[PlaceSet, Iterable[PlaceSet], Iterable[PlaceRecord], Mapping]


@dataclass(frozen=True)
class CountyCodeTable:
    scheme: str
    codes: dict[str, int]

    def __post_init__(self):
        if not self.codes:
            raise InvalidRow("county code table is empty")


def read_county_codes(path, scheme: Optional[str] = None) -> CountyCodeTable:
    """Read a ``county_id,code`` CSV."""
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"county code file not found: {path}", path=str(path))
    codes: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["county_id", "code"]:
            raise MalformedHeader(f"{path}: expected header county_id,code, got {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise InvalidRow(f"{path}:{reader.line_num}: expected 2 fields")
            cid, code = row[0].strip(), row[1].strip()
            if not cid:
                raise InvalidRow(f"{path}:{reader.line_num}: empty county_id")
            if cid in codes:
                raise InvalidRow(f"{path}:{reader.line_num}: duplicate county_id {cid!r}")
            try:
                codes[cid] = int(code)
            except ValueError:
                raise InvalidRow(f"{path}:{reader.line_num}: code {code!r} is not an integer") from None
    return CountyCodeTable(scheme or path.stem, codes)


def _county_lookup(places: PlaceSource) -> dict[tuple[str, int], Optional[str]]:
    if isinstance(places, Mapping):
        return dict(places)
    if isinstance(places, PlaceSet):
        places = [places]
    lookup = {}
    for item in places:
        records = item.records if isinstance(item, PlaceSet) else (item,)
        for rec in records:
            lookup[(rec.place_id, rec.year)] = rec.county_id
    return lookup


def _match(results: Sequence[RIResult], places: PlaceSource):
    lookup = _county_lookup(places)
    matched: list[tuple[str, float]] = []
    excluded = 0
    for r in results:
        cid = lookup.get((r.place_id, r.year))
        if cid:
            matched.append((cid, r.scaled))
        else:
            excluded += 1
    return matched, excluded


@dataclass(frozen=True)
class CountyStats:
    county_id: str
    count: int
    mean: float
    min: float
    max: float
    range: float
    std: float


@dataclass(frozen=True)
class SpearmanResult:
    scheme: str
    rho: Optional[float]
    n_matched: int
    n_excluded: int


@dataclass
class HeterogeneityReport:
    counties: list[CountyStats]
    n_places: int
    n_excluded: int
    ss_total: float
    ss_within: float
    ss_between: float
    within_share: float
    spearman: Optional[SpearmanResult] = None
    notes: list[str] = field(default_factory=list)

    @property
    def variance_total(self) -> float:
        return self.ss_total / self.n_places

    @property
    def variance_within(self) -> float:
        return self.ss_within / self.n_places

    @property
    def variance_between(self) -> float:
        return self.ss_between / self.n_places

    def to_dict(self) -> dict:
        return {
            "n_places": self.n_places,
            "n_excluded": self.n_excluded,
            "n_counties": len(self.counties),
            "variance": {
                "total": self.variance_total,
                "within": self.variance_within,
                "between": self.variance_between,
                "within_share": self.within_share,
            },
            "counties": [asdict(c) for c in self.counties],
            "spearman": asdict(self.spearman) if self.spearman else None,
            "notes": list(self.notes),
        }


def heterogeneity(results: Sequence[RIResult], places: PlaceSource) -> HeterogeneityReport:
    """Per-county statistics and a one-way variance decomposition of scaled RI.

    Places without a county_id are excluded and counted.  The within-county
    share is ``SS_within / SS_total`` (0.0 when every value is identical).
    """
    matched, excluded = _match(results, places)
    if not matched:
        raise NoCountyIds("no place has a county_id; heterogeneity needs county assignments")

    groups: dict[str, list[float]] = defaultdict(list)
    for cid, v in matched:
        groups[cid].append(v)
    values = [v for _, v in matched]
    n = len(values)
    grand = math.fsum(values) / n
    ss_total = math.fsum((v - grand) ** 2 for v in values)

    counties, within_parts, between_parts = [], [], []
    for cid in sorted(groups):
        vals = groups[cid]
        m = len(vals)
        mean = math.fsum(vals) / m
        ss = math.fsum((v - mean) ** 2 for v in vals)
        within_parts.append(ss)
        between_parts.append(m * (mean - grand) ** 2)
        lo, hi = min(vals), max(vals)
        counties.append(CountyStats(cid, m, mean, lo, hi, hi - lo, math.sqrt(ss / m)))
    ss_within = math.fsum(within_parts)
    ss_between = math.fsum(between_parts)

    notes = []
    if ss_total > 0:
        share = min(1.0, max(0.0, ss_within / ss_total))
    else:
        share = 0.0
        notes.append("all scaled values identical; within-county share set to 0.0")
    return HeterogeneityReport(counties, n, excluded, ss_total, ss_within, ss_between, share, notes=notes)


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation with average ranks for ties.

    Returns None when either variable is constant.
    """
    if len(x) != len(y):
        raise ValueError("x and y differ in length")
    if len(x) < 2:
        raise InsufficientOverlap("spearman needs at least 2 observations")
    from scipy.stats import rankdata  # slow import, only needed here

    rx = rankdata(np.asarray(x, dtype=np.float64), method="average")
    ry = rankdata(np.asarray(y, dtype=np.float64), method="average")
    mx = math.fsum(rx) / len(rx)
    my = math.fsum(ry) / len(ry)
    dx = rx - mx
    dy = ry - my
    sxy = math.fsum(dx * dy)
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        return None
    rho = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def code_agreement(results: Sequence[RIResult], places: PlaceSource, codes: CountyCodeTable) -> SpearmanResult:
    """Rank agreement between place RI and the code of each place's county."""
    matched, excluded = _match(results, places)
    pairs = [(v, codes.codes[cid]) for cid, v in matched if cid in codes.codes]
    excluded += len(matched) - len(pairs)
    if len(pairs) < 2:
        raise InsufficientOverlap(
            f"only {len(pairs)} place(s) have a county present in the {codes.scheme} table; need 2"
        )
    pairs.sort()
    rho = spearman([p[0] for p in pairs], [p[1] for p in pairs])
    return SpearmanResult(codes.scheme, rho, len(pairs), excluded)


def analyze(
    results: Sequence[RIResult],
    places: PlaceSource,
    codes: Optional[CountyCodeTable] = None,
) -> HeterogeneityReport:
    report = heterogeneity(results, places)
    if codes is not None:
        report.spearman = code_agreement(results, places, codes)
        if report.spearman.rho is None:
            report.notes.append("spearman undefined: RI or county code is constant over matched places")
    return report


def format_table(report: HeterogeneityReport, title: str = "") -> str:
    """Human-readable summary."""
    lines = []
    if title:
        lines.append(title)
    lines.append(
        f"places: {report.n_places}  excluded: {report.n_excluded}  counties: {len(report.counties)}"
    )
    lines.append(
        f"variance total {report.variance_total:.6f} = within {report.variance_within:.6f}"
        f" + between {report.variance_between:.6f}  (within share {report.within_share:.4f})"
    )
    if report.spearman is not None:
        rho = "undefined" if report.spearman.rho is None else f"{report.spearman.rho:.4f}"
        lines.append(f"spearman vs {report.spearman.scheme}: {rho}  (n={report.spearman.n_matched})")
    lines.append(f"{'county_id':<14}{'n':>6}{'mean':>10}{'min':>10}{'max':>10}{'range':>10}{'std':>10}")
    for c in report.counties:
        lines.append(
            f"{c.county_id:<14}{c.count:>6}{c.mean:>10.4f}{c.min:>10.4f}{c.max:>10.4f}{c.range:>10.4f}{c.std:>10.4f}"
        )
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)
