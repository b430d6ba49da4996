"""Seeded synthetic place tables for tests and benchmarks.

Distribution
------------
* positions: uniform over the extent (lon/lat degrees or planar meters),
  rounded to 1e-6 degrees or 1 m;
* populations: log-normal with median ~600 and sigma 2.2 in log space,
  giving a heavy right tail: roughly 10% of places reach 10,000 and about
  0.3% reach 250,000, similar to U.S. census places;
* two places per population category are planted at random rows with a
  population drawn uniformly inside the category, so every category has
  at least two members whenever ``n >= 2 * categories``;
* county ids come from a regular grid over the extent (``C<row><col>``);
* later years scale each non-planted population by a log-normal growth
  factor (planted places keep their category).

The generator uses numpy's PCG64 stream, which is stable across platforms.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .ingest import CoordinateMode, PlaceRecord, PlaceSet, validate_coordinates
from .spatial import DEFAULT_CATEGORIES, PopulationCategory

CONUS_EXTENT = (-124.7, 25.1, -67.0, 49.4)
PLANAR_EXTENT = (0.0, 0.0, 4_500_000.0, 2_800_000.0)

_LOG_MEDIAN = 6.4
_LOG_SIGMA = 2.2
_MAX_POPULATION = 9_000_000
_PLANTED_PER_CATEGORY = 2
_TOP_CATEGORY_CAP = 2_000_000


def generate_places(
    n: int,
    seed: int = 42,
    mode: CoordinateMode = CoordinateMode.GEOGRAPHIC,
    extent: Optional[Sequence[float]] = None,
    years: Sequence[int] = (2010,),
    county_grid: tuple[int, int] = (10, 20),
    categories: Sequence[PopulationCategory] = DEFAULT_CATEGORIES,
) -> list[PlaceSet]:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not years:
        raise ValueError("at least one year is required")
    mode = CoordinateMode(mode)
    if extent is None:
        extent = CONUS_EXTENT if mode is CoordinateMode.GEOGRAPHIC else PLANAR_EXTENT
    x0, y0, x1, y1 = map(float, extent)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("extent must be xmin,ymin,xmax,ymax with xmax > xmin and ymax > ymin")
    rows, cols = county_grid

    rng = np.random.default_rng(seed)
    xs = rng.uniform(x0, x1, n)
    ys = rng.uniform(y0, y1, n)
    digits = 6 if mode is CoordinateMode.GEOGRAPHIC else 0
    xs = np.round(xs, digits)
    ys = np.round(ys, digits)
    pops = np.minimum(np.floor(np.exp(rng.normal(_LOG_MEDIAN, _LOG_SIGMA, n))), _MAX_POPULATION).astype(np.int64)

    planted = rng.permutation(n)[: min(n, _PLANTED_PER_CATEGORY * len(categories))]
    planted_cat = {}
    for j, row in enumerate(planted.tolist()):
        cat = categories[j % len(categories)]
        hi = cat.upper if cat.upper is not None else max(_TOP_CATEGORY_CAP, cat.lower + 1)
        pops[row] = rng.integers(cat.lower, hi)
        planted_cat[row] = cat

    cx = np.clip(((xs - x0) / (x1 - x0) * cols).astype(np.int64), 0, cols - 1)
    cy = np.clip(((ys - y0) / (y1 - y0) * rows).astype(np.int64), 0, rows - 1)
    width = max(2, len(str(max(rows, cols) - 1)))
    counties = [f"C{r:0{width}d}{c:0{width}d}" for r, c in zip(cy.tolist(), cx.tolist())]

    out = []
    current = pops.astype(np.float64)
    for k, year in enumerate(years):
        if k > 0:
            growth = np.exp(rng.normal(0.08, 0.25, n))
            current = np.minimum(np.floor(current * growth), _MAX_POPULATION)
            for row, cat in planted_cat.items():
                current[row] = pops[row]
        year_pops = current.astype(np.int64).tolist()
        records = tuple(
            PlaceRecord(
                place_id=f"P{i:06d}",
                year=int(year),
                x=float(xs[i]),
                y=float(ys[i]),
                population=int(year_pops[i]),
                name=f"Place {i}",
                county_id=counties[i],
            )
            for i in range(n)
        )
        out.append(validate_coordinates(PlaceSet(int(year), records, mode)))
    return out


def category_counts(ps: PlaceSet, categories: Sequence[PopulationCategory] = DEFAULT_CATEGORIES) -> list[int]:
    return [sum(1 for r in ps.records if c.contains(r.population)) for c in categories]


def describe(ps_list: Sequence[PlaceSet]) -> str:
    parts = []
    for ps in ps_list:
        counts = category_counts(ps)
        parts.append(f"{ps.year}: {len(ps)} places, per category {counts}")
    return "; ".join(parts) if parts else "empty"


__all__ = ["generate_places", "category_counts", "describe", "CONUS_EXTENT", "PLANAR_EXTENT"]
