import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from remoteness.ingest import CoordinateMode, PlaceRecord, PlaceSet

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


def make_set(rows, year=2010, mode=CoordinateMode.PLANAR):
    """PlaceSet from (place_id, x, y, population[, county_id]) tuples."""
    recs = []
    for row in rows:
        pid, x, y, pop = row[:4]
        county = row[4] if len(row) > 4 else None
        recs.append(PlaceRecord(pid, year, float(x), float(y), int(pop), county_id=county))
    return PlaceSet(year, tuple(recs), CoordinateMode(mode))


def random_set(rng, n, mode=CoordinateMode.PLANAR, year=2010, span=None):
    """Random places with populations spread across all categories."""
    if mode is CoordinateMode.PLANAR:
        span = span or 500_000.0
        xs = np.round(rng.uniform(0, span, n))
        ys = np.round(rng.uniform(0, span, n))
    else:
        xs = np.round(rng.uniform(-110, -90, n), 4)
        ys = np.round(rng.uniform(30, 45, n), 4)
    pops = np.floor(10 ** rng.uniform(0, 6.5, n)).astype(int)
    rows = [(f"p{i:04d}", xs[i], ys[i], pops[i], f"c{i % 7}") for i in range(n)]
    return make_set(rows, year, mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data_dir():
    return DATA
