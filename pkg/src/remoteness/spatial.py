"""Population categories and exact nearest-neighbour distances.

Each population category gets its own k-d tree.  Planar inputs are
searched in meters; geographic inputs are mapped to unit vectors and
searched in 3-D chord space, where chord length is a monotone function of
great-circle distance, so the tree never prunes a true nearest neighbour.

The tree works on squared separations computed exactly as
:func:`squared_separation` does, and :func:`separation_to_km` converts the
winner, so results are bit-identical to an exhaustive scan.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyCategory, MissingCategory
from .ingest import CoordinateMode, PlaceRecord, PlaceSet
from .kdtree import KDTree, coherent_order

EARTH_RADIUS_KM = 6371.0088

_DEG = math.pi / 180.0


@dataclass(frozen=True)
class PopulationCategory:
    """Half-open population interval ``[lower, upper)``; ``upper=None`` is unbounded."""

    index: int
    lower: int
    upper: Optional[int] = None

    def __post_init__(self):
        if self.lower < 0:
            raise ValueError(f"category {self.index}: lower bound must be >= 0")
        if self.upper is not None and self.upper <= self.lower:
            raise ValueError(f"category {self.index}: upper bound must exceed lower bound")

    def contains(self, population: int) -> bool:
        return self.lower <= population and (self.upper is None or population < self.upper)

    def label(self) -> str:
        return f"{self.lower}+" if self.upper is None else f"{self.lower}-{self.upper}"


DEFAULT_CATEGORIES: tuple[PopulationCategory, ...] = (
    PopulationCategory(1, 10_000, 20_000),
    PopulationCategory(2, 20_000, 50_000),
    PopulationCategory(3, 50_000, 100_000),
    PopulationCategory(4, 100_000, 250_000),
    PopulationCategory(5, 250_000, None),
)


def check_categories(categories: Sequence[PopulationCategory]) -> None:
    """Categories must be non-empty, ordered by lower bound and disjoint."""
    if not categories:
        raise ValueError("at least one population category is required")
    for prev, cur in zip(categories, categories[1:]):
        if cur.lower < prev.lower:
            raise ValueError("categories must be ordered by lower bound")
        if prev.upper is None or prev.upper > cur.lower:
            raise ValueError(f"categories {prev.index} and {cur.index} overlap")


class DistanceMetric(str, enum.Enum):
    HAVERSINE = "haversine"  # great-circle km on lon/lat
    EUCLIDEAN = "euclidean"  # planar meters -> km

    @classmethod
    def for_mode(cls, mode: CoordinateMode) -> "DistanceMetric":
        return cls.HAVERSINE if CoordinateMode(mode) is CoordinateMode.GEOGRAPHIC else cls.EUCLIDEAN

    def matches(self, mode: CoordinateMode) -> bool:
        return self is DistanceMetric.for_mode(mode)


class FallbackPolicy(str, enum.Enum):
    ERROR = "error"
    DIAGONAL = "diagonal"


class Provenance(enum.IntEnum):
    MEASURED = 0
    FALLBACK = 1
    CLAMPED = 2

    def __str__(self) -> str:
        return self.name.lower()


# ----------------------------------------------------------------------------
# distance arithmetic shared by the index and any exhaustive check
# ----------------------------------------------------------------------------


def haversine_km(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance in km (haversine form)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def search_points(coords: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Map (n, 2) input coordinates into the space the tree searches.

    Geographic points become unit vectors.  The trig runs through scalar
    ``math`` calls so a point's vector never depends on the array it sits in.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if metric is DistanceMetric.EUCLIDEAN:
        return np.ascontiguousarray(coords)
    lam = (coords[:, 0] * _DEG).tolist()
    phi = (coords[:, 1] * _DEG).tolist()
    cphi = np.fromiter(map(math.cos, phi), np.float64, len(phi))
    out = np.empty((len(coords), 3), dtype=np.float64)
    out[:, 0] = cphi * np.fromiter(map(math.cos, lam), np.float64, len(lam))
    out[:, 1] = cphi * np.fromiter(map(math.sin, lam), np.float64, len(lam))
    out[:, 2] = np.fromiter(map(math.sin, phi), np.float64, len(phi))
    return out


def squared_separation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean separation of row-aligned points in search space."""
    diff = a[..., 0] - b[..., 0]
    sq = diff * diff
    for axis in range(1, a.shape[-1]):
        diff = a[..., axis] - b[..., axis]
        sq = sq + diff * diff
    return sq


def separation_to_km(sq: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Convert squared search-space separations to kilometers.

    Infinite input stays infinite.
    """
    sq = np.asarray(sq, dtype=np.float64)
    root = np.sqrt(sq)
    if metric is DistanceMetric.EUCLIDEAN:
        return root / 1000.0
    finite = np.isfinite(root)
    half = np.minimum(root / 2.0, 1.0)
    out = np.full(sq.shape, np.inf)
    vals = half[finite].tolist()
    out[finite] = np.fromiter(map(math.asin, vals), np.float64, len(vals)) * (2.0 * EARTH_RADIUS_KM)
    return out


def bounding_box_diagonal_km(ps: PlaceSet, metric: DistanceMetric) -> float:
    """Diagonal of the coordinate bounding box, in km."""
    if len(ps) == 0:
        return 0.0
    lo = ps.coords.min(axis=0)
    hi = ps.coords.max(axis=0)
    if metric is DistanceMetric.EUCLIDEAN:
        return math.hypot(hi[0] - lo[0], hi[1] - lo[1]) / 1000.0
    return haversine_km(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


# ----------------------------------------------------------------------------
# per-category index
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CategoryIndex:
    category: PopulationCategory
    metric: DistanceMetric
    member_rows: np.ndarray  # row positions in the source PlaceSet
    member_ids: tuple[str, ...]
    points: np.ndarray  # search-space coordinates of members
    tree: Optional[KDTree] = field(repr=False, default=None)
    id_rank: np.ndarray = field(repr=False, default=None)
    _position: dict = field(repr=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.member_ids)

    def position_of(self, place_id: str) -> int:
        """Member position of ``place_id``, or -1 if it is not a member."""
        return self._position.get(place_id, -1)


def _make_index(category, metric, rows, ids, points) -> CategoryIndex:
    rows = np.asarray(rows, dtype=np.int64)
    rows.setflags(write=False)
    points = np.ascontiguousarray(points, dtype=np.float64)
    points.setflags(write=False)
    ids = tuple(ids)
    rank = np.empty(len(ids), dtype=np.int64)
    rank[sorted(range(len(ids)), key=ids.__getitem__)] = np.arange(len(ids))
    rank.setflags(write=False)
    tree = KDTree(points)
    return CategoryIndex(
        category=category,
        metric=metric,
        member_rows=rows,
        member_ids=ids,
        points=points,
        tree=tree,
        id_rank=rank,
        _position={pid: i for i, pid in enumerate(ids)},
    )


def build_category_indexes(
    ps: PlaceSet,
    categories: Sequence[PopulationCategory] = DEFAULT_CATEGORIES,
    metric: Optional[DistanceMetric] = None,
    space: Optional[np.ndarray] = None,
) -> list[CategoryIndex]:
    """One index per category, in category order; empty categories are allowed."""
    check_categories(categories)
    metric = DistanceMetric(metric) if metric is not None else DistanceMetric.for_mode(ps.mode)
    if space is None:
        space = search_points(ps.coords, metric)
    pops = ps.populations
    ids = ps.place_ids
    out = []
    for cat in categories:
        mask = pops >= cat.lower
        if cat.upper is not None:
            mask &= pops < cat.upper
        rows = np.flatnonzero(mask)
        out.append(_make_index(cat, metric, rows, [ids[i] for i in rows.tolist()], space[rows]))
    return out


@dataclass(frozen=True)
class Nearest:
    """Vectorized nearest-member lookup result (one entry per query)."""

    sq: np.ndarray  # squared search-space separation, inf where no member
    member: np.ndarray  # member position, -1 where no member

    @property
    def found(self) -> np.ndarray:
        return self.member >= 0


def nearest_members(
    idx: CategoryIndex,
    query_points: np.ndarray,
    self_pos: np.ndarray,
    order: Optional[np.ndarray] = None,
) -> Nearest:
    """Nearest member of ``idx`` for each query point, skipping ``self_pos``.

    ``self_pos[i]`` is the member position of query ``i`` inside ``idx``
    (or -1).  Ties on the exact separation go to the smallest place_id.
    ``order`` only changes speed (see :func:`remoteness.kdtree.coherent_order`).
    """
    q = np.asarray(query_points, dtype=np.float64)
    sq, member = idx.tree.nearest(q, self_pos, idx.id_rank, order)
    return Nearest(sq, member)


@dataclass(frozen=True)
class NearestDistance:
    distance_km: float
    provenance: Provenance
    nearest_id: Optional[str]
    raw_km: float


def nearest_distance(
    query: PlaceRecord,
    idx: CategoryIndex,
    metric: Optional[DistanceMetric] = None,
    distance_floor_km: float = 1.0,
) -> NearestDistance:
    """Distance from ``query`` to the nearest other member of ``idx``.

    Raises EmptyCategory if the category has no member besides the query.
    """
    metric = DistanceMetric(metric) if metric is not None else idx.metric
    if metric is not idx.metric:
        raise ValueError(f"index was built for {idx.metric.value}, query uses {metric.value}")
    point = search_points(np.array([[query.x, query.y]]), metric)
    res = nearest_members(idx, point, np.array([idx.position_of(query.place_id)]))
    if not res.found[0]:
        raise EmptyCategory(
            f"category {idx.category.index} has no member other than {query.place_id!r}",
            category=idx.category.index,
            place_id=query.place_id,
        )
    raw = float(separation_to_km(res.sq, metric)[0])
    if raw < distance_floor_km:
        return NearestDistance(distance_floor_km, Provenance.CLAMPED, idx.member_ids[res.member[0]], raw)
    return NearestDistance(raw, Provenance.MEASURED, idx.member_ids[res.member[0]], raw)


# ----------------------------------------------------------------------------
# all places x all categories
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DistanceVector:
    place_id: str
    d: tuple[float, ...]
    provenance: tuple[Provenance, ...]
    nearest_ids: tuple[Optional[str], ...] = ()


@dataclass(frozen=True)
class DistanceTable:
    """Array form of the distance vectors of one PlaceSet.

    ``d`` is (n, categories) km after floor/fallback; ``raw_km`` is the
    measured distance before clamping (nan for fallback entries);
    ``nearest`` holds member positions into each category's ``member_ids``.
    """

    place_ids: tuple[str, ...]
    d: np.ndarray
    raw_km: np.ndarray
    provenance: np.ndarray  # int8 Provenance codes
    nearest: np.ndarray
    member_ids: tuple[tuple[str, ...], ...]
    fallback_km: Optional[float] = None

    def __len__(self) -> int:
        return len(self.place_ids)

    def nearest_id(self, row: int, col: int) -> Optional[str]:
        pos = int(self.nearest[row, col])
        return self.member_ids[col][pos] if pos >= 0 else None

    def vectors(self) -> list[DistanceVector]:
        out = []
        codes = list(Provenance)
        for i, (pid, row, prov, near) in enumerate(
            zip(self.place_ids, self.d.tolist(), self.provenance.tolist(), self.nearest.tolist())
        ):
            ids = tuple(self.member_ids[j][p] if p >= 0 else None for j, p in enumerate(near))
            out.append(DistanceVector(pid, tuple(row), tuple(codes[c] for c in prov), ids))
        return out


def distance_table(
    ps: PlaceSet,
    indexes: Sequence[CategoryIndex],
    metric: Optional[DistanceMetric] = None,
    fallback: FallbackPolicy = FallbackPolicy.ERROR,
    distance_floor_km: float = 1.0,
    space: Optional[np.ndarray] = None,
) -> DistanceTable:
    """Nearest-other-member distances for every place and category."""
    metric = DistanceMetric(metric) if metric is not None else DistanceMetric.for_mode(ps.mode)
    fallback = FallbackPolicy(fallback)
    if distance_floor_km <= 0:
        raise ValueError("distance_floor_km must be > 0")
    if space is None:
        space = search_points(ps.coords, metric)
    n, c = len(ps), len(indexes)
    d = np.empty((n, c), dtype=np.float64)
    raw = np.empty((n, c), dtype=np.float64)
    prov = np.zeros((n, c), dtype=np.int8)
    nearest = np.empty((n, c), dtype=np.int64)
    diag = None
    order = coherent_order(ps.coords)

    for j, idx in enumerate(indexes):
        if idx.metric is not metric:
            raise ValueError(f"index for category {idx.category.index} uses {idx.metric.value}")
        self_pos = np.full(n, -1, dtype=np.int64)
        self_pos[idx.member_rows] = np.arange(len(idx))
        res = nearest_members(idx, space, self_pos, order)
        km = separation_to_km(res.sq, metric)
        missing = ~res.found
        if missing.any():
            if fallback is FallbackPolicy.ERROR:
                first = ps.records[int(np.flatnonzero(missing)[0])].place_id
                raise MissingCategory(
                    f"population category {idx.category.index} ({idx.category.label()}) has no "
                    f"usable member for {int(missing.sum())} place(s) in {ps.year}, e.g. {first!r}; "
                    f"use the diagonal fallback to substitute the bounding-box diagonal",
                    category=idx.category.index,
                    year=ps.year,
                )
            if diag is None:
                diag = bounding_box_diagonal_km(ps, metric)
        raw[:, j] = np.where(missing, np.nan, km)
        clamped = ~missing & (km < distance_floor_km)
        col = np.where(missing, diag if diag is not None else np.nan, km)
        d[:, j] = np.maximum(col, distance_floor_km)
        prov[clamped, j] = Provenance.CLAMPED
        prov[missing, j] = Provenance.FALLBACK
        nearest[:, j] = res.member

    for arr in (d, raw, prov, nearest):
        arr.setflags(write=False)
    return DistanceTable(ps.place_ids, d, raw, prov, nearest, tuple(idx.member_ids for idx in indexes), diag)


def distance_vectors(
    ps: PlaceSet,
    indexes: Sequence[CategoryIndex],
    metric: Optional[DistanceMetric] = None,
    fallback: FallbackPolicy = FallbackPolicy.ERROR,
    distance_floor_km: float = 1.0,
) -> list[DistanceVector]:
    return distance_table(ps, indexes, metric, fallback, distance_floor_km).vectors()
