"""Raw and scaled remoteness index.

The raw index of a place is a weighted average of the inverse log of its
population and the logs of its distances to the nearest place in each
population category::

    raw = (w_pop / log_b(s) + sum_k w_k * log_b(d_k)) / (w_pop + sum_k w_k)

With the default weights (15 on population, five category weights summing
to 15) the normaliser is 1/30.  Raw values are min-max scaled to [0, 1],
either within each year or jointly over all years of a run.

Populations are floored (default 10) and distances floored (default 1 km)
before taking logs; every floor or fallback is recorded as a flag.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, RemotenessError
from .ingest import PlaceSet
from .spatial import (
    DEFAULT_CATEGORIES,
    DistanceMetric,
    DistanceTable,
    DistanceVector,
    FallbackPolicy,
    PopulationCategory,
    Provenance,
    build_category_indexes,
    check_categories,
    distance_table,
    search_points,
)

POPULATION_CLAMPED = "population_clamped"
DISTANCE_CLAMPED = "distance_clamped"
DISTANCE_FALLBACK = "distance_fallback"


class DegenerateGroupWarning(UserWarning):
    """All raw values in a scaling group are equal."""


@dataclass(frozen=True)
class WeightScheme:
    name: str
    w_pop: float
    w_pc: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "w_pc", tuple(self.w_pc))
        values = (self.w_pop, *self.w_pc)
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ConfigError(f"weights must be finite and non-negative, got {values}")
        if sum(values) <= 0:
            raise ConfigError("w_pop + sum(w_pc) must be > 0")

    @property
    def total(self) -> float:
        return self.w_pop + sum(self.w_pc)

    def normalized(self) -> tuple[float, tuple[float, ...]]:
        """Weights divided by their total.

        Computed in exact rational arithmetic, then rounded once, so scaling
        every weight by the same factor gives bit-identical coefficients.
        """
        exact = [Fraction(self.w_pop), *(Fraction(w) for w in self.w_pc)]
        total = sum(exact)
        coeffs = [float(w / total) for w in exact]
        return coeffs[0], tuple(coeffs[1:])

    def scaled(self, k: float) -> "WeightScheme":
        return WeightScheme(self.name, self.w_pop * k, tuple(w * k for w in self.w_pc))

    def to_dict(self) -> dict:
        return {"name": self.name, "w_pop": self.w_pop, "w_pc": list(self.w_pc)}


EQUAL_WEIGHTS = WeightScheme("equal", 15, (3, 3, 3, 3, 3))
ASCENDING_WEIGHTS = WeightScheme("ascending", 15, (1, 2, 3, 4, 5))
PRESETS = {"equal": EQUAL_WEIGHTS, "ascending": ASCENDING_WEIGHTS}


class ScalingMode(str, enum.Enum):
    PER_YEAR = "per_year"
    GLOBAL = "global"

    @classmethod
    def parse(cls, value) -> "ScalingMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).replace("-", "_"))
        except ValueError:
            raise ConfigError(f"unknown scaling mode {value!r} (per_year or global)") from None


@dataclass(frozen=True)
class RunConfig:
    categories: tuple[PopulationCategory, ...] = DEFAULT_CATEGORIES
    weights: WeightScheme = EQUAL_WEIGHTS
    metric: Optional[DistanceMetric] = None  # None: follow the coordinate mode
    fallback: FallbackPolicy = FallbackPolicy.ERROR
    scaling: ScalingMode = ScalingMode.PER_YEAR
    population_floor: int = 10
    distance_floor_km: float = 1.0
    log_base: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        try:
            check_categories(self.categories)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if len(self.weights.w_pc) != len(self.categories):
            raise ConfigError(
                f"{len(self.weights.w_pc)} category weights for {len(self.categories)} categories"
            )
        if self.population_floor < 2:
            raise ConfigError("population_floor must be >= 2")
        if not (self.distance_floor_km > 0 and math.isfinite(self.distance_floor_km)):
            raise ConfigError("distance_floor_km must be a finite number > 0")
        if not (self.log_base > 1 and math.isfinite(self.log_base)):
            raise ConfigError("log_base must be a finite number > 1")

    def resolved_metric(self, mode) -> DistanceMetric:
        expected = DistanceMetric.for_mode(mode)
        if self.metric is not None and self.metric is not expected:
            raise ConfigError(f"metric {self.metric.value} does not match {mode.value} coordinates")
        return expected

    def to_dict(self, mode=None) -> dict:
        metric = self.resolved_metric(mode) if mode is not None else self.metric
        return {
            "categories": [{"lower": c.lower, "upper": c.upper} for c in self.categories],
            "weights": self.weights.to_dict(),
            "metric": metric.value if metric is not None else None,
            "fallback": self.fallback.value,
            "scaling": self.scaling.value,
            "population_floor": self.population_floor,
            "distance_floor_km": self.distance_floor_km,
            "log_base": self.log_base,
        }


def _log(values: np.ndarray, base: float) -> np.ndarray:
    if base == 10:
        return np.log10(values)
    if base == 2:
        return np.log2(values)
    if base == math.e:
        return np.log(values)
    return np.log(values) / math.log(base)


def raw_ri_array(
    populations: np.ndarray,
    distances: np.ndarray,
    weights: WeightScheme,
    cfg: RunConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized raw index.

    Returns ``(raw, population_clamped, distance_clamped)`` where the masks
    mark rows whose population or any distance was below its floor.
    """
    pops = np.asarray(populations, dtype=np.float64)
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != len(weights.w_pc):
        raise ValueError(f"distances must have shape (n, {len(weights.w_pc)})")
    if (pops < 0).any():
        raise ValueError("population must be >= 0")
    pop_clamped = pops < cfg.population_floor
    s = np.where(pop_clamped, float(cfg.population_floor), pops)
    dist_clamped = (d < cfg.distance_floor_km).any(axis=1)
    d = np.maximum(d, cfg.distance_floor_km)

    a_pop, a_pc = weights.normalized()
    acc = a_pop * (1.0 / _log(s, cfg.log_base))
    logd = _log(d, cfg.log_base)
    for k, a in enumerate(a_pc):
        acc = acc + a * logd[:, k]
    return acc, pop_clamped, dist_clamped


def raw_ri(
    s: int,
    d: Sequence[float] | DistanceVector,
    w: Optional[WeightScheme] = None,
    cfg: Optional[RunConfig] = None,
) -> tuple[float, frozenset[str]]:
    """Raw index of a single place plus the floors that applied to it."""
    cfg = cfg or RunConfig()
    w = w or cfg.weights
    dist = d.d if isinstance(d, DistanceVector) else tuple(d)
    raw, pc, dc = raw_ri_array(np.array([s]), np.array([dist], dtype=np.float64), w, cfg)
    flags = set()
    if pc[0]:
        flags.add(POPULATION_CLAMPED)
    if dc[0]:
        flags.add(DISTANCE_CLAMPED)
    if isinstance(d, DistanceVector):
        if Provenance.CLAMPED in d.provenance:
            flags.add(DISTANCE_CLAMPED)
        if Provenance.FALLBACK in d.provenance:
            flags.add(DISTANCE_FALLBACK)
    return float(raw[0]), frozenset(flags)


def _scale_group(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5), True
    return (raw - lo) / (hi - lo), False


def scale_ri(raw: Sequence[float]) -> list[float]:
    """Min-max scale one group to [0, 1].

    A group whose values are all equal maps to 0.5 and triggers
    :class:`DegenerateGroupWarning`.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot scale an empty group")
    scaled, degenerate = _scale_group(arr)
    if degenerate:
        warnings.warn(
            f"degenerate scaling group of {arr.size} place(s): all raw values equal, using 0.5",
            DegenerateGroupWarning,
            stacklevel=2,
        )
    return scaled.tolist()


def scale_groups(groups: Sequence[np.ndarray], mode: ScalingMode) -> tuple[list[np.ndarray], list[int]]:
    """Scale per-year raw arrays per ``mode``.

    Returns the scaled arrays and the indices of degenerate groups (for
    global mode, every index when the pooled group is degenerate).
    """
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if ScalingMode.parse(mode) is ScalingMode.GLOBAL:
        sizes = [g.size for g in groups]
        if sum(sizes) == 0:
            return groups, []
        scaled, deg = _scale_group(np.concatenate(groups))
        bounds = np.cumsum([0] + sizes)
        return [scaled[bounds[i] : bounds[i + 1]] for i in range(len(groups))], list(range(len(groups))) if deg else []
    out, degenerate = [], []
    for i, g in enumerate(groups):
        if g.size == 0:
            out.append(g)
            continue
        scaled, deg = _scale_group(g)
        if deg:
            degenerate.append(i)
        out.append(scaled)
    return out, degenerate


@dataclass(frozen=True)
class RIResult:
    place_id: str
    year: int
    raw: float
    scaled: float
    clamp_flags: frozenset[str] = frozenset()
    population: Optional[int] = None
    distances: tuple[float, ...] = ()

    @property
    def flags_text(self) -> str:
        return "|".join(sorted(self.clamp_flags))


@dataclass
class YearRaw:
    """Everything computed for one year before scaling."""

    places: PlaceSet
    table: DistanceTable
    raw: np.ndarray
    pop_clamped: np.ndarray
    dist_clamped: np.ndarray
    dist_fallback: np.ndarray


@dataclass
class Computation:
    """Output of :func:`run`: results in year order plus diagnostics."""

    config: RunConfig
    years: list[YearRaw]
    results: list[RIResult]
    degenerate_groups: list[str] = field(default_factory=list)

    def warning_counts(self) -> dict[str, int]:
        counts = {POPULATION_CLAMPED: 0, DISTANCE_CLAMPED: 0, DISTANCE_FALLBACK: 0}
        entry_counts = {"distance_entries_clamped": 0, "distance_entries_fallback": 0}
        for yr in self.years:
            counts[POPULATION_CLAMPED] += int(yr.pop_clamped.sum())
            counts[DISTANCE_CLAMPED] += int(yr.dist_clamped.sum())
            counts[DISTANCE_FALLBACK] += int(yr.dist_fallback.sum())
            entry_counts["distance_entries_clamped"] += int((yr.table.provenance == Provenance.CLAMPED).sum())
            entry_counts["distance_entries_fallback"] += int((yr.table.provenance == Provenance.FALLBACK).sum())
        counts.update(entry_counts)
        counts["degenerate_groups"] = len(self.degenerate_groups)
        return counts


def raw_year(ps: PlaceSet, cfg: RunConfig) -> YearRaw:
    """Indexes, distances and raw index for one PlaceSet."""
    metric = cfg.resolved_metric(ps.mode)
    space = search_points(ps.coords, metric)
    indexes = build_category_indexes(ps, cfg.categories, metric, space=space)
    table = distance_table(ps, indexes, metric, cfg.fallback, cfg.distance_floor_km, space=space)
    raw, pc, dc = raw_ri_array(ps.populations, table.d, cfg.weights, cfg)
    dc = dc | (table.provenance == Provenance.CLAMPED).any(axis=1)
    fb = (table.provenance == Provenance.FALLBACK).any(axis=1)
    raw.setflags(write=False)
    return YearRaw(ps, table, raw, pc, dc, fb)


def run(sets: Iterable[PlaceSet], cfg: Optional[RunConfig] = None) -> Computation:
    """Full pipeline over one or more years."""
    cfg = cfg or RunConfig()
    sets = list(sets)
    years = [ps.year for ps in sets]
    if len(set(years)) != len(years):
        raise ConfigError(f"duplicate years in run: {years}")

    per_year = []
    for ps in sets:
        try:
            per_year.append(raw_year(ps, cfg))
        except RemotenessError as exc:
            if exc.context.get("year") is None:
                exc.context["year"] = ps.year
                exc.message = f"year {ps.year}: {exc.message}"
                exc.args = (exc.message,)
            raise

    scaled_by_year, degenerate = scale_groups([yr.raw for yr in per_year], cfg.scaling)
    if cfg.scaling is ScalingMode.GLOBAL:
        labels = ["global"] if degenerate else []
    else:
        labels = [str(per_year[i].places.year) for i in degenerate]

    results = []
    for yr, scaled in zip(per_year, scaled_by_year):
        d_rows = yr.table.d.tolist()
        for i, rec in enumerate(yr.places.records):
            flags = []
            if yr.pop_clamped[i]:
                flags.append(POPULATION_CLAMPED)
            if yr.dist_clamped[i]:
                flags.append(DISTANCE_CLAMPED)
            if yr.dist_fallback[i]:
                flags.append(DISTANCE_FALLBACK)
            results.append(
                RIResult(
                    place_id=rec.place_id,
                    year=rec.year,
                    raw=float(yr.raw[i]),
                    scaled=float(scaled[i]),
                    clamp_flags=frozenset(flags),
                    population=rec.population,
                    distances=tuple(d_rows[i]),
                )
            )
    for label in labels:
        warnings.warn(
            f"degenerate scaling group {label}: all raw values equal, using 0.5",
            DegenerateGroupWarning,
            stacklevel=2,
        )
    return Computation(cfg, per_year, results, labels)


def compute_year(ps: PlaceSet, cfg: Optional[RunConfig] = None) -> list[RIResult]:
    """Remoteness index for every place of one year, in PlaceSet order."""
    return run([ps], cfg).results


def compute_multi_year(sets: Sequence[PlaceSet], cfg: Optional[RunConfig] = None) -> list[RIResult]:
    """Remoteness index over several years; scaling follows ``cfg.scaling``."""
    return run(sets, cfg).results


# ----------------------------------------------------------------------------
# config files
# ----------------------------------------------------------------------------

_CONFIG_KEYS = {
    "categories",
    "weights",
    "metric",
    "fallback",
    "scaling",
    "population_floor",
    "distance_floor_km",
    "log_base",
}


def weights_from_obj(obj, default_name: str = "custom") -> WeightScheme:
    if isinstance(obj, WeightScheme):
        return obj
    if isinstance(obj, str):
        try:
            return PRESETS[obj]
        except KeyError:
            raise ConfigError(f"unknown weight preset {obj!r} (equal, ascending)") from None
    if not isinstance(obj, dict):
        raise ConfigError("weights must be a preset name or an object")
    unknown = set(obj) - {"name", "w_pop", "w_pc"}
    if unknown:
        raise ConfigError(f"unknown weight keys: {sorted(unknown)}")
    try:
        return WeightScheme(
            str(obj.get("name", default_name)),
            _number(obj.get("w_pop", 15), "w_pop"),
            tuple(_number(w, "w_pc") for w in obj["w_pc"]),
        )
    except KeyError:
        raise ConfigError("weights object needs w_pc") from None
    except TypeError:
        raise ConfigError("w_pc must be a list of numbers") from None


def _number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{what} must be a number, got {value!r}")
    return value


def _categories_from_obj(obj) -> tuple[PopulationCategory, ...]:
    if not isinstance(obj, list) or not obj:
        raise ConfigError("categories must be a non-empty list")
    out = []
    for i, item in enumerate(obj, start=1):
        if isinstance(item, dict):
            unknown = set(item) - {"lower", "upper"}
            if unknown:
                raise ConfigError(f"unknown category keys: {sorted(unknown)}")
            lower, upper = item.get("lower"), item.get("upper")
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            lower, upper = item
        else:
            raise ConfigError(f"category {i}: expected {{lower, upper}} or [lower, upper]")
        if not isinstance(lower, int) or (upper is not None and not isinstance(upper, int)):
            raise ConfigError(f"category {i}: bounds must be integers")
        try:
            out.append(PopulationCategory(i, lower, upper))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return tuple(out)


def config_from_dict(data: dict, base: Optional[RunConfig] = None) -> RunConfig:
    """Build a RunConfig from a JSON-style dict; unknown keys are an error."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = base or RunConfig()
    changes = {}
    if "categories" in data:
        changes["categories"] = _categories_from_obj(data["categories"])
    if "weights" in data:
        changes["weights"] = weights_from_obj(data["weights"])
    if "metric" in data:
        try:
            changes["metric"] = DistanceMetric(data["metric"]) if data["metric"] is not None else None
        except ValueError:
            raise ConfigError(f"unknown metric {data['metric']!r}") from None
    if "fallback" in data:
        try:
            changes["fallback"] = FallbackPolicy(data["fallback"])
        except ValueError:
            raise ConfigError(f"unknown fallback policy {data['fallback']!r}") from None
    if "scaling" in data:
        changes["scaling"] = ScalingMode.parse(data["scaling"])
    if "population_floor" in data:
        pf = data["population_floor"]
        if isinstance(pf, bool) or not isinstance(pf, int):
            raise ConfigError("population_floor must be an integer")
        changes["population_floor"] = pf
    for key in ("distance_floor_km", "log_base"):
        if key in data:
            changes[key] = float(_number(data[key], key))
    return replace(base, **changes)
