"""Place-level remoteness index from point-located population data."""

from .analysis import CountyCodeTable, HeterogeneityReport, analyze, code_agreement, heterogeneity, spearman
from .core import (
    ASCENDING_WEIGHTS,
    EQUAL_WEIGHTS,
    RIResult,
    RunConfig,
    ScalingMode,
    WeightScheme,
    compute_multi_year,
    compute_year,
    raw_ri,
    run,
    scale_groups,
    scale_ri,
)
from .errors import RemotenessError
from .ingest import CoordinateMode, PlaceRecord, PlaceSet, parse_places, validate_coordinates, write_places
from .spatial import (
    DEFAULT_CATEGORIES,
    DistanceMetric,
    DistanceVector,
    FallbackPolicy,
    PopulationCategory,
    build_category_indexes,
    distance_vectors,
    nearest_distance,
)

__version__ = "0.1.0"
