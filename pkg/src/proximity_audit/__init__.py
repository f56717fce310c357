"""Batch assessment of 15-minute-city accessibility for census block groups."""

__version__ = "0.1.0"

from .geo import GeoPoint, PolygonRing, SpatialGrid, build_index, haversine_km, point_in_polygon, query_radius
from .dataset import (CityDataset, DataError, FunctionCategory, QualityConfig, SynthSpec, essential_share,
                      load_city, synth_city)
from .catchment import (CatchmentSpec, FixedSpeedProvider, Mode, NetworkProvider, PolygonProvider,
                        RoadNetwork)
from .indicators import EmissionFactors, IndicatorSet, compute_all
from .equity import WeightedSeries, city_summary, correlation_matrix, gini, pearson

__all__ = [
    "GeoPoint", "PolygonRing", "SpatialGrid", "build_index", "haversine_km", "point_in_polygon",
    "query_radius", "CityDataset", "DataError", "FunctionCategory", "QualityConfig", "SynthSpec",
    "essential_share", "load_city", "synth_city", "CatchmentSpec", "FixedSpeedProvider", "Mode",
    "NetworkProvider", "PolygonProvider", "RoadNetwork", "EmissionFactors", "IndicatorSet",
    "compute_all", "WeightedSeries", "city_summary", "correlation_matrix", "gini", "pearson",
]
