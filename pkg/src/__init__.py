"""
foodaccess - Gaussian-mixture clustering of food assistance accessibility

This package contains the analysis modules.
"""

from .config import *
from .errors import ConfigError, DataError, FoodAccessError, NumericalError
from .geo import GeoPoint, haversine_miles, haversine_miles_array, destination_point
from .grid import SpatialGrid, build_grid, nearest_agency, nearest_agencies
from .mixture import FitConfig, FitResult, MixtureModel, Parameterization, e_step, fit, m_step, predict
from .selection import SelectionTable, adjusted_rand_index, bic, grid_search, silhouette_sampled
from .ingest import FeatureMatrix, LoadedTables, featurize, load_tables
from .profile import ClusterProfile, build_profile, coverage_within, desert_report, distance_quantiles
from .synth import SynthConfig, generate, roundtrip_check
from .renderer import Renderer
from .terminal import Terminal
