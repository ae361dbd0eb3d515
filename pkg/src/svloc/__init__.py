"""Localize a monocular camera trajectory against geotagged panoramas.

Phase 1 builds a landmark map from feature tracks and odometry by
bearing-only bundle adjustment; Phase 2 registers panorama views against
those landmarks and georeferences the trajectory from the panoramas' GPS
tags.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .errors import SvlocError
from .geo import GeoPoint, enu_to_gps, gps_to_enu, haversine_m
from .geometry import Intrinsics, PanoImage, Pose, bearing_of_pixel, predict_bearing
from .pipeline import evaluate, run_localize
from .simworld import WorldSpec, generate

__all__ = [
    "GeoPoint",
    "Intrinsics",
    "PanoImage",
    "PipelineConfig",
    "Pose",
    "SvlocError",
    "WorldSpec",
    "bearing_of_pixel",
    "enu_to_gps",
    "evaluate",
    "generate",
    "gps_to_enu",
    "haversine_m",
    "load_config",
    "predict_bearing",
    "run_localize",
]
