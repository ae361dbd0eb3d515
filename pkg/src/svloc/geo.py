"""Flat-earth conversion between WGS-84 lat/lon and local east/north meters."""

import math
from dataclasses import dataclass

from .errors import OutOfTangentRange

R_EARTH = 6378137.0  # WGS-84 equatorial radius, meters
TANGENT_LIMIT_DEG = 0.5


def _wrap_lon(lon):
    lon = math.fmod(lon + 180.0, 360.0)
    if lon <= 0.0:
        lon += 360.0
    return lon - 180.0


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat_deg}")
        object.__setattr__(self, "lon_deg", _wrap_lon(float(self.lon_deg)))


def gps_to_enu(ref: GeoPoint, p: GeoPoint):
    """Local (east, north) of ``p`` in meters, tangent at ``ref``."""
    dlat = p.lat_deg - ref.lat_deg
    dlon = _wrap_lon(p.lon_deg - ref.lon_deg)
    if abs(dlat) >= TANGENT_LIMIT_DEG or abs(dlon) >= TANGENT_LIMIT_DEG:
        raise OutOfTangentRange(f"offset ({dlat:.4f}, {dlon:.4f}) deg exceeds {TANGENT_LIMIT_DEG} deg")
    north = math.radians(dlat) * R_EARTH
    east = math.radians(dlon) * R_EARTH * math.cos(math.radians(ref.lat_deg))
    return east, north


def enu_to_gps(ref: GeoPoint, east, north) -> GeoPoint:
    lat = ref.lat_deg + math.degrees(north / R_EARTH)
    lon = ref.lon_deg + math.degrees(east / (R_EARTH * math.cos(math.radians(ref.lat_deg))))
    return GeoPoint(lat, lon)


def haversine_m(a: GeoPoint, b: GeoPoint):
    """Great-circle distance on the sphere of radius ``R_EARTH``."""
    p1, p2 = math.radians(a.lat_deg), math.radians(b.lat_deg)
    dp = p2 - p1
    dl = math.radians(b.lon_deg - a.lon_deg)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * R_EARTH * math.asin(math.sqrt(h))
