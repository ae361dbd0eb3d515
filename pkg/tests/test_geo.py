import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svloc.errors import OutOfTangentRange
from svloc.geo import GeoPoint, enu_to_gps, gps_to_enu, haversine_m

REF = GeoPoint(48.0, 11.5)


def test_same_point_is_origin():
    assert gps_to_enu(REF, REF) == (0.0, 0.0)
    assert enu_to_gps(REF, 0.0, 0.0) == REF


def test_one_millidegree_north():
    east, north = gps_to_enu(REF, GeoPoint(48.001, 11.5))
    # 0.001 deg of arc on the 6378137 m sphere, evaluated by hand
    assert north == pytest.approx(111.319491, abs=1e-6)
    assert east == 0.0


def test_longitude_scaling_with_latitude():
    eq = enu_to_gps(GeoPoint(0.0, 0.0), 100.0, 0.0).lon_deg
    hi = enu_to_gps(GeoPoint(60.0, 0.0), 100.0, 0.0).lon_deg
    assert hi / eq == pytest.approx(1.0 / math.cos(math.radians(60.0)), rel=1e-9)
    assert hi / eq == pytest.approx(2.0, rel=1e-9)


def test_out_of_tangent_range():
    with pytest.raises(OutOfTangentRange):
        gps_to_enu(REF, GeoPoint(48.6, 11.5))
    with pytest.raises(OutOfTangentRange):
        gps_to_enu(REF, GeoPoint(48.0, 12.1))


def test_longitude_wraps_on_construction():
    assert GeoPoint(0.0, 190.0).lon_deg == pytest.approx(-170.0)
    assert GeoPoint(0.0, -180.0).lon_deg == 180.0
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)


def test_round_trip_across_dateline():
    ref = GeoPoint(10.0, 179.999)
    p = enu_to_gps(ref, 500.0, 20.0)
    assert p.lon_deg < 0
    e, n = gps_to_enu(ref, p)
    assert (e, n) == pytest.approx((500.0, 20.0), abs=1e-6)


def test_inverse_of_forward_on_random_offsets():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        ref = GeoPoint(rng.uniform(-70, 70), rng.uniform(-179, 179))
        east, north = rng.uniform(-700, 700, 2)
        p = enu_to_gps(ref, east, north)
        q = enu_to_gps(ref, *gps_to_enu(ref, p))
        worst = max(worst, abs(q.lat_deg - p.lat_deg), abs(q.lon_deg - p.lon_deg))
    assert worst < 1e-9


@settings(max_examples=200, deadline=None)
@given(lat=st.floats(-70, 70), e=st.floats(-700, 700), n=st.floats(-700, 700))
def test_enu_distance_matches_haversine(lat, e, n):
    ref = GeoPoint(lat, 0.0)
    d = math.hypot(e, n)
    h = haversine_m(ref, enu_to_gps(ref, e, n))
    assert abs(h - d) <= 1e-3 * d + 1e-9
