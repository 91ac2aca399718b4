import math

import numpy as np
import pytest

from src.config import EARTH_RADIUS_MILES
from src.geo import (
    GeoPoint,
    destination_point,
    haversine_miles,
    haversine_miles_array,
    miles_per_degree_latitude,
    valid_coordinates,
)


def _law_of_cosines(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    cos_c = np.sin(lat1) * np.sin(lat2) + np.cos(lat1) * np.cos(lat2) * np.cos(lon2 - lon1)
    return EARTH_RADIUS_MILES * np.arccos(np.clip(cos_c, -1.0, 1.0))


def _random_points(rng, n):
    lat = np.degrees(np.arcsin(rng.uniform(-1.0, 1.0, n)))
    lon = rng.uniform(-180.0, 180.0, n)
    return lat, lon


def test_identical_points_are_zero():
    p = GeoPoint(41.5, -81.7)
    assert haversine_miles(p, p) == 0.0


def test_antipodal_is_half_circumference():
    d = haversine_miles(GeoPoint(0.0, 0.0), GeoPoint(0.0, 180.0))
    assert d == pytest.approx(math.pi * EARTH_RADIUS_MILES, rel=1e-9)
    assert d == pytest.approx(12436.78, abs=0.01)


def test_one_degree_of_meridian():
    d = haversine_miles(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
    assert d == pytest.approx(EARTH_RADIUS_MILES * math.pi / 180.0, rel=1e-9)
    assert d == pytest.approx(miles_per_degree_latitude(), rel=1e-12)
    assert d == pytest.approx(69.093, abs=1e-3)


@pytest.mark.parametrize(
    "lat, lon",
    [(91.0, 0.0), (-90.5, 0.0), (0.0, 180.5), (0.0, -181.0), (math.nan, 0.0), (0.0, math.inf)],
)
def test_invalid_point_rejected(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_valid_coordinates_mask():
    mask = valid_coordinates([0.0, 95.0, np.nan, 45.0], [0.0, 0.0, 0.0, -200.0])
    assert mask.tolist() == [True, False, False, False]


def test_matches_law_of_cosines_oracle():
    rng = np.random.Generator(np.random.PCG64(11))
    lat1, lon1 = _random_points(rng, 200000)
    lat2, lon2 = _random_points(rng, 200000)
    ours = haversine_miles_array(lat1, lon1, lat2, lon2)
    oracle = _law_of_cosines(lat1, lon1, lat2, lon2)
    # 近对跖点与极近点对余弦定律本身病态，排除
    keep = (ours < 0.99 * math.pi * EARTH_RADIUS_MILES) & (ours > 1.0)
    np.testing.assert_allclose(ours[keep], oracle[keep], rtol=1e-6)


def test_scalar_and_array_agree():
    rng = np.random.Generator(np.random.PCG64(3))
    lat1, lon1 = _random_points(rng, 50)
    lat2, lon2 = _random_points(rng, 50)
    vector = haversine_miles_array(lat1, lon1, lat2, lon2)
    for i in range(50):
        scalar = haversine_miles(GeoPoint(lat1[i], lon1[i]), GeoPoint(lat2[i], lon2[i]))
        assert scalar == pytest.approx(vector[i], rel=1e-12, abs=1e-12)


def test_symmetry_and_triangle_inequality():
    rng = np.random.Generator(np.random.PCG64(5))
    a_lat, a_lon = _random_points(rng, 5000)
    b_lat, b_lon = _random_points(rng, 5000)
    c_lat, c_lon = _random_points(rng, 5000)
    ab = haversine_miles_array(a_lat, a_lon, b_lat, b_lon)
    ba = haversine_miles_array(b_lat, b_lon, a_lat, a_lon)
    np.testing.assert_allclose(ab, ba, rtol=1e-12, atol=0.0)
    ac = haversine_miles_array(a_lat, a_lon, c_lat, c_lon)
    bc = haversine_miles_array(b_lat, b_lon, c_lat, c_lon)
    assert np.all(ac <= ab + bc + 1e-9)
    assert np.all(ab >= 0.0) and np.all(ab <= math.pi * EARTH_RADIUS_MILES)


def test_destination_point_round_trip():
    rng = np.random.Generator(np.random.PCG64(8))
    lat = rng.uniform(-60.0, 60.0, 1000)
    lon = rng.uniform(-180.0, 180.0, 1000)
    bearing = rng.uniform(0.0, 2 * math.pi, 1000)
    distance = rng.uniform(0.01, 50.0, 1000)
    lat2, lon2 = destination_point(lat, lon, bearing, distance)
    assert np.all((lon2 >= -180.0) & (lon2 < 180.0))
    np.testing.assert_allclose(haversine_miles_array(lat, lon, lat2, lon2), distance, atol=1e-7)


def test_destination_point_due_north():
    lat2, lon2 = destination_point(0.0, 10.0, 0.0, miles_per_degree_latitude())
    assert float(lat2) == pytest.approx(1.0, abs=1e-12)
    assert float(lon2) == pytest.approx(10.0, abs=1e-12)
