import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import haversine_mp
from urbanmob.geodesy import (
    EARTH_RADIUS_MILES,
    BoundingBox,
    CenterRadius,
    GeoPoint,
    InvalidRegion,
    generate_mesh,
    haversine_miles,
    haversine_miles_array,
    miles_to_lat_degrees,
    region_from_config,
    region_to_config,
)

# Independent 40-digit evaluation, frozen.
PINNED_BCN = 1.3818683797106199

points = st.builds(GeoPoint, st.floats(-90, 90), st.floats(-179.999, 180))


def test_identity_is_zero():
    p = GeoPoint(41.38, 2.17)
    assert haversine_miles(p, p) == 0.0


def test_half_circumference():
    d = haversine_miles(GeoPoint(0, 0), GeoPoint(0, 180))
    assert d == pytest.approx(math.pi * EARTH_RADIUS_MILES, rel=1e-15)


def test_pinned_regression():
    d = haversine_miles(GeoPoint(41.38, 2.17), GeoPoint(41.40, 2.17))
    assert d == pytest.approx(PINNED_BCN, rel=1e-12)
    assert haversine_mp(41.38, 2.17, 41.40, 2.17) == pytest.approx(PINNED_BCN, rel=1e-15)


@given(points, points)
def test_matches_high_precision(a, b):
    ref = haversine_mp(a.lat, a.lon, b.lat, b.lon)
    assert haversine_miles(a, b) == pytest.approx(ref, rel=1e-9, abs=1e-7)


@given(points, points)
def test_symmetric_and_non_negative(a, b):
    d = haversine_miles(a, b)
    assert d >= 0 and d == haversine_miles(b, a)
    if abs(a.lat - b.lat) > 1e-9:
        assert d > 0


@given(points, points, points)
def test_triangle_inequality(a, b, c):
    assert haversine_miles(a, c) <= haversine_miles(a, b) + haversine_miles(b, c) + 1e-9


def test_array_matches_scalar():
    rng = np.random.default_rng(0)
    lat = rng.uniform(-80, 80, (2, 200))
    lon = rng.uniform(-179, 179, (2, 200))
    arr = haversine_miles_array(lat[0], lon[0], lat[1], lon[1])
    for i in range(200):
        s = haversine_miles(GeoPoint(lat[0, i], lon[0, i]), GeoPoint(lat[1, i], lon[1, i]))
        assert arr[i] == pytest.approx(s, rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-91, 0), (0, 181), (0, -180), (float("nan"), 0)])
def test_point_bounds(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_region_validation():
    with pytest.raises(InvalidRegion):
        BoundingBox(GeoPoint(2, 0), GeoPoint(1, 1))
    with pytest.raises(InvalidRegion):
        BoundingBox(GeoPoint(0, 170), GeoPoint(1, -170))
    with pytest.raises(InvalidRegion):
        CenterRadius(GeoPoint(89.99, 0), 5)
    with pytest.raises(InvalidRegion):
        CenterRadius(GeoPoint(0, 179.99), 5)
    with pytest.raises(InvalidRegion):
        region_from_config({"center": [0, 0]})


def test_region_config_round_trip():
    for cfg in ({"sw": [41.3, 2.0], "ne": [41.5, 2.3]},
                {"center": [51.5, -0.12], "radius_miles": 15.0}):
        assert region_to_config(region_from_config(cfg)) == cfg


def test_degenerate_region_gives_one_point():
    p = GeoPoint(41.38, 2.17)
    mesh = generate_mesh(BoundingBox(p, p), 1.0)
    assert mesh.points == [p]


def test_two_mile_box_at_equator():
    d = miles_to_lat_degrees(2.0)
    mesh = generate_mesh(BoundingBox(GeoPoint(0, 0), GeoPoint(d, d)), 1.0)
    assert len(mesh) == 9


def _row_spacing_ok(mesh, spacing):
    rows = {}
    for p in mesh:
        rows.setdefault(p.lat, []).append(p)
    for row in rows.values():
        for a, b in zip(row, row[1:]):
            assert abs(haversine_miles(a, b) - spacing) <= 0.01 * spacing


@pytest.mark.parametrize("region", [
    BoundingBox(GeoPoint(41.32, 2.05), GeoPoint(41.47, 2.23)),
    BoundingBox(GeoPoint(-33.95, 151.1), GeoPoint(-33.8, 151.3)),
    CenterRadius(GeoPoint(51.5074, -0.1278), 12.0),
])
def test_mesh_shape(region):
    mesh = generate_mesh(region, 1.0)
    assert mesh.points
    assert all(region.contains(p) for p in mesh)
    _row_spacing_ok(mesh, 1.0)
    keys = [(p.lat, p.lon) for p in mesh]
    assert keys == sorted(keys)
    assert generate_mesh(region, 1.0).points == mesh.points


def _max_gap(region, mesh, n, seed):
    rng = np.random.default_rng(seed)
    sw, ne = region.bounds()
    lat = np.array([p.lat for p in mesh])
    lon = np.array([p.lon for p in mesh])
    worst = 0.0
    got = 0
    while got < n:
        qlat = rng.uniform(sw.lat, ne.lat)
        qlon = rng.uniform(sw.lon, ne.lon)
        if not region.contains(GeoPoint(qlat, qlon)):
            continue
        got += 1
        worst = max(worst, float(haversine_miles_array(qlat, qlon, lat, lon).min()))
    return worst


@pytest.mark.parametrize("region", [
    BoundingBox(GeoPoint(41.32, 2.05), GeoPoint(41.47, 2.23)),
    BoundingBox(GeoPoint(51.28, -0.51), GeoPoint(51.69, 0.33)),
])
def test_mesh_coverage(region):
    mesh = generate_mesh(region, 1.0)
    assert _max_gap(region, mesh, 10_000, 1) <= 0.7072


@given(st.floats(0.05, 0.5), st.floats(0.05, 0.5), st.floats(-60, 60), st.floats(-170, 170))
def test_mesh_points_inside_box(h, w, lat, lon):
    box = BoundingBox(GeoPoint(lat, lon), GeoPoint(lat + h, lon + w))
    mesh = generate_mesh(box, 1.0)
    assert len(mesh) >= 1 and all(box.contains(p) for p in mesh)
