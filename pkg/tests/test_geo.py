import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobseg import geo


def test_haversine_known_value():
    # one degree of latitude is ~111.2 km on the sphere
    d = geo.haversine_m(0.0, 0.0, 1.0, 0.0)
    assert abs(d - np.pi * geo.EARTH_RADIUS_M / 180.0) < 1e-6


def test_haversine_symmetry_and_zero():
    assert geo.haversine_m(10, 20, 10, 20) == 0.0
    assert geo.haversine_m(10, 20, 11, 21) == pytest.approx(geo.haversine_m(11, 21, 10, 20))


def test_chord_bounds_haversine():
    # chord radius captures exactly the haversine ball
    for d in (1.0, 50.0, 5000.0):
        assert geo.chord_m(d) <= d
        assert geo.chord_m(d) > d * 0.999


@given(st.floats(-80, 80), st.floats(-170, 170), st.floats(-0.01, 0.01), st.floats(-0.01, 0.01))
@settings(max_examples=50, deadline=None)
def test_ecef_chord_monotone_with_haversine(lat, lon, dlat, dlon):
    a = geo.ecef(lat, lon)
    b = geo.ecef(lat + dlat, lon + dlon)
    chord = float(np.linalg.norm(a - b))
    hav = float(geo.haversine_m(lat, lon, lat + dlat, lon + dlon))
    assert chord <= hav + 1e-6
    assert chord >= geo.chord_m(hav) - 1e-6


def _unit_square():
    return geo.Ring([0.0, 1.0, 1.0, 0.0], [0.0, 0.0, 1.0, 1.0])


def test_point_in_polygon_basics():
    ring = _unit_square()
    assert ring.contains(0.5, 0.5)
    assert not ring.contains(1.5, 0.5)
    assert ring.contains(0.0, 0.5)   # on edge counts as inside
    assert ring.contains(0.0, 0.0)   # vertex
    assert ring.contains(1.0, 1.0)


def test_point_in_polygon_vs_matplotlib_oracle():
    from matplotlib.path import Path

    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.5, 1.5, size=(500, 2))
    ring = _unit_square()
    mine = ring.contains_many(pts[:, 1], pts[:, 0])
    oracle = Path([(0, 0), (1, 0), (1, 1), (0, 1)]).contains_points(pts, radius=1e-9)
    # random points never hit edges, so strict and edge-inclusive agree
    assert np.array_equal(mine, oracle)


def test_ring_validation_rejects_self_intersection():
    bow_tie = geo.Ring([0.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        bow_tie.validate()
    _unit_square().validate()


def test_ring_rejects_degenerate():
    with pytest.raises(ValueError):
        geo.Ring([0.0, 1.0], [0.0, 1.0])


def test_area_and_centroid():
    ring = _unit_square()
    m_lat, m_lon = geo.meters_per_degree(0.5)
    assert ring.area_m2() == pytest.approx(m_lat * m_lon, rel=1e-3)
    c = ring.centroid()
    assert c == pytest.approx((0.5, 0.5), abs=1e-9)


def test_point_to_chain_distance():
    # horizontal segment along the equator, 1 degree long
    lats = np.array([0.0, 0.0])
    lons = np.array([0.0, 1.0])
    m_lat, _ = geo.meters_per_degree(0.0)
    d = geo.point_to_chain_dist_m(np.array([0.001]), np.array([0.5]), lats, lons)
    assert d[0] == pytest.approx(0.001 * m_lat, rel=1e-6)
    # beyond an endpoint the distance is to the endpoint
    d2 = geo.point_to_chain_dist_m(np.array([0.0]), np.array([1.5]), lats, lons)
    assert d2[0] == pytest.approx(0.5 * m_lat, rel=1e-3)


def test_medoid_index():
    lats = np.array([0.0, 0.0, 0.0, 10.0])
    lons = np.array([0.0, 0.001, 0.002, 10.0])
    assert geo.medoid_index(lats, lons) == 1


def test_grid_index_candidates():
    boxes = [(0.0, 1.0, 0.0, 1.0), (2.0, 3.0, 2.0, 3.0)]
    gi = geo.GridIndex(boxes)
    assert gi.candidates(0.5, 0.5) == [0]
    assert gi.candidates(2.5, 2.5) == [1]
    assert gi.candidates(5.0, 5.0) == []
