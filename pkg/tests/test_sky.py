import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oracles import gaussian_map_direct
from skyshade.nmea import ConstellationSnapshot, SatelliteObservation
from skyshade.sky import (
    OutOfRange, SkyGrid, angular_distance, build_sky_map, cell_index, cell_indices,
    gaussian_sky_map, read_sky_map, satellite_kernel, sky_to_vector, vector_to_sky, write_sky_map,
)

GRID = SkyGrid()


def test_default_grid_shape():
    assert (GRID.n_az, GRID.n_el) == (48, 10)
    assert GRID.shape == (48, 10)


@pytest.mark.parametrize("e,l", [(7.0, 9.0), (7.5, 8.0), (0.0, 9.0), (-7.5, 9.0)])
def test_grid_must_divide(e, l):
    with pytest.raises(ValueError):
        SkyGrid(e, l)


def test_grid_parse_and_refine():
    assert SkyGrid.parse("3.75x4.5") == GRID.refined(2)
    assert str(GRID) == "7.5x9"


@pytest.mark.parametrize("az,el,expected", [
    (0.0, 0.0, (0, 0)),
    (359.9, 89.9, (math.floor(359.9 / 7.5) % 48, min(math.floor(89.9 / 9), 9))),
    (90.0, 90.0, (12, 9)),
    (7.5, 9.0, (1, 1)),
])
def test_cell_index(az, el, expected):
    assert cell_index(az, el, GRID) == expected


def test_cell_index_negative_elevation():
    with pytest.raises(OutOfRange):
        cell_index(10.0, -0.1, GRID)


def test_cell_indices_vectorized_matches_scalar(rng):
    az = rng.uniform(0, 360, 500)
    el = rng.uniform(0, 90, 500)
    i, j = cell_indices(az, el, GRID)
    assert all((a, b) == cell_index(x, y, GRID) for a, b, x, y in zip(i, j, az, el))


@pytest.mark.parametrize("a1,e1,a2,e2,expected", [
    (10.0, 20.0, 10.0, 20.0, 0.0),
    (0.0, 0.0, 180.0, 0.0, 180.0),
    (0.0, 80.0, 180.0, 80.0, 20.0),
])
def test_angular_distance_examples(a1, e1, a2, e2, expected):
    assert angular_distance(a1, e1, a2, e2) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0, 360), st.floats(-90, 90), st.floats(0, 360), st.floats(-90, 90))
def test_angular_distance_matches_dot_product(a1, e1, a2, e2):
    v1, v2 = sky_to_vector(a1, e1), sky_to_vector(a2, e2)
    # cross/dot form differs from the implementation's Vincenty expression
    expected = math.degrees(math.atan2(np.linalg.norm(np.cross(v1, v2)), float(v1 @ v2)))
    assert angular_distance(a1, e1, a2, e2) == pytest.approx(expected, abs=1e-9)


def test_vector_round_trip(rng):
    az = rng.uniform(0, 360, 100)
    el = rng.uniform(-89, 89, 100)
    az2, el2 = vector_to_sky(sky_to_vector(az, el))
    np.testing.assert_allclose(az2, az, atol=1e-9)
    np.testing.assert_allclose(el2, el, atol=1e-9)


def test_empty_snapshot_zero_map():
    sky = build_sky_map(ConstellationSnapshot(0.0, ()))
    assert sky.source_count == 0
    assert not sky.cells.any()


@pytest.mark.parametrize("sigma", [0.5, 5.0, 12.5, 40.0, 200.0])
def test_zenith_satellite_sums_to_one(sigma):
    sky = gaussian_sky_map([0.0], [90.0], GRID, sigma)
    assert abs(sky.total - 1.0) <= 1e-9


def test_fourteen_satellites_sum():
    obs = tuple(SatelliteObservation("GPS", k + 1, 20.0 + 4 * k, 25.0 * k, 45.0) for k in range(14))
    sky = build_sky_map(ConstellationSnapshot(0.0, obs))
    assert sky.source_count == 14
    assert abs(sky.total - 14.0) <= 1e-9


def test_only_viable_satellites_contribute():
    obs = (SatelliteObservation("GPS", 1, 40.0, 0.0, 45.0),
           SatelliteObservation("GPS", 2, 10.0, 0.0, 45.0),
           SatelliteObservation("GPS", 3, 40.0, 90.0, 20.0),
           SatelliteObservation("GPS", 4, 40.0, 90.0, None))
    sky = build_sky_map(ConstellationSnapshot(0.0, obs))
    assert sky.source_count == 1


def test_kernel_matches_direct_evaluation(rng):
    sats = [(float(rng.uniform(0, 360)), float(rng.uniform(15, 90))) for _ in range(3)]
    sky = gaussian_sky_map([a for a, _ in sats], [e for _, e in sats], GRID, 12.5)
    np.testing.assert_allclose(sky.cells, gaussian_map_direct(sats, 7.5, 9.0, 12.5), atol=1e-12)


def test_cells_are_read_only():
    sky = gaussian_sky_map([10.0], [50.0], GRID)
    with pytest.raises(ValueError):
        sky.cells[0, 0] = 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 360 * 64 - 1), st.integers(0, 90 * 64)), min_size=1, max_size=12),
       st.integers(1, 47))
def test_cyclic_equivariance_exact(sats, shift):
    # azimuths on a 1/64 degree lattice, so adding shift * e is exact in binary
    az = np.array([a / 64 for a, _ in sats])
    el = np.array([e / 64 for _, e in sats])
    base = gaussian_sky_map(az, el, GRID)
    rotated = gaussian_sky_map((az + shift * GRID.e) % 360.0, el, GRID)
    np.testing.assert_array_equal(rotated.cells, np.roll(base.cells, shift, axis=0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 359.99), st.floats(0, 90)), min_size=1, max_size=12),
       st.integers(1, 47))
def test_cyclic_equivariance_arbitrary_azimuth(sats, shift):
    az = np.array([a for a, _ in sats])
    el = np.array([e for _, e in sats])
    base = gaussian_sky_map(az, el, GRID)
    rotated = gaussian_sky_map((az + shift * GRID.e) % 360.0, el, GRID)
    np.testing.assert_allclose(rotated.cells, np.roll(base.cells, shift, axis=0), rtol=0, atol=1e-12)


def test_zenith_mass_concentration():
    kernel = satellite_kernel(0.0, 90.0, GRID, 12.5)
    near = angular_distance(GRID.az_centers[:, None], GRID.el_centers[None, :], 0.0, 90.0) <= 2.5 * 12.5
    share = kernel[near].sum()
    # continuous oracle: mass of an isotropic spherical Gaussian within 2.5 sigma
    s = math.radians(12.5)
    dens = lambda t: math.exp(-0.5 * (t / s) ** 2) * math.sin(t)  # noqa: E731
    cont = integrate.quad(dens, 0, 2.5 * s)[0] / integrate.quad(dens, 0, math.pi / 2)[0]
    assert share >= 0.95 and cont >= 0.95
    assert share == pytest.approx(cont, abs=0.03)


def test_near_horizon_satellite_sums_to_one():
    sky = gaussian_sky_map([123.0], [0.0], GRID, 12.5)
    assert abs(sky.total - 1.0) <= 1e-9


def test_sky_map_csv_round_trip(tmp_path):
    sky = gaussian_sky_map([10.0, 200.0], [30.0, 70.0], GRID, 12.5, utc_time=5.0)
    path = tmp_path / "sky.csv"
    write_sky_map(path, sky)
    rows = path.read_text().splitlines()
    assert len(rows) == GRID.n_el and len(rows[0].split(",")) == GRID.n_az
    back = read_sky_map(path)
    np.testing.assert_array_equal(back.cells, sky.cells)
    assert (back.source_count, back.utc_time, back.grid) == (2, 5.0, GRID)
    np.testing.assert_array_equal(back.sources, sky.sources)


def test_in_frame_identity_and_tilt():
    sky = gaussian_sky_map([0.0], [90.0], GRID)
    assert sky.in_frame(np.eye(3)) is sky
    a = math.radians(10)
    rot = np.array([[math.cos(a), 0, -math.sin(a)], [0, 1, 0], [math.sin(a), 0, math.cos(a)]])
    tilted = sky.in_frame(rot)
    assert tilted.sources[0, 1] == pytest.approx(80.0)
    assert abs(tilted.total - 1.0) <= 1e-9
