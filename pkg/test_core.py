"""Tests for app/core.py: projection, distances, time steps and seeded streams."""

from __future__ import annotations

import numpy as np
import pytest

from app.core import (DEFAULT_REGION, GeoPoint, OutOfRegion, PlanePoint, Region, derive_seed,
                      duration_to_steps, manhattan, project, rng_stream, travel_steps_empty,
                      travel_time_empty, unproject)


class TestProjection:

    def test_south_west_corner_is_origin(self):
        assert project(GeoPoint(115.5, 39.47)) == PlanePoint(0.0, 0.0)

    def test_north_east_corner_is_full_extent(self):
        p = project(GeoPoint(117.37, 40.68))
        assert p.x == pytest.approx(165.0)
        assert p.y == pytest.approx(138.0)

    def test_midpoint(self):
        p = project(GeoPoint(116.435, 40.075))
        assert p.x == pytest.approx(82.5)
        assert p.y == pytest.approx(69.0)

    def test_outside_region_raises(self):
        with pytest.raises(OutOfRegion):
            project(GeoPoint(118.0, 40.0))

    def test_unproject_inverts_project(self):
        rng = np.random.default_rng(42)
        for lon, lat in zip(rng.uniform(115.5, 117.37, 50), rng.uniform(39.47, 40.68, 50)):
            back = unproject(project(GeoPoint(lon, lat)))
            assert back.lon == pytest.approx(lon, abs=1e-9)
            assert back.lat == pytest.approx(lat, abs=1e-9)

    def test_custom_region_from_config(self):
        region = Region.from_config({'lon_min': 0.0, 'lon_max': 1.0, 'lat_min': 0.0, 'lat_max': 2.0,
                                     'width_km': 10.0, 'height_km': 10.0})
        assert project(GeoPoint(0.5, 1.0), region) == PlanePoint(5.0, 5.0)

    def test_clamp_plane(self):
        assert DEFAULT_REGION.clamp_plane(-3.0, 200.0) == PlanePoint(0.0, 138.0)


class TestDistances:

    def test_identity(self):
        assert manhattan(PlanePoint(0, 0), PlanePoint(0, 0)) == 0

    def test_axis_sum(self):
        assert manhattan(PlanePoint(0, 0), PlanePoint(3, 4)) == 7

    def test_tenth_degree_near_beijing(self):
        a = project(GeoPoint(116.3, 39.9))
        b = project(GeoPoint(116.4, 40.0))
        assert manhattan(a, b) == pytest.approx(20.23, abs=0.01)

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            a, b, c = (PlanePoint(*rng.uniform(0, 165, 2)) for _ in range(3))
            assert manhattan(a, b) == manhattan(b, a)
            assert manhattan(a, c) <= manhattan(a, b) + manhattan(b, c) + 1e-9

    def test_travel_time_grows_with_distance(self):
        distances = np.sort(np.random.default_rng(3).uniform(0, 200, 300))
        minutes = [travel_time_empty(d) for d in distances]
        steps = [travel_steps_empty(d) for d in distances]
        assert all(x <= y for x, y in zip(minutes, minutes[1:]))
        assert all(x <= y for x, y in zip(steps, steps[1:]))

    def test_travel_time_empty(self):
        assert travel_time_empty(0.0) == 0.0
        assert travel_time_empty(10.0) == pytest.approx(20.0)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            travel_time_empty(-1.0)

    def test_short_hop_rounds_up_to_one_step(self):
        assert travel_steps_empty(0.1, step_seconds=30) == 1

    def test_six_km_takes_24_steps(self):
        assert travel_steps_empty(6.0, step_seconds=30) == 24


class TestTime:

    def test_exact_multiple_does_not_round_up(self):
        assert duration_to_steps(1800.0, 30) == 60

    def test_zero_duration(self):
        assert duration_to_steps(0.0, 30) == 0


class TestRandomStreams:

    def test_same_seed_and_tag_repeat(self):
        a = rng_stream(11, 'dispatch').random(5)
        b = rng_stream(11, 'dispatch').random(5)
        np.testing.assert_array_equal(a, b)

    def test_tags_are_independent(self):
        a = rng_stream(11, 'dispatch').random(5)
        b = rng_stream(11, 'placement').random(5)
        assert not np.array_equal(a, b)

    def test_derive_seed_is_stable(self):
        # crc32 based, so the value never depends on the interpreter's hash salt
        assert derive_seed(0, 'demand') == derive_seed(0, 'demand')
        assert derive_seed(1, 'demand') != derive_seed(2, 'demand')
