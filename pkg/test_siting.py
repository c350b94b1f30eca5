"""Tests for app/siting.py: K-means station siting and the nearest-station partition."""

from __future__ import annotations

from itertools import product

import numpy as np
import pytest

from app.core import InvariantViolation, PlanePoint
from app.siting import (DegenerateInput, KMeans, Partition, StationSite, build_partition,
                        kmeans_sites, load_sites, save_sites, wcss)


def sites_at(*coords, capacity=4):
    return [StationSite(i, PlanePoint(float(x), float(y)), capacity) for i, (x, y) in enumerate(coords)]


def brute_force_best_wcss(points: np.ndarray, k: int) -> float:
    """Smallest WCSS over every labelling of the points into k clusters."""
    best = float('inf')
    for labels in product(range(k), repeat=len(points)):
        labels = np.array(labels)
        if len(set(labels)) < k:
            continue
        centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        best = min(best, float(((points - centers[labels]) ** 2).sum()))
    return best


class TestKMeans:

    def test_toy_instance(self):
        points = np.array([(0, 0), (0, 1), (10, 0), (10, 1)], dtype=float)
        sites = kmeans_sites(points, 2, seed=1, restarts=4)
        assert [(s.location.x, s.location.y) for s in sites] == [(0.0, 0.5), (10.0, 0.5)]

    def test_one_station_is_the_mean(self):
        rng = np.random.default_rng(42)
        points = rng.uniform(0, 50, (200, 2))
        site = kmeans_sites(points, 1, seed=1)[0]
        assert site.location.x == pytest.approx(points[:, 0].mean())
        assert site.location.y == pytest.approx(points[:, 1].mean())

    def test_one_station_per_point(self):
        points = np.array([(1, 2), (5, 5), (9, 1), (3, 8)], dtype=float)
        model = KMeans(4, seed=3).fit(points)
        assert model.inertia == 0.0
        np.testing.assert_array_equal(np.sort(model.centers, axis=0), np.sort(points, axis=0))

    def test_too_few_distinct_points(self):
        points = np.array([(1, 1), (1, 1), (2, 2)], dtype=float)
        with pytest.raises(DegenerateInput):
            kmeans_sites(points, 3, seed=1)

    def test_no_points(self):
        with pytest.raises(DegenerateInput):
            kmeans_sites(np.empty((0, 2)), 2, seed=1)

    def test_wcss_never_increases(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n = int(rng.integers(10, 60))
            points = rng.uniform(0, 100, (n, 2))
            k = int(rng.integers(2, 6))
            model = KMeans(k, seed=trial).fit(points)
            history = np.array(model.history)
            assert np.all(np.diff(history) <= 1e-9 * max(1.0, history[0]))

    def test_matches_brute_force_on_small_instances(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            centers = np.array([(20.0, 20.0), (70.0, 60.0)])
            points = np.vstack([c + rng.normal(0, 1.0, (4, 2)) for c in centers])
            model = KMeans(2, seed=trial, restarts=4).fit(points)
            assert model.inertia == pytest.approx(brute_force_best_wcss(points, 2))

    def test_same_seed_same_sites(self):
        points = np.random.default_rng(42).uniform(0, 100, (500, 2))
        a = kmeans_sites(points, 5, seed=9, restarts=2)
        b = kmeans_sites(points, 5, seed=9, restarts=2)
        assert a == b

    def test_sample_cap(self):
        points = np.random.default_rng(42).uniform(0, 100, (500, 2))
        sites = kmeans_sites(points, 3, seed=9, sample_cap=100)
        assert len(sites) == 3

    def test_sites_numbered_west_to_east(self):
        points = np.random.default_rng(42).uniform(0, 100, (300, 2))
        xs = [s.location.x for s in kmeans_sites(points, 6, seed=2)]
        assert xs == sorted(xs)

    def test_wcss_helper(self):
        points = np.array([(0, 0), (2, 0)], dtype=float)
        assert wcss(points, np.array([(1.0, 0.0)])) == 2.0

    def test_lloyd_guard(self, monkeypatch):
        points = np.random.default_rng(1).uniform(0, 10, (20, 2))
        model = KMeans(2, seed=1)
        calls = iter([0.0, 5.0])
        monkeypatch.setattr('app.siting.wcss', lambda p, c: next(calls))
        with pytest.raises(InvariantViolation):
            model._lloyd(points, points[:2].copy())


class TestPartition:

    def test_single_site(self):
        partition = build_partition(sites_at((5, 5)), k_adjacent=3)
        assert partition.locate(PlanePoint(100, 100)) == 0
        assert partition.adjacency[0] == []
        assert partition.k_adjacent == 0

    def test_nearest_site_and_tie(self):
        partition = build_partition(sites_at((0, 0), (10, 0)), k_adjacent=1)
        assert partition.locate(PlanePoint(4, 0)) == 0
        assert partition.locate(PlanePoint(6, 0)) == 1
        assert partition.locate(PlanePoint(5, 0)) == 0

    def test_adjacency_by_distance(self):
        partition = build_partition(sites_at((0, 0), (1, 0), (2, 0), (9, 0)), k_adjacent=3)
        assert partition.adjacency[0] == [1, 2, 3]
        assert partition.adjacency[3] == [2, 1, 0]

    def test_locate_matches_linear_scan(self):
        rng = np.random.default_rng(42)
        coords = rng.uniform(0, 100, (15, 2))
        partition = Partition(sites_at(*coords), k_adjacent=3)
        queries = rng.uniform(0, 100, (300, 2))
        fast = partition.locate_many(queries)
        for (x, y), label in zip(queries, fast):
            dist = [abs(x - cx) + abs(y - cy) for cx, cy in coords]
            assert label == int(np.argmin(dist))
            assert partition.locate(PlanePoint(x, y)) == label

    def test_nearest_station_distance(self):
        partition = build_partition(sites_at((0, 0), (10, 0)))
        assert partition.nearest_station_distance(PlanePoint(8, 3)) == (1, 5.0)

    def test_ids_must_be_dense(self):
        with pytest.raises(ValueError):
            Partition([StationSite(1, PlanePoint(0, 0), 1)])

    def test_capacity_at_least_one(self):
        with pytest.raises(ValueError):
            StationSite(0, PlanePoint(0, 0), 0)


class TestSiteFiles:

    def test_save_and_load(self, tmp_path):
        sites = sites_at((10.5, 20.25), (80, 60), capacity=8)
        path = save_sites(sites, tmp_path / 'sites.csv')
        loaded = load_sites(path)
        assert [s.capacity for s in loaded] == [8, 8]
        assert loaded[0].location.x == pytest.approx(10.5, abs=1e-6)
        assert loaded[1].location.y == pytest.approx(60.0, abs=1e-6)

    def test_capacity_override(self, tmp_path):
        path = save_sites(sites_at((10, 20)), tmp_path / 'sites.csv')
        assert load_sites(path, capacity=3)[0].capacity == 3

    def test_default_capacity_without_column(self, tmp_path):
        path = tmp_path / 'sites.csv'
        path.write_text('station_id,lon,lat\n0,116.4,40.0\n', encoding='utf-8')
        assert load_sites(path)[0].capacity == 16
        assert load_sites(path, default_capacity=5)[0].capacity == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sites(tmp_path / 'none.csv')
