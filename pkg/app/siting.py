"""
Charging-station siting by K-means over trip origins, and the nearest-station
partition of the region into sub-regions.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from app.core import (DEFAULT_REGION, FleetSimError, InvariantViolation, PlanePoint, Region,
                      project, rng_stream, unproject, GeoPoint)

MAX_ITERATIONS = 300
MOVEMENT_TOLERANCE_KM = 1e-6

SITE_COLUMNS = ['station_id', 'lon', 'lat', 'capacity']


class DegenerateInput(FleetSimError):
    """Raised when the origins cannot support the requested number of stations."""
    pass


@dataclass(frozen=True)
class StationSite:
    station_id: int
    location: PlanePoint
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"station {self.station_id}: capacity must be at least 1")


def _as_array(points: Union[Sequence[PlanePoint], np.ndarray]) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return np.asarray(points, dtype=float).reshape(-1, 2)
    return np.array([(p.x, p.y) for p in points], dtype=float).reshape(-1, 2)


def wcss(points: np.ndarray, centers: np.ndarray) -> float:
    """Within-cluster sum of squares under nearest-center assignment."""
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


class KMeans:
    """
    Lloyd's algorithm with k-means++ seeding and restarts
    """

    def __init__(self, k: int, seed: int, restarts: int = 1,
                 max_iter: int = MAX_ITERATIONS, tol: float = MOVEMENT_TOLERANCE_KM):
        """
        Args:
            k: Number of clusters
            seed: Scenario seed
            restarts: Independent k-means++ initializations; the lowest WCSS wins
            max_iter: Iteration cap per restart
            tol: Stop once no centroid moves more than this (km)
        """
        self.k = k
        self.rng = rng_stream(seed, 'kmeans')
        self.restarts = max(1, restarts)
        self.max_iter = max_iter
        self.tol = tol
        self.centers: Optional[np.ndarray] = None
        self.labels: Optional[np.ndarray] = None
        self.inertia = float('inf')
        self.history: List[float] = []

    def fit(self, points: np.ndarray) -> 'KMeans':
        distinct = len(np.unique(points, axis=0))
        if distinct < self.k:
            raise DegenerateInput(f"{distinct} distinct origins cannot support {self.k} stations")

        for attempt in range(self.restarts):
            centers = self._init_plus_plus(points)
            centers, history = self._lloyd(points, centers)
            inertia = history[-1]
            logger.debug("k-means restart {}: {} iterations, WCSS {:.3f}", attempt, len(history) - 1, inertia)
            if inertia < self.inertia:
                self.centers, self.inertia, self.history = centers, inertia, history

        self.labels = self._assign(points, self.centers)
        return self

    def _init_plus_plus(self, points: np.ndarray) -> np.ndarray:
        n = len(points)
        centers = [points[self.rng.integers(n)]]
        d2 = ((points - centers[0]) ** 2).sum(axis=1)
        for _ in range(1, self.k):
            total = d2.sum()
            if total <= 0:
                break
            choice = self.rng.choice(n, p=d2 / total)
            centers.append(points[choice])
            d2 = np.minimum(d2, ((points - points[choice]) ** 2).sum(axis=1))
        return np.array(centers, dtype=float)

    @staticmethod
    def _assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def _lloyd(self, points: np.ndarray, centers: np.ndarray) -> Tuple[np.ndarray, List[float]]:
        history = [wcss(points, centers)]
        for _ in range(self.max_iter):
            labels = self._assign(points, centers)
            updated = centers.copy()
            empty = []
            for j in range(len(centers)):
                members = points[labels == j]
                if len(members):
                    updated[j] = members.mean(axis=0)
                else:
                    empty.append(j)
            if empty:
                # reseed each empty cluster on the point worst served by its centroid
                cost = ((points - updated[labels]) ** 2).sum(axis=1)
                for j in empty:
                    worst = int(np.argmax(cost))
                    updated[j] = points[worst]
                    cost[worst] = -1.0

            current = wcss(points, updated)
            if current > history[-1] * (1 + 1e-12) + 1e-12:
                raise InvariantViolation(
                    f"k-means WCSS increased from {history[-1]} to {current}",
                    {'history': history + [current]},
                )
            history.append(current)
            movement = np.abs(updated - centers).max()
            centers = updated
            if movement < self.tol:
                break
        return centers, history


def kmeans_sites(origins: Union[Sequence[PlanePoint], np.ndarray], count: int, seed: int,
                 capacity: int = 16, restarts: int = 1,
                 sample_cap: Optional[int] = None) -> List[StationSite]:
    """Place stations at the K-means centroids of trip origins.

    Args:
        origins: Projected trip origins
        count: Number of stations
        seed: Scenario seed
        capacity: Chargers per station
        restarts: Number of k-means++ restarts
        sample_cap: Cluster at most this many origins (seeded subsample)

    Returns:
        Station sites numbered west to east (ties south to north)

    Raises:
        DegenerateInput: if there are fewer distinct origins than stations
    """
    points = _as_array(origins)
    if count < 1:
        raise DegenerateInput("station count must be at least 1")
    if sample_cap and len(points) > sample_cap:
        picks = rng_stream(seed, 'kmeans-sample').choice(len(points), size=sample_cap, replace=False)
        points = points[np.sort(picks)]

    model = KMeans(count, seed, restarts=restarts).fit(points)
    order = np.lexsort((model.centers[:, 1], model.centers[:, 0]))
    centers = model.centers[order]
    logger.info("Sited {} stations from {} origins (WCSS {:.1f})", count, len(points), model.inertia)
    return [StationSite(i, PlanePoint(float(x), float(y)), capacity)
            for i, (x, y) in enumerate(centers)]


class Partition:
    """
    Nearest-station sub-regions under Manhattan distance, plus each
    sub-region's ordered list of adjacent sub-regions
    """

    def __init__(self, sites: Sequence[StationSite], k_adjacent: int = 3):
        if not sites:
            raise DegenerateInput("a partition needs at least one station")
        ids = [s.station_id for s in sites]
        if ids != list(range(len(sites))):
            raise ValueError("station ids must be 0..S-1 in order")
        self.sites = list(sites)
        self.coords = np.array([(s.location.x, s.location.y) for s in sites], dtype=float)
        self.k_adjacent = max(0, min(k_adjacent, len(sites) - 1))
        if self.k_adjacent < k_adjacent:
            logger.debug("k_adjacent clamped from {} to {}", k_adjacent, self.k_adjacent)
        self.adjacency: Dict[int, List[int]] = {}
        for s in range(len(sites)):
            dist = np.abs(self.coords - self.coords[s]).sum(axis=1)
            order = [int(j) for j in np.argsort(dist, kind='stable') if j != s]
            self.adjacency[s] = order[:self.k_adjacent]

    def __len__(self) -> int:
        return len(self.sites)

    def locate(self, p: PlanePoint) -> int:
        """Station id of the sub-region containing ``p`` (ties go to the lower id)."""
        dist = np.abs(self.coords[:, 0] - p.x) + np.abs(self.coords[:, 1] - p.y)
        return int(np.argmin(dist))

    def locate_many(self, points: Union[Sequence[PlanePoint], np.ndarray]) -> np.ndarray:
        xy = _as_array(points)
        dist = np.abs(xy[:, None, :] - self.coords[None, :, :]).sum(axis=2)
        return dist.argmin(axis=1)

    def station_location(self, station_id: int) -> PlanePoint:
        return self.sites[station_id].location

    def distance_to_station(self, p: PlanePoint, station_id: int) -> float:
        site = self.coords[station_id]
        return abs(p.x - site[0]) + abs(p.y - site[1])

    def nearest_station_distance(self, p: PlanePoint) -> Tuple[int, float]:
        station_id = self.locate(p)
        return station_id, self.distance_to_station(p, station_id)


def build_partition(sites: Sequence[StationSite], k_adjacent: int = 3) -> Partition:
    return Partition(sites, k_adjacent)


def save_sites(sites: Sequence[StationSite], path: Union[str, Path],
               region: Region = DEFAULT_REGION) -> Path:
    """Write sites as ``station_id,lon,lat,capacity``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for site in sites:
        geo = unproject(site.location, region)
        rows.append((site.station_id, geo.lon, geo.lat, site.capacity))
    pd.DataFrame(rows, columns=SITE_COLUMNS).to_csv(path, index=False, float_format='%.10f')
    return path


def load_sites(path: Union[str, Path], region: Region = DEFAULT_REGION,
               capacity: Optional[int] = None, default_capacity: int = 16) -> List[StationSite]:
    """Read a sites CSV.

    Args:
        path: Sites CSV
        region: Region used to project the coordinates
        capacity: When given, overrides the per-site capacity column
        default_capacity: Capacity for every site when the file has no capacity column

    Returns:
        Sites ordered by station id
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Sites file not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in SITE_COLUMNS[:3] if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing required columns {missing}")
    frame = frame.sort_values('station_id')
    sites = []
    for i, row in enumerate(frame.itertuples(index=False)):
        if int(row.station_id) != i:
            raise ValueError(f"{path}: station ids must run 0..S-1, found {row.station_id}")
        cap = capacity if capacity is not None else int(getattr(row, 'capacity', default_capacity))
        sites.append(StationSite(i, project(GeoPoint(float(row.lon), float(row.lat)), region), cap))
    return sites
