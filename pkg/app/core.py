"""
Geometry, projection, time discretization and seeded randomness shared by
every part of the simulator.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np


class FleetSimError(Exception):
    """Base exception for simulator errors."""
    pass


class OutOfRegion(FleetSimError):
    """Raised when a coordinate falls outside the configured region."""
    pass


class InvariantViolation(FleetSimError):
    """Raised when a run breaks one of the simulator's internal guarantees."""

    def __init__(self, message: str, state: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.state = state or {}


@dataclass(frozen=True)
class GeoPoint:
    """A longitude/latitude pair in degrees."""
    lon: float
    lat: float


@dataclass(frozen=True)
class PlanePoint:
    """A point in km east/north of the region's south-west corner."""
    x: float
    y: float


@dataclass(frozen=True)
class Region:
    """Rectangular simulation region and its km extent."""
    lon_min: float = 115.5
    lon_max: float = 117.37
    lat_min: float = 39.47
    lat_max: float = 40.68
    width_km: float = 165.0
    height_km: float = 138.0

    @classmethod
    def from_config(cls, region_cfg: Optional[Dict[str, Any]]) -> 'Region':
        """Build a region from the ``[region]`` config section."""
        if not region_cfg:
            return cls()
        return cls(
            lon_min=float(region_cfg.get('lon_min', cls.lon_min)),
            lon_max=float(region_cfg.get('lon_max', cls.lon_max)),
            lat_min=float(region_cfg.get('lat_min', cls.lat_min)),
            lat_max=float(region_cfg.get('lat_max', cls.lat_max)),
            width_km=float(region_cfg.get('width_km', cls.width_km)),
            height_km=float(region_cfg.get('height_km', cls.height_km)),
        )

    @property
    def km_per_deg_lon(self) -> float:
        return self.width_km / (self.lon_max - self.lon_min)

    @property
    def km_per_deg_lat(self) -> float:
        return self.height_km / (self.lat_max - self.lat_min)

    def contains(self, p: GeoPoint) -> bool:
        return (self.lon_min <= p.lon <= self.lon_max
                and self.lat_min <= p.lat <= self.lat_max)

    def clamp_plane(self, x: float, y: float) -> PlanePoint:
        """Clip plane coordinates into the region rectangle."""
        return PlanePoint(min(max(x, 0.0), self.width_km),
                          min(max(y, 0.0), self.height_km))


DEFAULT_REGION = Region()


def project(p: GeoPoint, region: Region = DEFAULT_REGION) -> PlanePoint:
    """Project a geographic point onto the region's km plane.

    Linear per-axis scaling: the full longitude span maps to ``width_km``
    and the full latitude span to ``height_km``.

    Args:
        p: Point to project
        region: Region bounds

    Returns:
        PlanePoint in km from the south-west corner

    Raises:
        OutOfRegion: if the point lies outside the region bounds
    """
    if not region.contains(p):
        raise OutOfRegion(
            f"({p.lon}, {p.lat}) outside region "
            f"[{region.lon_min}, {region.lon_max}] x [{region.lat_min}, {region.lat_max}]"
        )
    return PlanePoint((p.lon - region.lon_min) * region.km_per_deg_lon,
                      (p.lat - region.lat_min) * region.km_per_deg_lat)


def unproject(p: PlanePoint, region: Region = DEFAULT_REGION) -> GeoPoint:
    """Inverse of :func:`project`."""
    if not (0.0 <= p.x <= region.width_km and 0.0 <= p.y <= region.height_km):
        raise OutOfRegion(f"plane point ({p.x}, {p.y}) outside region rectangle")
    return GeoPoint(region.lon_min + p.x / region.km_per_deg_lon,
                    region.lat_min + p.y / region.km_per_deg_lat)


def manhattan(a: PlanePoint, b: PlanePoint) -> float:
    """Manhattan distance in km."""
    return abs(a.x - b.x) + abs(a.y - b.y)


def duration_to_steps(seconds: float, step_seconds: int) -> int:
    """Round a duration up to whole simulation steps."""
    if seconds <= 0:
        return 0
    # tolerate float noise so exact multiples do not round up an extra step
    return int(math.ceil(seconds / step_seconds - 1e-9))


def travel_time_empty(distance_km: float, speed_kmh: float = 30.0) -> float:
    """Minutes needed to cover ``distance_km`` without passengers."""
    if distance_km < 0:
        raise ValueError(f"negative distance: {distance_km}")
    return distance_km / speed_kmh * 60.0


def travel_steps_empty(distance_km: float, step_seconds: int = 30,
                       speed_kmh: float = 30.0) -> int:
    """Empty travel time rounded up to whole steps."""
    return duration_to_steps(travel_time_empty(distance_km, speed_kmh) * 60.0, step_seconds)


def derive_seed(seed: int, tag: str) -> int:
    # crc32, never hash(): str hashing is salted per process
    crc = zlib.crc32(tag.encode('utf-8')) & 0xFFFFFFFF
    return ((int(seed) & 0xFFFFFFFF) ^ crc) & 0xFFFFFFFF


def rng_stream(seed: int, tag: str) -> np.random.Generator:
    """Independent, reproducible random stream for one concern of a scenario.

    Args:
        seed: Scenario seed
        tag: Name of the consumer (e.g. ``'placement'``, ``'dispatch'``)

    Returns:
        numpy Generator seeded from ``seed`` and ``tag``
    """
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, derive_seed(seed, tag)])
