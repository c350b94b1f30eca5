"""
Customer demand: trip records, trip files, synthetic demand and density scaling.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from app.core import (DEFAULT_REGION, FleetSimError, GeoPoint, PlanePoint,
                      Region, project, rng_stream, unproject)

MIN_TRIP_MINUTES = 2.0

TRIP_COLUMNS = ['trip_id', 'request_time_s', 'origin_lon', 'origin_lat', 'dest_lon',
                'dest_lat', 'distance_km', 'duration_min', 'fare']

# trips per week at the three demand levels
DENSITY_LEVELS: Dict[str, float] = {
    'low': 1.66e6,
    'middle': 1.84e6,
    'high': 2.03e6,
}


class TripFileError(FleetSimError):
    """Raised when a trip or ping file cannot be used at all."""
    pass


@dataclass(frozen=True)
class TripRequest:
    """One customer origin-destination request."""
    trip_id: int
    request_time_s: float
    origin: GeoPoint
    destination: GeoPoint
    distance_km: float
    duration_min: float
    fare: float

    def request_step(self, step_seconds: int) -> int:
        """Simulation step in which the request arrives."""
        return int(self.request_time_s // step_seconds)

    def problems(self) -> List[str]:
        """Invariant violations of this record (empty when valid)."""
        issues = []
        if self.duration_min < MIN_TRIP_MINUTES:
            issues.append(f'duration {self.duration_min:.2f} min below {MIN_TRIP_MINUTES} min')
        if self.origin == self.destination:
            issues.append('origin equals destination')
        if not self.distance_km > 0:
            issues.append(f'non-positive distance {self.distance_km}')
        if self.request_time_s < 0:
            issues.append('negative request time')
        if self.fare < 0:
            issues.append('negative fare')
        return issues


@dataclass(frozen=True)
class FareSchedule:
    """Flag-fall fare covering ``base_km`` plus a per-km rate beyond it."""
    flag_fall: float = 13.0
    base_km: float = 3.0
    per_km: float = 2.3

    @classmethod
    def from_config(cls, fare_cfg: Optional[Dict[str, Any]]) -> 'FareSchedule':
        if not fare_cfg:
            return cls()
        return cls(float(fare_cfg['flag_fall']), float(fare_cfg['base_km']),
                   float(fare_cfg['per_km']))

    def fare(self, distance_km: float) -> float:
        return self.flag_fall + self.per_km * max(0.0, distance_km - self.base_km)


@dataclass(frozen=True)
class SpeedModel:
    """Truncated normal distribution of passenger-carrying speeds (km/h)."""
    mean: float = 25.0
    sd: float = 5.0
    minimum: float = 10.0
    maximum: float = 60.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        speeds = rng.normal(self.mean, self.sd, size)
        bad = (speeds < self.minimum) | (speeds > self.maximum)
        while bad.any():
            speeds[bad] = rng.normal(self.mean, self.sd, int(bad.sum()))
            bad = (speeds < self.minimum) | (speeds > self.maximum)
        return speeds


@dataclass
class DemandCluster:
    center: GeoPoint
    weight: float
    spread_km: float


@dataclass
class DemandProfile:
    """Spatial clusters, a daily intensity curve and a weekly trip total.

    ``intensity_curve`` holds relative arrival rates for equal bins covering
    one day; it repeats every day of the window.
    """
    spatial_clusters: List[DemandCluster]
    intensity_curve: List[float]
    weekly_total: float
    speed: SpeedModel = field(default_factory=SpeedModel)

    @property
    def bin_minutes(self) -> float:
        return 1440.0 / len(self.intensity_curve)

    def validate(self) -> Dict[str, Any]:
        errors: List[Dict[str, Any]] = []
        if not self.spatial_clusters:
            errors.append({'field': 'spatial_clusters', 'message': 'at least one cluster required',
                           'type': 'required_field_missing'})
        weights = [c.weight for c in self.spatial_clusters]
        if weights and (min(weights) < 0 or not math.isclose(sum(weights), 1.0, abs_tol=1e-6)):
            errors.append({'field': 'spatial_clusters.weight',
                           'message': f'weights must be non-negative and sum to 1, got {sum(weights)}',
                           'type': 'invalid_value'})
        if any(c.spread_km < 0 for c in self.spatial_clusters):
            errors.append({'field': 'spatial_clusters.spread_km', 'message': 'negative spread',
                           'type': 'out_of_range'})
        if not self.intensity_curve or min(self.intensity_curve) < 0 or sum(self.intensity_curve) <= 0:
            errors.append({'field': 'intensity_curve',
                           'message': 'must be non-empty, non-negative and not all zero',
                           'type': 'invalid_value'})
        if self.weekly_total < 0:
            errors.append({'field': 'weekly_total', 'message': 'must be non-negative',
                           'type': 'out_of_range'})
        return {'is_valid': not errors, 'errors': errors, 'warnings': []}

    def with_weekly_total(self, weekly_total: float) -> 'DemandProfile':
        return replace(self, weekly_total=float(weekly_total))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DemandProfile':
        clusters = [
            DemandCluster(GeoPoint(float(c['lon']), float(c['lat'])), float(c['weight']),
                          float(c['spread_km']))
            for c in data['spatial_clusters']
        ]
        speed = SpeedModel(**data['speed']) if data.get('speed') else SpeedModel()
        weekly_total = data.get('weekly_total')
        if weekly_total is None:
            level = data.get('density', 'middle')
            weekly_total = DENSITY_LEVELS[level] * float(data.get('desk_scale', 1.0))
        return cls(clusters, [float(v) for v in data['intensity_curve']], float(weekly_total), speed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'spatial_clusters': [
                {'lon': c.center.lon, 'lat': c.center.lat, 'weight': c.weight,
                 'spread_km': c.spread_km}
                for c in self.spatial_clusters
            ],
            'intensity_curve': list(self.intensity_curve),
            'weekly_total': self.weekly_total,
            'speed': asdict(self.speed),
        }

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'DemandProfile':
        path = Path(path)
        if not path.is_file():
            raise TripFileError(f"Profile file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise TripFileError(f"Invalid profile JSON in {path}: {e}")
        return cls.from_dict(data)


# Hourly shape with a morning and an evening peak and a quiet night.
TWO_PEAK_INTENSITY = [
    0.35, 0.25, 0.18, 0.15, 0.18, 0.35, 0.80, 1.60, 2.00, 1.50, 1.10, 1.00,
    1.05, 1.00, 0.95, 1.00, 1.30, 1.80, 2.10, 1.60, 1.20, 1.00, 0.80, 0.55,
]


def default_profile(weekly_total: Optional[float] = None) -> DemandProfile:
    """Dense urban core plus four suburban clusters around central Beijing."""
    core = GeoPoint(116.40, 39.91)
    clusters = [DemandCluster(core, 0.6, 6.0)]
    for dlon, dlat in ((0.23, 0.0), (-0.23, 0.0), (0.0, 0.18), (0.0, -0.18)):
        clusters.append(DemandCluster(GeoPoint(core.lon + dlon, core.lat + dlat), 0.1, 5.0))
    if weekly_total is None:
        weekly_total = DENSITY_LEVELS['middle'] * 0.01
    return DemandProfile(clusters, list(TWO_PEAK_INTENSITY), float(weekly_total))


def density_factor(density: Union[str, float]) -> float:
    """Scaling factor for a density level (relative to middle) or a raw factor."""
    if isinstance(density, str):
        if density not in DENSITY_LEVELS:
            raise ValueError(f"Unknown density level: {density}")
        return DENSITY_LEVELS[density] / DENSITY_LEVELS['middle']
    return float(density)


def read_trips(path: Union[str, Path], region: Region = DEFAULT_REGION) -> Dict[str, Any]:
    """Read a trip CSV, validating each row.

    Args:
        path: Trip CSV with the documented header
        region: Region the coordinates must fall in

    Returns:
        Dict with ``trips`` (sorted by request time), ``rejected`` (count)
        and ``errors`` (one entry per rejected row)

    Raises:
        TripFileError: if the file is missing or lacks a required column
    """
    path = Path(path)
    if not path.is_file():
        raise TripFileError(f"Trip file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise TripFileError(f"Trip file has no header: {path}")

    missing = [c for c in TRIP_COLUMNS if c not in frame.columns]
    if missing:
        raise TripFileError(f"{path}: missing required columns {missing}")

    trips: List[TripRequest] = []
    errors: List[Dict[str, Any]] = []
    seen_ids: Set[int] = set()
    numeric = frame[TRIP_COLUMNS].apply(pd.to_numeric, errors='coerce')
    for row_number, row in enumerate(numeric.itertuples(index=False), start=2):
        if any(pd.isna(v) for v in row):
            errors.append({'line': row_number, 'message': 'unparseable value', 'type': 'malformed_row'})
            continue
        trip = TripRequest(
            trip_id=int(row.trip_id),
            request_time_s=float(row.request_time_s),
            origin=GeoPoint(float(row.origin_lon), float(row.origin_lat)),
            destination=GeoPoint(float(row.dest_lon), float(row.dest_lat)),
            distance_km=float(row.distance_km),
            duration_min=float(row.duration_min),
            fare=float(row.fare),
        )
        issues = trip.problems()
        if trip.trip_id in seen_ids:
            issues.append(f'duplicate trip_id {trip.trip_id}')
        if not region.contains(trip.origin) or not region.contains(trip.destination):
            issues.append('coordinates outside region')
        if issues:
            errors.append({'line': row_number, 'message': '; '.join(issues), 'type': 'invalid_trip'})
            continue
        seen_ids.add(trip.trip_id)
        trips.append(trip)

    trips.sort(key=lambda t: (t.request_time_s, t.trip_id))
    return {'trips': trips, 'rejected': len(errors), 'errors': errors}


def load_trips(path: Union[str, Path], region: Region = DEFAULT_REGION) -> List[TripRequest]:
    """Load valid trips from a CSV, logging every rejected row."""
    result = read_trips(path, region)
    for error in result['errors']:
        logger.warning("{} line {}: {}", path, error['line'], error['message'])
    logger.info("Loaded {} trips from {} ({} rejected)", len(result['trips']), path,
                result['rejected'])
    return result['trips']


def trips_to_frame(trips: Sequence[TripRequest]) -> pd.DataFrame:
    return pd.DataFrame(
        [(t.trip_id, t.request_time_s, t.origin.lon, t.origin.lat, t.destination.lon,
          t.destination.lat, t.distance_km, t.duration_min, t.fare) for t in trips],
        columns=TRIP_COLUMNS,
    )


def save_trips(trips: Sequence[TripRequest], path: Union[str, Path]) -> Path:
    """Write trips in the trip CSV schema."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trips_to_frame(trips).to_csv(path, index=False, float_format='%.10g')
    return path


def _bin_counts(profile: DemandProfile, start_s: float, end_s: float,
                rng: np.random.Generator) -> np.ndarray:
    """Arrival times (seconds) of an inhomogeneous Poisson process."""
    curve = np.asarray(profile.intensity_curve, dtype=float)
    bin_s = profile.bin_minutes * 60.0
    per_day = profile.weekly_total / 7.0
    rates = per_day * curve / curve.sum()

    times: List[np.ndarray] = []
    first_bin = int(start_s // bin_s)
    last_bin = int(math.ceil(end_s / bin_s))
    for k in range(first_bin, last_bin):
        lo = max(start_s, k * bin_s)
        hi = min(end_s, (k + 1) * bin_s)
        if hi <= lo:
            continue
        expected = rates[k % len(curve)] * (hi - lo) / bin_s
        n = rng.poisson(expected)
        if n:
            times.append(rng.uniform(lo, hi, n))
    if not times:
        return np.empty(0)
    return np.sort(np.concatenate(times))


def _draw_points(profile: DemandProfile, region: Region, rng: np.random.Generator,
                 size: int) -> np.ndarray:
    weights = np.array([c.weight for c in profile.spatial_clusters], dtype=float)
    centers = np.array([[project(c.center, region).x, project(c.center, region).y]
                        for c in profile.spatial_clusters])
    spreads = np.array([c.spread_km for c in profile.spatial_clusters])
    picks = rng.choice(len(weights), size=size, p=weights / weights.sum())
    points = centers[picks] + rng.normal(0.0, 1.0, (size, 2)) * spreads[picks, None]
    points[:, 0] = np.clip(points[:, 0], 0.0, region.width_km)
    points[:, 1] = np.clip(points[:, 1], 0.0, region.height_km)
    return points


def synthesize(profile: DemandProfile, window: Tuple[float, float], seed: int,
               region: Region = DEFAULT_REGION, fare: Optional[FareSchedule] = None,
               max_redraws: int = 20) -> List[TripRequest]:
    """Generate synthetic trips for a time window.

    Args:
        profile: Demand profile (clusters, intensity, weekly total)
        window: ``(start_s, end_s)`` in seconds from the simulation start
        seed: Scenario seed
        region: Region used for projection and clipping
        fare: Fare schedule (defaults to :class:`FareSchedule`)
        max_redraws: Destination redraws for trips shorter than two minutes

    Returns:
        Trips sorted by request time with sequential ids
    """
    result = profile.validate()
    if not result['is_valid']:
        raise ValueError(f"Invalid demand profile: {result['errors']}")
    fare = fare or FareSchedule()
    if profile.weekly_total <= 0:
        return []

    rng = rng_stream(seed, 'demand')
    start_s, end_s = window
    times = _bin_counts(profile, start_s, end_s, rng)
    n = len(times)
    if n == 0:
        return []

    origins = _draw_points(profile, region, rng, n)
    destinations = _draw_points(profile, region, rng, n)
    speeds = profile.speed.draw(rng, n)

    def durations() -> Tuple[np.ndarray, np.ndarray]:
        dist = np.abs(origins - destinations).sum(axis=1)
        return dist, dist / speeds * 60.0

    distance, duration = durations()
    for _ in range(max_redraws):
        short = duration < MIN_TRIP_MINUTES
        if not short.any():
            break
        destinations[short] = _draw_points(profile, region, rng, int(short.sum()))
        distance, duration = durations()
    keep = duration >= MIN_TRIP_MINUTES
    if not keep.all():
        logger.debug("Dropped {} synthetic trips shorter than {} min", int((~keep).sum()),
                     MIN_TRIP_MINUTES)

    trips = []
    for i in np.flatnonzero(keep):
        o = unproject(PlanePoint(float(origins[i, 0]), float(origins[i, 1])), region)
        d = unproject(PlanePoint(float(destinations[i, 0]), float(destinations[i, 1])), region)
        trips.append(TripRequest(
            trip_id=len(trips),
            request_time_s=float(math.floor(times[i])),
            origin=o,
            destination=d,
            distance_km=float(distance[i]),
            duration_min=float(duration[i]),
            fare=fare.fare(float(distance[i])),
        ))
    return trips


def scale_density(trips: Sequence[TripRequest], factor: float, seed: int,
                  step_seconds: int = 30) -> List[TripRequest]:
    """Thin or bootstrap a trip list to a different demand density.

    Args:
        trips: Source trips
        factor: Target density relative to the source (> 0)
        seed: Scenario seed
        step_seconds: Step length used for request-time jitter

    Returns:
        New trip list, sorted and renumbered (unchanged when ``factor == 1``)
    """
    if factor <= 0:
        raise ValueError(f"density factor must be positive, got {factor}")
    if factor == 1.0:
        return list(trips)

    rng = rng_stream(seed, 'density')
    if factor < 1.0:
        keep = rng.random(len(trips)) < factor
        scaled = [t for t, k in zip(trips, keep) if k]
    else:
        whole = int(math.floor(factor))
        extra = rng.random(len(trips)) < (factor - whole)
        scaled = []
        for trip, has_extra in zip(trips, extra):
            scaled.append(trip)
            copies = whole - 1 + int(has_extra)
            if copies:
                jitter = rng.integers(-1, 2, copies) * step_seconds
                for shift in jitter:
                    scaled.append(replace(trip, request_time_s=max(0.0, trip.request_time_s + float(shift))))

    scaled.sort(key=lambda t: (t.request_time_s, t.trip_id))
    return [replace(t, trip_id=i) for i, t in enumerate(scaled)]
