"""Shared fixtures: tiny scenarios built from plane coordinates."""

from __future__ import annotations

import json
from typing import Any, Dict, List, Sequence, Tuple

import pytest

from app.config import load_config
from app.core import DEFAULT_REGION, PlanePoint, manhattan, unproject
from app.demand import FareSchedule, TripRequest, save_trips
from app.siting import StationSite, save_sites

CENTER = PlanePoint(80.0, 70.0)


def make_trip(trip_id: int, time_s: float, origin: Tuple[float, float],
              destination: Tuple[float, float], duration_min: float = 20.0) -> TripRequest:
    """Trip between two plane points (km) inside the default region."""
    o = PlanePoint(*origin)
    d = PlanePoint(*destination)
    distance = manhattan(o, d)
    return TripRequest(
        trip_id=trip_id,
        request_time_s=float(time_s),
        origin=unproject(o, DEFAULT_REGION),
        destination=unproject(d, DEFAULT_REGION),
        distance_km=distance,
        duration_min=duration_min,
        fare=FareSchedule().fare(distance),
    )


def tiny_config(**sections: Dict[str, Any]) -> Dict[str, Any]:
    """One-day, one-station scenario; keyword arguments override whole sections' keys."""
    config: Dict[str, Any] = {
        'seed': 7,
        'time': {'days': 1},
        'fleet': {'size': 1, 'battery_range_km': 200},
        'stations': {'count': 1, 'capacity': 2, 'k_adjacent': 0, 'kmeans_restarts': 1},
        'dispatch': {'strategy': 1},
        'demand': {'desk_scale': 0.001},
    }
    for name, values in sections.items():
        if isinstance(values, dict):
            config.setdefault(name, {}).update(values)
        else:
            config[name] = values
    return config


@pytest.fixture
def one_site() -> List[StationSite]:
    return [StationSite(0, CENTER, 2)]


@pytest.fixture
def tiny():
    """Factory for validated tiny configurations."""
    def build(**sections):
        return load_config(tiny_config(**sections))
    return build


@pytest.fixture
def scenario_files(tmp_path):
    """Writes trips and sites CSVs next to a JSON config and returns the config path."""
    def build(trips: Sequence[TripRequest], sites: Sequence[StationSite], **sections) -> str:
        save_trips(trips, tmp_path / 'trips.csv')
        save_sites(sites, tmp_path / 'sites.csv')
        config = tiny_config(**sections)
        config['demand'] = {**config['demand'], 'trips': 'trips.csv'}
        config['stations'] = {**config['stations'], 'sites': 'sites.csv'}
        path = tmp_path / 'scenario.json'
        path.write_text(json.dumps(config), encoding='utf-8')
        return str(path)
    return build
