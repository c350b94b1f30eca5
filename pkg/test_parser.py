"""Tests for app/parser.py: trip extraction from GPS pings."""

from __future__ import annotations

import pandas as pd
import pytest

from app.demand import TripFileError
from app.parser import PING_COLUMNS, TripExtractor, extract_trips

A = (116.30, 39.90)
B = (116.35, 39.95)


def pings(rows):
    """Build a ping frame from (vehicle, t, lon, lat, in_service) tuples."""
    return pd.DataFrame(
        [{'vehicle_id': v, 'timestamp': t, 'lon': lon, 'lat': lat, 'speed': 20, 'in_service': s}
         for v, t, lon, lat, s in rows],
        columns=PING_COLUMNS,
    )


class TestExtraction:

    def test_one_minute_trip_discarded(self):
        frame = pings([
            ('v1', 0, *A, 0),
            ('v1', 30, *A, 1),
            ('v1', 60, 116.32, 39.92, 1),
            ('v1', 90, *B, 1),
            ('v1', 120, *B, 0),
        ])
        extractor = TripExtractor(pings_frame=frame)
        assert extractor.extract() == []
        assert extractor.stats['too_short'] == 1

    def test_stretched_trip_kept(self):
        frame = pings([
            ('v1', 0, *A, 0),
            ('v1', 30, *A, 1),
            ('v1', 90, 116.32, 39.92, 1),
            ('v1', 180, *B, 1),
            ('v1', 210, *B, 0),
        ])
        trips = extract_trips(frame)
        assert len(trips) == 1
        trip = trips[0]
        assert trip.request_time_s == 30
        assert trip.duration_min == pytest.approx(2.5)
        assert (trip.origin.lon, trip.origin.lat) == A
        assert (trip.destination.lon, trip.destination.lat) == B
        assert trip.distance_km > 0

    def test_missing_start_location_uses_earlier_ping(self):
        frame = pings([
            ('v1', 0, *A, 0),
            ('v1', 100, None, None, 1),
            ('v1', 250, 116.32, 39.92, 1),
            ('v1', 300, *B, 1),
            ('v1', 330, *B, 0),
        ])
        trips = extract_trips(frame)
        assert len(trips) == 1
        assert (trips[0].origin.lon, trips[0].origin.lat) == A

    def test_missing_location_beyond_window_drops_trip(self):
        frame = pings([
            ('v1', 0, *A, 0),
            ('v1', 400, None, None, 1),
            ('v1', 700, 116.32, 39.92, 1),
            ('v1', 800, *B, 1),
            ('v1', 830, *B, 0),
        ])
        extractor = TripExtractor(pings_frame=frame)
        assert extractor.extract() == []
        assert extractor.stats['missing_endpoint'] == 1

    def test_malformed_rows_skipped(self):
        frame = pings([
            ('v1', 0, *A, 0),
            ('v1', 'soon', *A, 1),
            ('v1', 30, *A, 1),
            ('v1', 200, *B, 1),
            ('v1', 230, *B, 'maybe'),
            ('v1', 260, *B, 0),
        ])
        extractor = TripExtractor(pings_frame=frame)
        trips = extractor.extract()
        assert extractor.stats['malformed'] == 2
        assert len(trips) == 1

    def test_out_of_region_trip_dropped(self):
        frame = pings([
            ('v1', 0, *A, 0),
            ('v1', 30, *A, 1),
            ('v1', 300, 118.5, 39.95, 1),
            ('v1', 330, 118.5, 39.95, 0),
        ])
        extractor = TripExtractor(pings_frame=frame)
        assert extractor.extract() == []
        assert extractor.stats['out_of_region'] == 1

    def test_vehicles_merged_in_time_order(self):
        frame = pings([
            ('v2', 100, *B, 1), ('v2', 400, *A, 1), ('v2', 430, *A, 0),
            ('v1', 50, *A, 1), ('v1', 300, *B, 1), ('v1', 330, *B, 0),
        ])
        trips = extract_trips(frame)
        assert [t.request_time_s for t in trips] == [50, 100]
        assert [t.trip_id for t in trips] == [0, 1]

    def test_repeated_index_labels(self):
        first = pings([('v1', 0, *A, 0), ('v1', 30, *A, 1), ('v1', 90, 116.32, 39.92, 1)])
        second = pings([('v1', 180, *B, 1), ('v1', 210, *B, 0), ('v1', 240, 'x', 39.9, 0)])
        frame = pd.concat([first, second])
        assert frame.index.has_duplicates
        extractor = TripExtractor(pings_frame=frame)
        trips = extractor.extract()
        assert len(trips) == 1
        assert trips[0].request_time_s == 30
        assert (trips[0].destination.lon, trips[0].destination.lat) == B
        assert extractor.stats['malformed'] == 1

    def test_epoch_offset(self):
        frame = pings([
            ('v1', 1000, *A, 1), ('v1', 1300, *B, 1), ('v1', 1330, *B, 0),
        ])
        trips = extract_trips(frame, epoch_offset_s=900)
        assert trips[0].request_time_s == 100

    def test_missing_column(self):
        frame = pings([('v1', 0, *A, 0)]).drop(columns=['in_service'])
        with pytest.raises(TripFileError):
            extract_trips(frame)

    def test_csv_file(self, tmp_path):
        path = tmp_path / 'pings.csv'
        pings([('v1', 0, *A, 1), ('v1', 300, *B, 1), ('v1', 330, *B, 0)]).to_csv(path, index=False)
        assert len(extract_trips(path)) == 1
