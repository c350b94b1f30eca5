"""
Parser module for extracting customer trips from raw taxi ping files
"""
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from app.core import DEFAULT_REGION, GeoPoint, Region, manhattan, project
from app.demand import FareSchedule, TripFileError, TripRequest

PING_COLUMNS = ['vehicle_id', 'timestamp', 'lon', 'lat', 'speed', 'in_service']

_TRUE = {'1', 'true', 't', 'yes', 'y'}
_FALSE = {'0', 'false', 'f', 'no', 'n'}


class TripExtractor:
    """
    Extractor for taxi ping files
    Groups pings by vehicle, finds in-service runs and turns each run into a trip
    """

    def __init__(self, pings_path: Optional[Union[str, Path]] = None,
                 pings_frame: Optional[pd.DataFrame] = None,
                 region: Region = DEFAULT_REGION,
                 fare: Optional[FareSchedule] = None,
                 epoch_offset_s: float = 0.0,
                 min_duration_s: float = 120.0,
                 endpoint_window_s: float = 180.0):
        """
        Initialize the extractor with either a file path or an already loaded frame

        Args:
            pings_path: Path to the ping CSV
            pings_frame: DataFrame with the ping columns (used by tests and callers with data in memory)
            region: Region the trip endpoints must fall in
            fare: Fare schedule used to price trips
            epoch_offset_s: Epoch seconds of the simulation window start
            min_duration_s: Trips shorter than this are discarded
            endpoint_window_s: How far from a trip's start or end a ping may be
                to stand in for a missing endpoint location
        """
        self.pings_path = pings_path
        self.pings_frame = pings_frame
        self.region = region
        self.fare = fare or FareSchedule()
        self.epoch_offset_s = epoch_offset_s
        self.min_duration_s = min_duration_s
        self.endpoint_window_s = endpoint_window_s
        self.trips: List[TripRequest] = []
        self.stats: Dict[str, int] = {}

    def extract(self) -> List[TripRequest]:
        """
        Parse the pings and extract trips

        Returns:
            Trips sorted by request time with sequential ids
        """
        raw = self._read()
        pings = self._clean(raw)
        self.stats.update({'vehicles': 0, 'runs': 0, 'too_short': 0, 'missing_endpoint': 0,
                           'out_of_region': 0, 'same_endpoints': 0, 'before_window': 0})

        drafts: List[Tuple[float, str, GeoPoint, GeoPoint, float]] = []
        for vehicle_id, group in pings.groupby('vehicle_id', sort=True):
            self.stats['vehicles'] += 1
            group = group.sort_values('timestamp', kind='mergesort')
            group = group.drop_duplicates('timestamp', keep='first')
            drafts.extend(self._vehicle_trips(str(vehicle_id), group))

        drafts.sort(key=lambda d: (d[0], d[1]))
        self.trips = []
        for start_s, _, origin, destination, duration_s in drafts:
            distance = manhattan(project(origin, self.region), project(destination, self.region))
            self.trips.append(TripRequest(
                trip_id=len(self.trips),
                request_time_s=start_s,
                origin=origin,
                destination=destination,
                distance_km=distance,
                duration_min=duration_s / 60.0,
                fare=self.fare.fare(distance),
            ))

        logger.info("Extracted {} trips from {} vehicles ({} malformed rows, {} runs too short, "
                    "{} missing endpoints)", len(self.trips), self.stats['vehicles'],
                    self.stats['malformed'], self.stats['too_short'], self.stats['missing_endpoint'])
        return self.trips

    def _read(self) -> pd.DataFrame:
        if self.pings_frame is not None:
            frame = self.pings_frame.astype(str)
        else:
            path = Path(self.pings_path)
            if not path.is_file():
                raise TripFileError(f"Ping file not found: {path}")
            try:
                frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
            except pd.errors.EmptyDataError:
                raise TripFileError(f"Ping file has no header: {path}")
        missing = [c for c in PING_COLUMNS if c not in frame.columns]
        if missing:
            raise TripFileError(f"Ping data missing required columns {missing}")
        return frame

    def _clean(self, frame: pd.DataFrame) -> pd.DataFrame:
        """
        Convert column types, warning about and dropping malformed rows
        """
        frame = frame[PING_COLUMNS].reset_index(drop=True)
        for column in ('lon', 'lat'):
            frame[column] = frame[column].str.strip().replace({'nan': '', 'None': ''})
        flags = frame['in_service'].str.strip().str.lower()
        in_service = flags.map(lambda v: True if v in _TRUE else (False if v in _FALSE else None))
        timestamps = pd.to_numeric(frame['timestamp'], errors='coerce')
        lon = pd.to_numeric(frame['lon'].where(frame['lon'] != ''), errors='coerce')
        lat = pd.to_numeric(frame['lat'].where(frame['lat'] != ''), errors='coerce')

        bad_coord = ((frame['lon'] != '') & lon.isna()) | ((frame['lat'] != '') & lat.isna())
        bad = (frame['vehicle_id'].str.strip() == '') | timestamps.isna() | in_service.isna() | bad_coord
        for line in (np.flatnonzero(bad.to_numpy()) + 2)[:20]:
            logger.warning("Malformed ping row at line {}: skipped", int(line))
        self.stats['malformed'] = int(bad.sum())

        cleaned = pd.DataFrame({
            'vehicle_id': frame['vehicle_id'].str.strip(),
            'timestamp': timestamps,
            'lon': lon,
            'lat': lat,
            'in_service': in_service,
        })[~bad.to_numpy()]
        # a ping with only one coordinate has no usable location
        no_location = cleaned['lon'].isna() | cleaned['lat'].isna()
        cleaned.loc[no_location, ['lon', 'lat']] = np.nan
        cleaned['in_service'] = cleaned['in_service'].astype(bool)
        return cleaned

    def _vehicle_trips(self, vehicle_id: str,
                       group: pd.DataFrame) -> List[Tuple[float, str, GeoPoint, GeoPoint, float]]:
        runs = (group['in_service'] != group['in_service'].shift()).cumsum()
        times = group['timestamp'].to_numpy(dtype=float)
        lons = group['lon'].to_numpy(dtype=float)
        lats = group['lat'].to_numpy(dtype=float)

        drafts = []
        for _, run in group.groupby(runs, sort=False):
            if not bool(run['in_service'].iloc[0]):
                continue
            self.stats['runs'] += 1
            first = group.index.get_loc(run.index[0])
            last = group.index.get_loc(run.index[-1])
            duration = times[last] - times[first]
            if duration < self.min_duration_s:
                self.stats['too_short'] += 1
                continue

            origin = self._endpoint(times, lons, lats, first)
            destination = self._endpoint(times, lons, lats, last)
            if origin is None or destination is None:
                self.stats['missing_endpoint'] += 1
                logger.debug("Vehicle {}: trip at {} has no usable endpoint location",
                             vehicle_id, times[first])
                continue
            if not self.region.contains(origin) or not self.region.contains(destination):
                self.stats['out_of_region'] += 1
                continue
            if origin == destination:
                self.stats['same_endpoints'] += 1
                continue
            start_s = times[first] - self.epoch_offset_s
            if start_s < 0:
                self.stats['before_window'] += 1
                continue
            drafts.append((float(start_s), vehicle_id, origin, destination, float(duration)))
        return drafts

    def _endpoint(self, times: np.ndarray, lons: np.ndarray, lats: np.ndarray,
                  index: int) -> Optional[GeoPoint]:
        """
        Location of the ping at ``index``, or of the nearest ping in time within the window
        """
        if not np.isnan(lons[index]):
            return GeoPoint(float(lons[index]), float(lats[index]))
        gaps = np.abs(times - times[index])
        gaps[np.isnan(lons)] = np.inf
        nearest = int(np.argmin(gaps))
        if gaps[nearest] <= self.endpoint_window_s:
            return GeoPoint(float(lons[nearest]), float(lats[nearest]))
        return None


def extract_trips(pings: Union[str, Path, pd.DataFrame], region: Region = DEFAULT_REGION,
                  fare: Optional[FareSchedule] = None,
                  epoch_offset_s: float = 0.0) -> List[TripRequest]:
    """Extract trips from a ping CSV path or DataFrame."""
    if isinstance(pings, pd.DataFrame):
        extractor = TripExtractor(pings_frame=pings, region=region, fare=fare,
                                  epoch_offset_s=epoch_offset_s)
    else:
        extractor = TripExtractor(pings_path=pings, region=region, fare=fare,
                                  epoch_offset_s=epoch_offset_s)
    return extractor.extract()
