"""
Taxi state machine, movement legs and the fleet container.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Set

from app.core import InvariantViolation, PlanePoint

SOC_TOLERANCE_KM = 1e-9


class Activity(Enum):
    AVAILABLE = 'Available'
    TO_PICKUP = 'ToPickup'
    OCCUPIED = 'Occupied'
    TO_STATION = 'ToStation'
    QUEUED = 'QueuedAtStation'
    CHARGING = 'Charging'


ALLOWED_TRANSITIONS: Dict[Activity, Set[Activity]] = {
    Activity.AVAILABLE: {Activity.TO_PICKUP},
    Activity.TO_PICKUP: {Activity.OCCUPIED},
    Activity.OCCUPIED: {Activity.AVAILABLE, Activity.TO_STATION},
    Activity.TO_STATION: {Activity.QUEUED, Activity.CHARGING},
    Activity.QUEUED: {Activity.CHARGING},
    Activity.CHARGING: {Activity.AVAILABLE},
}


@dataclass
class Leg:
    """One Manhattan movement, x first then y, consuming ``distance_km`` of charge."""
    start_step: int
    end_step: int
    origin: PlanePoint
    target: PlanePoint
    distance_km: float
    soc_at_start: float

    def fraction(self, step: int) -> float:
        if self.end_step <= self.start_step or step >= self.end_step:
            return 1.0
        if step <= self.start_step:
            return 0.0
        return (step - self.start_step) / (self.end_step - self.start_step)

    def position_at(self, step: int) -> PlanePoint:
        f = self.fraction(step)
        dx = self.target.x - self.origin.x
        dy = self.target.y - self.origin.y
        path = abs(dx) + abs(dy)
        if path == 0 or f >= 1.0:
            return self.target if f >= 1.0 else self.origin
        covered = f * path
        if covered <= abs(dx):
            return PlanePoint(self.origin.x + covered * (1 if dx >= 0 else -1), self.origin.y)
        rest = covered - abs(dx)
        return PlanePoint(self.target.x, self.origin.y + rest * (1 if dy >= 0 else -1))

    def soc_at(self, step: int) -> float:
        return self.soc_at_start - self.fraction(step) * self.distance_km


@dataclass
class TaxiState:
    taxi_id: int
    location: PlanePoint
    soc: float
    battery_range: float
    region: int
    activity: Activity = Activity.AVAILABLE
    available_since: int = 0
    entered_at: int = 0
    income: float = 0.0
    assigned_trip: Optional[int] = None
    station_id: Optional[int] = None
    leg: Optional[Leg] = None
    trips_served: int = 0
    km_driven: float = 0.0
    charge_events: int = 0
    driver_income: List[float] = field(default_factory=lambda: [0.0, 0.0])

    def transition(self, new: Activity, now: int) -> None:
        if new not in ALLOWED_TRANSITIONS[self.activity]:
            raise InvariantViolation(
                f"taxi {self.taxi_id}: illegal transition {self.activity.value} -> {new.value}",
                {'taxi': self.to_dict(), 'step': now},
            )
        self.activity = new

    def start_leg(self, now: int, target: PlanePoint, distance_km: float, steps: int) -> Leg:
        self.leg = Leg(now, now + steps, self.location, target, distance_km, self.soc)
        return self.leg

    def finish_leg(self, now: int) -> Leg:
        """Move to the leg target and draw the leg distance from the battery."""
        leg = self.leg
        if leg is None:
            raise InvariantViolation(f"taxi {self.taxi_id}: no leg to finish", {'step': now})
        soc = self.soc - leg.distance_km
        if soc < -SOC_TOLERANCE_KM:
            raise InvariantViolation(
                f"taxi {self.taxi_id}: state of charge would drop to {soc:.6f} km",
                {'taxi': self.to_dict(), 'step': now},
            )
        self.soc = max(0.0, soc)
        self.km_driven += leg.distance_km
        self.location = leg.target
        self.leg = None
        return leg

    def position_at(self, step: int) -> PlanePoint:
        return self.leg.position_at(step) if self.leg else self.location

    def soc_at(self, step: int) -> float:
        return self.leg.soc_at(step) if self.leg else self.soc

    def empty_minutes(self, now: int, step_seconds: int) -> float:
        return max(0, now - self.available_since) * step_seconds / 60.0

    def operating_minutes(self, now: int, step_seconds: int) -> float:
        return max(0, now - self.entered_at) * step_seconds / 60.0

    def income_rate(self, now: int, step_seconds: int) -> float:
        """Income per operating minute; zero before any time has passed."""
        minutes = self.operating_minutes(now, step_seconds)
        return self.income / minutes if minutes > 0 else 0.0

    def credit(self, fare: float, driver: int = 0) -> None:
        if fare < 0:
            raise InvariantViolation(f"taxi {self.taxi_id}: negative fare {fare}", {})
        self.income += fare
        while len(self.driver_income) <= driver:
            self.driver_income.append(0.0)
        self.driver_income[driver] += fare

    def to_dict(self, step: Optional[int] = None) -> Dict[str, Any]:
        """Plain form; with ``step`` also the position and charge interpolated along the current leg."""
        data = {
            'taxi_id': self.taxi_id,
            'x': self.location.x,
            'y': self.location.y,
            'soc': self.soc,
            'battery_range': self.battery_range,
            'region': self.region,
            'activity': self.activity.value,
            'available_since': self.available_since,
            'income': self.income,
            'assigned_trip': self.assigned_trip,
            'station_id': self.station_id,
            'trips_served': self.trips_served,
            'km_driven': self.km_driven,
            'charge_events': self.charge_events,
        }
        if step is not None:
            position = self.position_at(step)
            data.update({'step': step, 'x_now': position.x, 'y_now': position.y,
                         'soc_now': self.soc_at(step)})
        return data


@dataclass(frozen=True)
class ShiftSchedule:
    """Drivers sharing a taxi in fixed consecutive shifts."""
    drivers_per_taxi: int = 2
    day_start_hour: float = 6.0
    shift_hours: float = 12.0

    @classmethod
    def from_config(cls, shift_cfg: Optional[Dict[str, Any]]) -> 'ShiftSchedule':
        if not shift_cfg:
            return cls()
        return cls(int(shift_cfg['drivers_per_taxi']), float(shift_cfg['day_start_hour']),
                   float(shift_cfg['shift_hours']))

    def driver_on_duty(self, hour_of_day: float) -> int:
        """Index of the driver at the wheel at ``hour_of_day`` (0 = first shift of the day)."""
        since_start = (hour_of_day - self.day_start_hour) % 24.0
        return int(since_start // self.shift_hours) % self.drivers_per_taxi


class Fleet:
    """
    All taxis plus an index of available taxis per sub-region
    """

    def __init__(self, taxis: List[TaxiState]):
        self.taxis = taxis
        self._available: Dict[int, Set[int]] = {}
        for taxi in taxis:
            if taxi.activity is Activity.AVAILABLE:
                self._available.setdefault(taxi.region, set()).add(taxi.taxi_id)

    def __len__(self) -> int:
        return len(self.taxis)

    def __iter__(self) -> Iterator[TaxiState]:
        return iter(self.taxis)

    def __getitem__(self, taxi_id: int) -> TaxiState:
        return self.taxis[taxi_id]

    def available_in(self, region: int) -> List[TaxiState]:
        """Available taxis in a sub-region, by taxi id."""
        return [self.taxis[i] for i in sorted(self._available.get(region, ()))]

    def count_available(self) -> int:
        return sum(len(ids) for ids in self._available.values())

    def mark_available(self, taxi: TaxiState, region: int, now: int) -> None:
        taxi.transition(Activity.AVAILABLE, now)
        taxi.region = region
        taxi.available_since = now
        taxi.assigned_trip = None
        taxi.station_id = None
        self._available.setdefault(region, set()).add(taxi.taxi_id)

    def withdraw(self, taxi: TaxiState) -> None:
        """Drop a taxi from the available index once it is assigned."""
        ids = self._available.get(taxi.region)
        if not ids or taxi.taxi_id not in ids:
            raise InvariantViolation(f"taxi {taxi.taxi_id} is not available in region {taxi.region}",
                                     {'taxi': taxi.to_dict()})
        ids.discard(taxi.taxi_id)

    def incomes(self) -> List[float]:
        return [t.income for t in self.taxis]

    def driver_incomes(self) -> List[float]:
        return [v for t in self.taxis for v in t.driver_income]
