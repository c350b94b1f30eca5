"""
Run-time checks of the simulator's guarantees.

Every check raises :class:`InvariantViolation` on the first breach; the
``counts`` dict records how many times each check ran so a run summary can
show that the checks were active.
"""
from typing import Any, Dict, Iterable, Optional

from loguru import logger

from app.core import InvariantViolation
from app.fleet import Activity, Fleet, TaxiState
from app.station import ACTIVE, ChargeSession, ChargingNetwork

SOC_TOLERANCE_KM = 1e-9

__all__ = ['InvariantChecker', 'InvariantViolation']


class InvariantChecker:
    """Checker for state-of-charge bounds, charger and trip conservation,
    FIFO order and single assignment."""

    def __init__(self, enabled: bool = True, full_sweep_every: int = 120):
        """
        Args:
            enabled: When False every check is a no-op
            full_sweep_every: Steps between full-fleet state-of-charge sweeps
        """
        self.enabled = enabled
        self.full_sweep_every = max(1, full_sweep_every)
        self.counts: Dict[str, int] = {
            'soc_bounds': 0,
            'charger_conservation': 0,
            'trip_conservation': 0,
            'fifo_order': 0,
            'single_assignment': 0,
            'strand_freedom': 0,
        }
        self._last_start: Dict[int, ChargeSession] = {}
        self._assigned_trips: Dict[int, int] = {}

    def _fail(self, message: str, state: Dict[str, Any]) -> None:
        logger.error("Invariant violated: {}", message)
        raise InvariantViolation(message, state)

    def check_taxi(self, taxi: TaxiState, now: int) -> None:
        if not self.enabled:
            return
        self.counts['soc_bounds'] += 1
        soc = taxi.soc_at(now)
        if soc < -SOC_TOLERANCE_KM or soc > taxi.battery_range + SOC_TOLERANCE_KM:
            self._fail(f"taxi {taxi.taxi_id}: state of charge {soc} outside [0, {taxi.battery_range}]",
                       {'step': now, 'taxi': taxi.to_dict()})

    def check_fleet(self, fleet: Fleet, now: int, force: bool = False) -> None:
        if not self.enabled or (not force and now % self.full_sweep_every):
            return
        for taxi in fleet:
            self.check_taxi(taxi, now)

    def check_stations(self, stations: ChargingNetwork, now: int) -> None:
        if not self.enabled:
            return
        for station in stations:
            self.counts['charger_conservation'] += 1
            occupied = len(station.active)
            if occupied + station.vacant != station.capacity or station.vacant < 0:
                self._fail(
                    f"station {station.station_id}: {occupied} occupied + {station.vacant} vacant "
                    f"!= capacity {station.capacity}",
                    {'step': now, 'station_id': station.station_id,
                     'active': [s.to_dict() for s in station.active.values()]},
                )

    def check_session_start(self, session: ChargeSession, now: int) -> None:
        """Sessions at one station must start in arrival order."""
        if not self.enabled:
            return
        self.counts['fifo_order'] += 1
        if session.state != ACTIVE or session.start_step != now:
            self._fail(f"taxi {session.taxi_id}: session started at {now}, scheduled {session.start_step}",
                       {'step': now, 'session': session.to_dict()})
        previous = self._last_start.get(session.station_id)
        if previous is not None and previous.arrival_step > session.arrival_step:
            self._fail(
                f"station {session.station_id}: taxi {session.taxi_id} (arrived {session.arrival_step}) "
                f"started after taxi {previous.taxi_id} (arrived {previous.arrival_step})",
                {'step': now, 'session': session.to_dict(), 'previous': previous.to_dict()},
            )
        self._last_start[session.station_id] = session

    def check_waiting_order(self, enqueue_steps: Iterable[int], now: int) -> None:
        if not self.enabled:
            return
        self.counts['fifo_order'] += 1
        steps = list(enqueue_steps)
        if any(a > b for a, b in zip(steps, steps[1:])):
            self._fail("waiting list out of FIFO order", {'step': now, 'enqueue_steps': steps})

    def check_assignment(self, taxi: TaxiState, trip_id: int, now: int) -> None:
        if not self.enabled:
            return
        self.counts['single_assignment'] += 1
        if taxi.activity is not Activity.AVAILABLE or taxi.assigned_trip is not None:
            self._fail(f"taxi {taxi.taxi_id} assigned trip {trip_id} while {taxi.activity.value}",
                       {'step': now, 'taxi': taxi.to_dict()})
        if trip_id in self._assigned_trips:
            self._fail(f"trip {trip_id} assigned twice (taxis {self._assigned_trips[trip_id]} "
                       f"and {taxi.taxi_id})", {'step': now, 'trip_id': trip_id})
        self._assigned_trips[trip_id] = taxi.taxi_id

    def check_routing(self, taxi: TaxiState, distance_km: float, now: int) -> None:
        """A taxi sent to a station must be able to get there."""
        if not self.enabled:
            return
        self.counts['strand_freedom'] += 1
        if taxi.soc + SOC_TOLERANCE_KM < distance_km:
            self._fail(f"taxi {taxi.taxi_id} routed to station {distance_km:.3f} km away "
                       f"with {taxi.soc:.3f} km of charge", {'step': now, 'taxi': taxi.to_dict()})

    def check_trip_totals(self, total: int, served: int, cancelled: int, residual: int,
                          now: Optional[int] = None) -> None:
        if not self.enabled:
            return
        self.counts['trip_conservation'] += 1
        if served + cancelled + residual != total:
            self._fail(f"trips not conserved: {served} served + {cancelled} cancelled + "
                       f"{residual} residual != {total}",
                       {'step': now, 'total': total, 'served': served, 'cancelled': cancelled,
                        'residual': residual})

    def summary(self) -> Dict[str, Any]:
        return {'enabled': self.enabled, 'checks': dict(self.counts)}
