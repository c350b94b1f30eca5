"""
Dispatching: reachability screening, candidate grading, selection and the
FIFO waiting list with escalation and cancellation.
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from app.core import InvariantViolation, PlanePoint, manhattan, rng_stream
from app.demand import TripRequest
from app.fleet import Fleet, TaxiState
from app.siting import Partition
from app.station import ChargingNetwork

# (w1 pickup distance, w2 empty time, w3 income rate, w4 state of charge)
STRATEGIES: Dict[int, Tuple[float, float, float, float]] = {
    1: (1, 0, 0, 0),
    2: (0, 1, 0, 0),
    3: (0, 0, 1, 0),
    4: (0, 0, 0, 1),
    5: (1, 1, 0, 0),
    6: (1, 0, 1, 0),
    7: (1, 0, 0, 1),
    8: (0, 1, 1, 0),
    9: (0, 1, 0, 1),
    10: (0, 0, 1, 1),
    11: (1, 1, 1, 0),
    12: (1, 1, 0, 1),
    13: (1, 0, 1, 1),
    14: (0, 1, 1, 1),
    15: (1, 1, 1, 1),
    16: (0, 0, 0, 0),
}

RANDOM_STRATEGY = 16


@dataclass(frozen=True)
class StrategyWeights:
    w: Tuple[float, float, float, float]
    q: Tuple[float, float, float, float] = (0.2, 1 / 30, 0.6, 1 / 200)
    busy_threshold: float = 0.5

    def __post_init__(self):
        if len(self.w) != 4 or len(self.q) != 4:
            raise ValueError("strategy needs four weights and four scaling constants")
        if min(self.w) < 0:
            raise ValueError(f"weights must be non-negative: {self.w}")
        if min(self.q) <= 0:
            raise ValueError(f"scaling constants must be positive: {self.q}")
        if not 0 < self.busy_threshold <= 1:
            raise ValueError(f"busy threshold must lie in (0, 1]: {self.busy_threshold}")

    @property
    def is_random(self) -> bool:
        return not any(self.w)

    @classmethod
    def from_index(cls, index: int, q: Tuple[float, float, float, float] = (0.2, 1 / 30, 0.6, 1 / 200),
                   busy_threshold: float = 0.5) -> 'StrategyWeights':
        if index not in STRATEGIES:
            raise ValueError(f"strategy index must be 1..16, got {index}")
        return cls(tuple(float(v) for v in STRATEGIES[index]), q, busy_threshold)

    @classmethod
    def from_config(cls, dispatch_cfg: Dict[str, Any], battery_range: float,
                    busy_threshold: float = 0.5) -> 'StrategyWeights':
        """Build weights from the ``[dispatch]`` section; explicit ``weights`` beat ``strategy``."""
        q_soc = float(dispatch_cfg.get('q_soc') or 0.0) or 1.0 / battery_range
        q = (float(dispatch_cfg['q_distance']), float(dispatch_cfg['q_empty_time']),
             float(dispatch_cfg['q_income_rate']), q_soc)
        weights = dispatch_cfg.get('weights') or []
        if weights:
            return cls(tuple(float(v) for v in weights), q, busy_threshold)
        return cls.from_index(int(dispatch_cfg['strategy']), q, busy_threshold)

    def scaled(self, factor: float) -> 'StrategyWeights':
        return StrategyWeights(self.w, tuple(v * factor for v in self.q), self.busy_threshold)


@dataclass(frozen=True)
class Candidate:
    taxi_id: int
    pickup_distance: float
    empty_time: float
    income: float
    operating_time: float
    soc: float

    @property
    def income_rate(self) -> float:
        return self.income / self.operating_time if self.operating_time > 0 else 0.0


@dataclass(frozen=True)
class RideRequest:
    """A trip together with everything dispatch needs to know about it."""
    trip: TripRequest
    origin: PlanePoint
    destination: PlanePoint
    origin_region: int
    dest_region: int
    dest_station_distance: float
    request_step: int
    trip_steps: int

    @property
    def trip_id(self) -> int:
        return self.trip.trip_id


@dataclass
class WaitingEntry:
    request: RideRequest
    enqueue_step: int
    origin_region: int
    escalated: bool = False


@dataclass
class Assignment:
    request: RideRequest
    taxi_id: int
    step: int
    region: int
    escalated: bool
    candidate: Candidate


@dataclass
class Cancellation:
    request: RideRequest
    step: int
    escalated: bool


def reachable(soc: float, pickup_distance: float, trip_distance: float,
              dest_station_distance: float, recharge_threshold: float) -> bool:
    """Battery screen for a candidate.

    The taxi must finish pickup and trip with charge left, and when it would
    then be at or below the recharge threshold it must still reach the
    station nearest the destination.

    Args:
        soc: Current state of charge (km)
        pickup_distance: Distance to the trip origin (km)
        trip_distance: Trip distance (km)
        dest_station_distance: Distance from the trip destination to its nearest station (km)
        recharge_threshold: Recharge threshold (km)

    Returns:
        True when the taxi passes both checks
    """
    remaining = soc - pickup_distance - trip_distance
    if remaining < 0:
        return False
    if remaining <= recharge_threshold:
        return remaining - dest_station_distance >= 0
    return True


def score(candidate: Candidate, dest_station_busy: bool, weights: StrategyWeights) -> float:
    """Grade a reachable candidate.

    A busy destination station rewards high state of charge, a quiet one rewards low.
    """
    w1, w2, w3, w4 = weights.w
    q1, q2, q3, q4 = weights.q
    soc_term = w4 * q4 * candidate.soc
    return (-w1 * q1 * candidate.pickup_distance
            + w2 * q2 * candidate.empty_time
            - w3 * q3 * candidate.income_rate
            + (soc_term if dest_station_busy else -soc_term))


class WaitingList:
    """
    FIFO list of unserved requests
    """

    def __init__(self):
        self.entries: List[WaitingEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def push(self, request: RideRequest, now: int) -> WaitingEntry:
        if self.entries and self.entries[-1].enqueue_step > now:
            raise InvariantViolation("waiting list out of FIFO order",
                                     {'last': self.entries[-1].enqueue_step, 'now': now})
        entry = WaitingEntry(request, now, request.origin_region)
        self.entries.append(entry)
        return entry

    def drain(self) -> List[WaitingEntry]:
        """Remove and return every remaining entry."""
        entries, self.entries = self.entries, []
        return entries


AssignFn = Callable[[RideRequest, TaxiState, Candidate, int], None]


class Dispatcher:
    """
    Matches ride requests to available taxis
    """

    def __init__(self, partition: Partition, fleet: Fleet, stations: ChargingNetwork,
                 weights: StrategyWeights, step_seconds: int = 30,
                 recharge_threshold_km: float = 20.0, waiting_threshold_min: float = 3.0,
                 canceling_threshold_min: float = 15.0, seed: int = 0):
        """
        Initialize the dispatcher

        Args:
            partition: Station sub-regions and adjacency
            fleet: Taxi fleet
            stations: Charging stations, for the busy-station test
            weights: Strategy weights and scaling constants
            step_seconds: Step length
            recharge_threshold_km: Recharge threshold used by the battery screen
            waiting_threshold_min: Waiting time after which adjacent regions are searched
            canceling_threshold_min: Waiting time at which a request is declined
            seed: Scenario seed (random strategy only)
        """
        self.partition = partition
        self.fleet = fleet
        self.stations = stations
        self.weights = weights
        self.step_seconds = step_seconds
        self.recharge_threshold_km = recharge_threshold_km
        self.waiting_threshold_s = waiting_threshold_min * 60.0
        self.canceling_threshold_s = canceling_threshold_min * 60.0
        self.rng = rng_stream(seed, 'dispatch')

    def candidate(self, taxi: TaxiState, request: RideRequest, now: int) -> Candidate:
        return Candidate(
            taxi_id=taxi.taxi_id,
            pickup_distance=manhattan(taxi.location, request.origin),
            empty_time=taxi.empty_minutes(now, self.step_seconds),
            income=taxi.income,
            operating_time=taxi.operating_minutes(now, self.step_seconds),
            soc=taxi.soc,
        )

    def candidates(self, request: RideRequest, region: int, now: int) -> List[Candidate]:
        """Reachable candidates among the available taxis of ``region``."""
        found = []
        for taxi in self.fleet.available_in(region):
            c = self.candidate(taxi, request, now)
            if reachable(c.soc, c.pickup_distance, request.trip.distance_km,
                         request.dest_station_distance, self.recharge_threshold_km):
                found.append(c)
        return found

    def select(self, request: RideRequest, region: int, now: int) -> Optional[Candidate]:
        """
        Pick the best reachable taxi in one sub-region

        Args:
            request: The ride request
            region: Sub-region to search
            now: Current step

        Returns:
            The chosen candidate, or None when no taxi there passes the battery screen
        """
        found = self.candidates(request, region, now)
        if not found:
            return None
        busy = self.stations.is_busy(request.dest_region)
        scores = np.array([score(c, busy, self.weights) for c in found])
        best = np.flatnonzero(scores == scores.max())
        if self.weights.is_random and len(best) > 1:
            chosen = found[int(best[self.rng.integers(len(best))])]
        else:
            chosen = found[int(best[0])]

        if not reachable(chosen.soc, chosen.pickup_distance, request.trip.distance_km,
                         request.dest_station_distance, self.recharge_threshold_km):
            raise InvariantViolation(f"taxi {chosen.taxi_id} selected without passing the battery screen",
                                     {'trip_id': request.trip_id, 'step': now})
        return chosen

    def dispatch_new(self, request: RideRequest, now: int, assign: AssignFn) -> Optional[Assignment]:
        """Try a new request in its own sub-region."""
        chosen = self.select(request, request.origin_region, now)
        if chosen is None:
            return None
        assign(request, self.fleet[chosen.taxi_id], chosen, now)
        return Assignment(request, chosen.taxi_id, now, request.origin_region, False, chosen)

    def process_waiting(self, waiting: WaitingList, now: int,
                        assign: AssignFn) -> Tuple[List[Assignment], List[Cancellation]]:
        """
        Retry waiting requests in FIFO order

        A request is declined once it has waited the canceling threshold; once it
        has waited longer than the waiting threshold the adjacent sub-regions are
        searched nearest first after its own.

        Args:
            waiting: The waiting list (modified in place)
            now: Current step
            assign: Callback that commits an assignment

        Returns:
            Assignments and cancellations made in this pass
        """
        assignments: List[Assignment] = []
        cancellations: List[Cancellation] = []
        keep: List[WaitingEntry] = []

        for entry in waiting.entries:
            request = entry.request
            elapsed_s = (now - request.request_step) * self.step_seconds
            if elapsed_s >= self.canceling_threshold_s:
                cancellations.append(Cancellation(request, now, entry.escalated))
                continue

            regions = [entry.origin_region]
            if elapsed_s > self.waiting_threshold_s:
                entry.escalated = True
                regions += self.partition.adjacency[entry.origin_region]

            chosen, region = None, None
            for region in regions:
                chosen = self.select(request, region, now)
                if chosen is not None:
                    break
            if chosen is None:
                keep.append(entry)
                continue
            assign(request, self.fleet[chosen.taxi_id], chosen, now)
            from_neighbour = region != entry.origin_region
            assignments.append(Assignment(request, chosen.taxi_id, now, region, from_neighbour, chosen))

        waiting.entries = keep
        if cancellations:
            logger.trace("step {}: {} requests declined", now, len(cancellations))
        return assignments, cancellations
