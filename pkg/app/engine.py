"""
Time-stepped simulation of an electric taxi fleet.

Each step runs, in order: movement arrivals (pickups, drop-offs, station
arrivals), charge completions, the waiting list, new requests and the
per-step records.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from box import Box
from loguru import logger

from app.config import config_hash, load_config, resolve_path, total_steps, window_start
from app.core import (InvariantViolation, PlanePoint, Region, duration_to_steps,
                      project, rng_stream, travel_steps_empty)
from app.demand import (DemandProfile, FareSchedule, TripRequest, default_profile, density_factor,
                        load_trips, scale_density, synthesize, DENSITY_LEVELS)
from app.dispatch import (Candidate, Dispatcher, RideRequest, StrategyWeights,
                          WaitingList)
from app.fleet import Activity, Fleet, ShiftSchedule, TaxiState
from app.invariants import InvariantChecker
from app.metrics import (CANCELLED, RESIDUAL, SERVED, RunMetrics, compute_metrics, demand_curves,
                         lorenz, peak_valley_alignment)
from app.siting import Partition, StationSite, kmeans_sites, load_sites
from app.station import ACTIVE, ChargeSession, ChargingNetwork


@dataclass
class TripRecord:
    trip_id: int
    request_step: int
    origin_region: int
    status: str = RESIDUAL
    taxi_id: Optional[int] = None
    assign_step: Optional[int] = None
    pickup_step: Optional[int] = None
    dropoff_step: Optional[int] = None
    wait_min: Optional[float] = None
    escalated: bool = False
    cancel_step: Optional[int] = None


@dataclass
class RunOutput:
    """Everything a finished run produced."""
    config: Box
    config_hash: str
    seed: int
    metrics: RunMetrics
    trips: pd.DataFrame
    taxis: pd.DataFrame
    timeseries: pd.DataFrame
    curves: pd.DataFrame
    chart: pd.DataFrame
    sessions: pd.DataFrame
    lorenz: pd.DataFrame
    sites: List[StationSite]
    summary: Dict[str, Any] = field(default_factory=dict)
    dense_chart: Optional[np.ndarray] = None


def allocate_fleet(counts: Sequence[int], fleet_size: int) -> List[int]:
    """Split the fleet across sub-regions in proportion to demand.

    Largest-remainder rounding; equal remainders favour the lower region id.
    Without any demand the fleet is spread evenly.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.sum() <= 0:
        counts = np.ones_like(counts)
    quotas = fleet_size * counts / counts.sum()
    shares = np.floor(quotas).astype(int)
    remainders = quotas - shares
    order = sorted(range(len(counts)), key=lambda i: (-remainders[i], i))
    for i in order[:fleet_size - int(shares.sum())]:
        shares[i] += 1
    return [int(v) for v in shares]


def origin_points(trips: Sequence[TripRequest], region: Region) -> np.ndarray:
    """Projected trip origins as an (n, 2) array."""
    return np.array([(p.x, p.y) for p in (project(t.origin, region) for t in trips)],
                    dtype=float).reshape(-1, 2)


def site_stations(config: Box, origins: np.ndarray) -> List[StationSite]:
    """K-means station sites for the configured count, capacity and restarts."""
    return kmeans_sites(origins, int(config.stations.count), int(config.seed),
                        capacity=int(config.stations.capacity),
                        restarts=int(config.stations.kmeans_restarts),
                        sample_cap=int(config.stations.kmeans_sample_cap))


class Simulation:
    """
    One scenario: fleet, stations, dispatcher and the step loop
    """

    def __init__(self, config: Box, trips: Sequence[TripRequest],
                 sites: Optional[Sequence[StationSite]] = None):
        """
        Initialize the simulation state

        Args:
            config: Validated scenario configuration
            trips: Trips sorted by request time
            sites: Station sites; computed from trip origins when omitted
        """
        self.config = config
        self.seed = int(config.seed)
        self.region = Region.from_config(config.region)
        self.step_seconds = int(config.time.step_seconds)
        self.window_steps = total_steps(config)
        self.fare = FareSchedule.from_config(config.fare)
        self.shifts = ShiftSchedule.from_config(config.shift)
        start = window_start(config)
        self.start_hour = start.hour + start.minute / 60.0 + start.second / 3600.0

        dispatch_cfg = config.dispatch
        self.recharge_threshold = float(dispatch_cfg.recharge_threshold_km)
        self.empty_speed = float(dispatch_cfg.empty_speed_kmh)
        self.battery_range = float(config.fleet.battery_range_km)

        in_window = [t for t in trips if t.request_step(self.step_seconds) < self.window_steps]
        if len(in_window) < len(trips):
            logger.warning("{} trips request after the window end and are ignored",
                           len(trips) - len(in_window))
        self.trips = in_window

        origins = origin_points(self.trips, self.region)
        if sites is None:
            sites = site_stations(config, origins)
        self.sites = list(sites)
        self.partition = Partition(self.sites, int(config.stations.k_adjacent))
        self.stations = ChargingNetwork(
            self.sites,
            recharge_minutes=float(config.stations.recharge_minutes),
            step_seconds=self.step_seconds,
            soc_proportional=bool(config.stations.soc_proportional),
            busy_threshold=float(config.stations.busy_threshold),
        )

        self.requests = self._build_requests(origins)
        self.requests_by_step: Dict[int, List[RideRequest]] = defaultdict(list)
        for request in self.requests:
            self.requests_by_step[request.request_step].append(request)
        self.records: Dict[int, TripRecord] = {
            r.trip_id: TripRecord(r.trip_id, r.request_step, r.origin_region) for r in self.requests
        }

        self.fleet = self._place_fleet(origins)
        weights = StrategyWeights.from_config(dispatch_cfg, self.battery_range,
                                              float(config.stations.busy_threshold))
        self.dispatcher = Dispatcher(
            self.partition, self.fleet, self.stations, weights,
            step_seconds=self.step_seconds,
            recharge_threshold_km=self.recharge_threshold,
            waiting_threshold_min=float(dispatch_cfg.waiting_threshold_min),
            canceling_threshold_min=float(dispatch_cfg.canceling_threshold_min),
            seed=self.seed,
        )
        self.waiting = WaitingList()
        self.checker = InvariantChecker(bool(config.checks.invariants))

        self.now = 0
        self._arrivals: Dict[int, List[int]] = defaultdict(list)
        self._finishes: Dict[int, List[ChargeSession]] = defaultdict(list)
        self._sessions: Dict[int, ChargeSession] = {}
        self._requests_of_taxi: Dict[int, RideRequest] = {}
        self._in_service = 0
        self._series: Dict[str, List[int]] = {
            'requests': [], 'charge_arrivals': [], 'waiting': [], 'available': [],
            'charging': [], 'queued': [],
        }
        self._charge_arrivals_now = 0
        self._charge_arrival_steps: List[int] = []

    def _build_requests(self, origins: np.ndarray) -> List[RideRequest]:
        requests = []
        for trip, (ox, oy) in zip(self.trips, origins):
            origin = PlanePoint(float(ox), float(oy))
            destination = project(trip.destination, self.region)
            dest_region, dest_station_distance = self.partition.nearest_station_distance(destination)
            requests.append(RideRequest(
                trip=trip,
                origin=origin,
                destination=destination,
                origin_region=self.partition.locate(origin),
                dest_region=dest_region,
                dest_station_distance=dest_station_distance,
                request_step=trip.request_step(self.step_seconds),
                trip_steps=max(1, duration_to_steps(trip.duration_min * 60.0, self.step_seconds)),
            ))
        return requests

    def _place_fleet(self, origins: np.ndarray) -> Fleet:
        """Allocate taxis to sub-regions by early demand and scatter them inside each."""
        window_s = float(self.config.fleet.placement_window_min) * 60.0
        early = np.array([t.request_time_s < window_s for t in self.trips], dtype=bool)
        early_points = origins[early] if len(origins) else origins
        labels = self.partition.locate_many(early_points) if len(early_points) else np.empty(0, int)
        counts = np.bincount(labels, minlength=len(self.partition))
        shares = allocate_fleet(counts, int(self.config.fleet.size))

        rng = rng_stream(self.seed, 'placement')
        taxis: List[TaxiState] = []
        drivers = self.shifts.drivers_per_taxi
        for region, share in enumerate(shares):
            members = early_points[labels == region]
            if len(members):
                lo, hi = members.min(axis=0), members.max(axis=0)
            else:
                site = self.partition.station_location(region)
                lo = hi = np.array([site.x, site.y])
            for _ in range(share):
                x, y = rng.uniform(lo, hi)
                location = self.region.clamp_plane(float(x), float(y))
                taxis.append(TaxiState(
                    taxi_id=len(taxis),
                    location=location,
                    soc=self.battery_range,
                    battery_range=self.battery_range,
                    region=self.partition.locate(location),
                    driver_income=[0.0] * drivers,
                ))
        logger.debug("Placed {} taxis over {} sub-regions", len(taxis), len(shares))
        return Fleet(taxis)

    def _schedule(self, taxi: TaxiState, steps: int) -> bool:
        """Queue a leg arrival; True when the leg ends immediately."""
        if steps <= 0:
            return True
        self._arrivals[self.now + steps].append(taxi.taxi_id)
        return False

    def _driver_on_duty(self) -> int:
        hour = (self.start_hour + self.now * self.step_seconds / 3600.0) % 24.0
        return self.shifts.driver_on_duty(hour)

    def assign(self, request: RideRequest, taxi: TaxiState, candidate: Candidate, now: int) -> None:
        """Commit a dispatch decision and send the taxi to the pickup."""
        self.checker.check_assignment(taxi, request.trip_id, now)
        self.fleet.withdraw(taxi)
        taxi.transition(Activity.TO_PICKUP, now)
        taxi.assigned_trip = request.trip_id
        self._requests_of_taxi[taxi.taxi_id] = request
        self._in_service += 1

        record = self.records[request.trip_id]
        if record.status != RESIDUAL or record.taxi_id is not None:
            raise InvariantViolation(f"trip {request.trip_id} assigned after it was {record.status}",
                                     {'step': now, 'trip_id': request.trip_id})
        record.taxi_id = taxi.taxi_id
        record.assign_step = now

        steps = travel_steps_empty(candidate.pickup_distance, self.step_seconds, self.empty_speed)
        taxi.start_leg(now, request.origin, candidate.pickup_distance, steps)
        if self._schedule(taxi, steps):
            self._pickup(taxi)

    def _pickup(self, taxi: TaxiState) -> None:
        taxi.finish_leg(self.now)
        taxi.transition(Activity.OCCUPIED, self.now)
        request = self._requests_of_taxi[taxi.taxi_id]
        record = self.records[request.trip_id]
        record.status = SERVED
        record.pickup_step = self.now
        record.wait_min = (self.now - request.request_step) * self.step_seconds / 60.0
        taxi.start_leg(self.now, request.destination, request.trip.distance_km, request.trip_steps)
        self._schedule(taxi, request.trip_steps)

    def _dropoff(self, taxi: TaxiState) -> None:
        taxi.finish_leg(self.now)
        request = self._requests_of_taxi.pop(taxi.taxi_id)
        self._in_service -= 1
        self.records[request.trip_id].dropoff_step = self.now
        taxi.credit(request.trip.fare, self._driver_on_duty())
        taxi.trips_served += 1
        self.checker.check_taxi(taxi, self.now)

        region = request.dest_region
        if taxi.soc < self.recharge_threshold:
            distance = request.dest_station_distance
            self.checker.check_routing(taxi, distance, self.now)
            taxi.transition(Activity.TO_STATION, self.now)
            taxi.assigned_trip = None
            taxi.station_id = region
            steps = travel_steps_empty(distance, self.step_seconds, self.empty_speed)
            taxi.start_leg(self.now, self.partition.station_location(region), distance, steps)
            if self._schedule(taxi, steps):
                self._station_arrival(taxi)
        else:
            self.fleet.mark_available(taxi, region, self.now)

    def _station_arrival(self, taxi: TaxiState) -> None:
        taxi.finish_leg(self.now)
        self.checker.check_taxi(taxi, self.now)
        session = self.stations.arrive(taxi.station_id, taxi.taxi_id, self.now, taxi.soc,
                                       taxi.battery_range)
        self._sessions[taxi.taxi_id] = session
        taxi.charge_events += 1
        self._charge_arrivals_now += 1
        self._charge_arrival_steps.append(self.now)
        if session.state == ACTIVE:
            self._start_charging(taxi, session)
        else:
            taxi.transition(Activity.QUEUED, self.now)

    def _start_charging(self, taxi: TaxiState, session: ChargeSession) -> None:
        taxi.transition(Activity.CHARGING, self.now)
        self.checker.check_session_start(session, self.now)
        self._finishes[session.finish_step].append(session)

    def _finish_charge(self, session: ChargeSession) -> None:
        started = self.stations.release(session, self.now)
        taxi = self.fleet[session.taxi_id]
        del self._sessions[taxi.taxi_id]
        taxi.soc = taxi.battery_range
        self.fleet.mark_available(taxi, session.station_id, self.now)
        if started is not None:
            self._start_charging(self.fleet[started.taxi_id], started)

    def step(self, accept_requests: bool = True) -> None:
        """Advance the simulation by one step."""
        now = self.now
        self._charge_arrivals_now = 0

        for taxi_id in sorted(self._arrivals.pop(now, [])):
            taxi = self.fleet[taxi_id]
            if taxi.activity is Activity.TO_PICKUP:
                self._pickup(taxi)
            elif taxi.activity is Activity.OCCUPIED:
                self._dropoff(taxi)
            elif taxi.activity is Activity.TO_STATION:
                self._station_arrival(taxi)
            else:
                raise InvariantViolation(f"taxi {taxi_id} arrived while {taxi.activity.value}",
                                         {'step': now, 'taxi': taxi.to_dict()})

        for session in self._finishes.pop(now, []):
            self._finish_charge(session)

        new_requests = self.requests_by_step.get(now, []) if accept_requests else []
        if accept_requests:
            self.checker.check_waiting_order((e.enqueue_step for e in self.waiting), now)
            assignments, cancellations = self.dispatcher.process_waiting(self.waiting, now, self.assign)
            for assignment in assignments:
                self.records[assignment.request.trip_id].escalated = assignment.escalated
            for cancellation in cancellations:
                record = self.records[cancellation.request.trip_id]
                record.status = CANCELLED
                record.cancel_step = now
                record.escalated = cancellation.escalated

            for request in new_requests:
                if self.dispatcher.dispatch_new(request, now, self.assign) is None:
                    self.waiting.push(request, now)

        self.checker.check_stations(self.stations, now)
        self.checker.check_fleet(self.fleet, now)
        self._record(len(new_requests))
        self.now += 1

    def _record(self, n_requests: int) -> None:
        series = self._series
        series['requests'].append(n_requests)
        series['charge_arrivals'].append(self._charge_arrivals_now)
        series['waiting'].append(len(self.waiting))
        series['available'].append(self.fleet.count_available())
        series['charging'].append(sum(s.occupied for s in self.stations))
        series['queued'].append(sum(len(s.queue) for s in self.stations))

    def run(self) -> RunOutput:
        """
        Step through the window, then let in-flight trips finish

        Returns:
            RunOutput with metrics, ledgers and time series
        """
        steps_per_day = max(1, int(86400 // self.step_seconds))
        while self.now < self.window_steps:
            self.step()
            if self.now % steps_per_day == 0:
                logger.debug("Day {} done: {} waiting, {} available", self.now // steps_per_day,
                             len(self.waiting), self.fleet.count_available())

        residual = self.waiting.drain()
        for entry in residual:
            self.records[entry.request.trip_id].escalated = entry.escalated

        while self._in_service > 0:
            self.step(accept_requests=False)

        self.checker.check_fleet(self.fleet, self.now, force=True)
        return self._output()

    def trip_frame(self) -> pd.DataFrame:
        columns = ['trip_id', 'request_step', 'origin_region', 'status', 'taxi_id', 'assign_step',
                   'pickup_step', 'dropoff_step', 'wait_min', 'escalated', 'cancel_step']
        rows = [[getattr(r, c) for c in columns] for r in self.records.values()]
        frame = pd.DataFrame(rows, columns=columns)
        for column in ('taxi_id', 'assign_step', 'pickup_step', 'dropoff_step', 'cancel_step'):
            frame[column] = frame[column].astype('Int64')
        return frame.sort_values('trip_id').reset_index(drop=True)

    def taxi_frame(self) -> pd.DataFrame:
        rows = []
        for taxi in self.fleet:
            row = {
                'taxi_id': taxi.taxi_id,
                'income': taxi.income,
                'trips_served': taxi.trips_served,
                'km_driven': taxi.km_driven,
                'charge_events': taxi.charge_events,
                'final_soc': taxi.soc,
                'final_activity': taxi.activity.value,
            }
            for i, value in enumerate(taxi.driver_income):
                row[f'income_driver_{i}'] = value
            rows.append(row)
        return pd.DataFrame(rows)

    def timeseries_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self._series)
        frame.insert(0, 'step', np.arange(len(frame)))
        frame.insert(1, 'minute', frame['step'] * self.step_seconds / 60.0)
        return frame

    def _output(self) -> RunOutput:
        trips = self.trip_frame()
        served = int((trips['status'] == SERVED).sum())
        cancelled = int((trips['status'] == CANCELLED).sum())
        residual = int((trips['status'] == RESIDUAL).sum())
        self.checker.check_trip_totals(len(trips), served, cancelled, residual, self.now)

        bin_minutes = float(self.config.output.bin_minutes)
        step_minutes = self.step_seconds / 60.0
        curves = demand_curves(
            [r.request_step * step_minutes for r in self.requests],
            [s * step_minutes for s in self._charge_arrival_steps],
            bin_minutes,
            horizon_min=self.window_steps * step_minutes,
        )
        sessions = self.stations.sessions()
        incomes = self.fleet.incomes()
        metrics = compute_metrics(trips, incomes, self.fleet.driver_incomes(), curves, len(sessions),
                                  int(self.config.output.smoothing_window))
        alignment = peak_valley_alignment(curves, window=int(self.config.output.smoothing_window))
        metrics.extra['peaks_aligned'] = sum(1 for a in alignment if a['aligned'])
        metrics.extra['customer_peaks'] = len(alignment)

        chart_mode = self.config.output.chart
        run_hash = config_hash(self.config)
        summary = {
            'config_hash': run_hash,
            'seed': self.seed,
            'steps_simulated': self.now,
            'window_steps': self.window_steps,
            'fleet_size': len(self.fleet),
            'stations': len(self.stations),
            'metrics': metrics.to_dict(),
            'invariants': self.checker.summary(),
        }
        logger.info("Run {}-s{}: fill rate {:.4f}, mean wait {:.2f} min, Gini {:.4f}", run_hash,
                    self.seed, metrics.fill_rate, metrics.avg_wait, metrics.gini)
        return RunOutput(
            config=self.config,
            config_hash=run_hash,
            seed=self.seed,
            metrics=metrics,
            trips=trips,
            taxis=self.taxi_frame(),
            timeseries=self.timeseries_frame(),
            curves=curves,
            chart=self.stations.chart_frame(),
            sessions=pd.DataFrame([s.to_dict() for s in sessions],
                                  columns=['taxi_id', 'station_id', 'arrival_step', 'start_step',
                                           'finish_step', 'state']),
            lorenz=lorenz(incomes) if incomes else lorenz([0.0]),
            sites=self.sites,
            summary=summary,
            dense_chart=self.stations.dense_chart(self.now) if chart_mode == 'dense' else None,
        )

    def state_dump(self) -> Dict[str, Any]:
        """Snapshot used for diagnostics when a run aborts."""
        return {
            'step': self.now,
            'waiting': [e.request.trip_id for e in self.waiting],
            'taxis': [t.to_dict(self.now) for t in self.fleet],
            'stations': [
                {'station_id': s.station_id, 'vacant': s.vacant, 'capacity': s.capacity,
                 'queue': [q.to_dict() for q in s.queue]}
                for s in self.stations
            ],
        }


def prepare_trips(config: Box) -> List[TripRequest]:
    """Load or synthesize the scenario's trips and apply the density setting."""
    region = Region.from_config(config.region)
    demand_cfg = config.demand
    step_seconds = int(config.time.step_seconds)
    if demand_cfg.trips:
        trips = load_trips(resolve_path(config, demand_cfg.trips), region)
        factor = density_factor(demand_cfg.density)
        if factor != 1.0:
            trips = scale_density(trips, factor, int(config.seed), step_seconds)
        return trips

    if demand_cfg.profile in ('', 'default'):
        profile = default_profile(DENSITY_LEVELS['middle'] * float(demand_cfg.desk_scale))
    else:
        profile = DemandProfile.load(resolve_path(config, demand_cfg.profile))
    profile = profile.with_weekly_total(profile.weekly_total * density_factor(demand_cfg.density))
    window = (0.0, total_steps(config) * step_seconds)
    return synthesize(profile, window, int(config.seed), region, FareSchedule.from_config(config.fare))


def prepare_sites(config: Box, trips: Sequence[TripRequest]) -> Optional[List[StationSite]]:
    """Sites from the configured sites file, or None to site by K-means."""
    if not config.stations.sites:
        return None
    path = resolve_path(config, config.stations.sites)
    region = Region.from_config(config.region)
    capacity = int(config.stations.capacity)
    # config capacity overrides the file column unless capacity_from_sites is set
    if config.stations.capacity_from_sites:
        return load_sites(path, region, default_capacity=capacity)
    return load_sites(path, region, capacity)


def run(config: Any, trips: Optional[Sequence[TripRequest]] = None,
        sites: Optional[Sequence[StationSite]] = None) -> RunOutput:
    """
    Run one scenario end to end

    Args:
        config: Config dict, Box, JSON string or path
        trips: Trips to use instead of the configured demand source
        sites: Sites to use instead of the configured sites

    Returns:
        RunOutput of the finished run
    """
    cfg = config if isinstance(config, Box) else load_config(config)
    if trips is None:
        trips = prepare_trips(cfg)
    if sites is None:
        sites = prepare_sites(cfg, trips)
    simulation = Simulation(cfg, trips, sites)
    try:
        return simulation.run()
    except InvariantViolation as e:
        e.state.setdefault('simulation', simulation.state_dump())
        raise
