"""
Charging stations: chargers, the FIFO charger queue and the station operations chart.
"""
import bisect
import heapq
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core import InvariantViolation, PlanePoint, duration_to_steps
from app.siting import StationSite

QUEUED = 'queued'
ACTIVE = 'active'
DONE = 'done'


@dataclass
class ChargeSession:
    taxi_id: int
    station_id: int
    arrival_step: int
    start_step: int
    finish_step: int
    state: str = QUEUED

    def to_dict(self) -> Dict[str, Any]:
        return {
            'taxi_id': self.taxi_id,
            'station_id': self.station_id,
            'arrival_step': self.arrival_step,
            'start_step': self.start_step,
            'finish_step': self.finish_step,
            'state': self.state,
        }


class ChargingStation:
    """
    One station's chargers, its FIFO queue and its operations chart

    The chart is kept as change points ``(step, vacant)``; a step with no
    entry holds the vacant count of the latest earlier change point.
    """

    def __init__(self, site: StationSite):
        self.station_id = site.station_id
        self.location: PlanePoint = site.location
        self.capacity = site.capacity
        self.vacant = site.capacity
        self.queue: Deque[ChargeSession] = deque()
        self.active: Dict[int, ChargeSession] = {}
        self.sessions: List[ChargeSession] = []
        # step at which each charger is next free, counting already scheduled sessions
        self._free_at: List[int] = [0] * site.capacity
        self._chart_steps: List[int] = [0]
        self._chart_vacant: List[int] = [site.capacity]

    def arrive(self, taxi_id: int, now: int, duration_steps: int) -> ChargeSession:
        """
        Seize a charger or join the queue

        Args:
            taxi_id: Arriving taxi
            now: Current step
            duration_steps: Charging duration in steps (at least 1)

        Returns:
            The session; ``state`` is ``active`` when charging starts now
        """
        if duration_steps < 1:
            raise ValueError("charge duration must be at least one step")
        start = max(now, heapq.heappop(self._free_at))
        finish = start + duration_steps
        heapq.heappush(self._free_at, finish)
        session = ChargeSession(taxi_id, self.station_id, now, start, finish)
        self.sessions.append(session)
        if start == now and self.vacant > 0:
            self._activate(session, now)
        else:
            self.queue.append(session)
        return session

    def release(self, session: ChargeSession, now: int) -> Optional[ChargeSession]:
        """
        Free the charger of a finished session

        Args:
            session: Session finishing now
            now: Current step

        Returns:
            The queued session that took over the charger, if any
        """
        if session.state != ACTIVE or self.active.get(session.taxi_id) is not session:
            raise InvariantViolation(
                f"station {self.station_id}: release of a session that is not charging",
                session.to_dict(),
            )
        if now != session.finish_step:
            raise InvariantViolation(
                f"station {self.station_id}: release at {now}, session finishes at {session.finish_step}",
                session.to_dict(),
            )
        session.state = DONE
        del self.active[session.taxi_id]
        self._set_vacant(self.vacant + 1, now)

        if self.queue and self.queue[0].start_step == now:
            head = self.queue.popleft()
            self._activate(head, now)
            return head
        return None

    def _activate(self, session: ChargeSession, now: int) -> None:
        session.state = ACTIVE
        self.active[session.taxi_id] = session
        self._set_vacant(self.vacant - 1, now)

    def _set_vacant(self, vacant: int, now: int) -> None:
        if not 0 <= vacant <= self.capacity:
            raise InvariantViolation(
                f"station {self.station_id}: vacant chargers {vacant} outside [0, {self.capacity}]",
                {'station_id': self.station_id, 'step': now, 'vacant': vacant},
            )
        self.vacant = vacant
        if self._chart_steps[-1] == now:
            self._chart_vacant[-1] = vacant
        else:
            self._chart_steps.append(now)
            self._chart_vacant.append(vacant)

    @property
    def occupied(self) -> int:
        return self.capacity - self.vacant

    def utilization(self, now: Optional[int] = None) -> float:
        """Occupied chargers over capacity; queued taxis do not count."""
        vacant = self.vacant if now is None else self.vacant_at(now)
        return (self.capacity - vacant) / self.capacity

    def is_busy(self, threshold: float = 0.5, now: Optional[int] = None) -> bool:
        return self.utilization(now) >= threshold

    def vacant_at(self, step: int) -> int:
        i = bisect.bisect_right(self._chart_steps, step) - 1
        return self._chart_vacant[max(i, 0)]

    def change_points(self) -> List[Tuple[int, int]]:
        return list(zip(self._chart_steps, self._chart_vacant))


class ChargingNetwork:
    """
    All stations of a scenario plus the charging-duration rule
    """

    def __init__(self, sites: Sequence[StationSite], recharge_minutes: float = 30.0,
                 step_seconds: int = 30, soc_proportional: bool = False,
                 busy_threshold: float = 0.5):
        self.stations = [ChargingStation(site) for site in sites]
        self.recharge_minutes = recharge_minutes
        self.step_seconds = step_seconds
        self.soc_proportional = soc_proportional
        self.busy_threshold = busy_threshold
        self.full_charge_steps = duration_to_steps(recharge_minutes * 60.0, step_seconds)

    def __len__(self) -> int:
        return len(self.stations)

    def __getitem__(self, station_id: int) -> ChargingStation:
        return self.stations[station_id]

    def __iter__(self) -> Iterator[ChargingStation]:
        return iter(self.stations)

    def charge_steps(self, soc: float, battery_range: float) -> int:
        """Charging duration in steps for a taxi arriving with ``soc`` km left."""
        if not self.soc_proportional:
            return self.full_charge_steps
        missing = max(0.0, 1.0 - soc / battery_range)
        return max(1, duration_to_steps(self.recharge_minutes * missing * 60.0, self.step_seconds))

    def arrive(self, station_id: int, taxi_id: int, now: int, soc: float,
               battery_range: float) -> ChargeSession:
        return self.stations[station_id].arrive(taxi_id, now, self.charge_steps(soc, battery_range))

    def release(self, session: ChargeSession, now: int) -> Optional[ChargeSession]:
        return self.stations[session.station_id].release(session, now)

    def utilization(self, station_id: int, now: Optional[int] = None) -> float:
        return self.stations[station_id].utilization(now)

    def is_busy(self, station_id: int) -> bool:
        return self.stations[station_id].is_busy(self.busy_threshold)

    def sessions(self) -> List[ChargeSession]:
        return [s for station in self.stations for s in station.sessions]

    def chart_frame(self) -> pd.DataFrame:
        """Sparse operations chart: one row per change point."""
        rows = [(step, station.station_id, vacant)
                for station in self.stations for step, vacant in station.change_points()]
        frame = pd.DataFrame(rows, columns=['step', 'station_id', 'vacant'])
        return frame.sort_values(['step', 'station_id'], kind='mergesort').reset_index(drop=True)

    def dense_chart(self, total_steps: int) -> np.ndarray:
        """Vacant chargers per step (rows) and station (columns)."""
        chart = np.empty((total_steps, len(self.stations)), dtype=np.int32)
        for station in self.stations:
            points = station.change_points()
            for i, (step, vacant) in enumerate(points):
                end = points[i + 1][0] if i + 1 < len(points) else total_steps
                if step < total_steps:
                    chart[step:min(end, total_steps), station.station_id] = vacant
        return chart
