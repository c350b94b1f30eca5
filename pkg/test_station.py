"""Tests for app/station.py: chargers, the FIFO queue and the operations chart."""

from __future__ import annotations

import numpy as np
import pytest

from app.core import InvariantViolation, PlanePoint
from app.siting import StationSite
from app.station import ACTIVE, DONE, QUEUED, ChargingNetwork, ChargingStation


def station(capacity: int) -> ChargingStation:
    return ChargingStation(StationSite(0, PlanePoint(10.0, 10.0), capacity))


class TestQueue:

    def test_third_taxi_waits_for_a_charger(self):
        s = station(2)
        a = s.arrive(0, 0, 60)
        b = s.arrive(1, 0, 60)
        c = s.arrive(2, 0, 60)
        assert [x.start_step for x in (a, b, c)] == [0, 0, 60]
        assert (a.state, b.state, c.state) == (ACTIVE, ACTIVE, QUEUED)
        assert s.vacant == 0
        assert list(s.queue) == [c]

    def test_release_hands_charger_to_queue_head(self):
        s = station(2)
        a = s.arrive(0, 0, 60)
        b = s.arrive(1, 0, 60)
        c = s.arrive(2, 0, 60)
        assert s.release(a, 60) is c
        assert c.state == ACTIVE
        assert a.state == DONE
        assert s.vacant == 0
        assert s.release(b, 60) is None
        assert s.vacant == 1

    def test_later_arrival_starts_when_charger_frees(self):
        s = station(1)
        first = s.arrive(0, 0, 60)
        second = s.arrive(1, 20, 60)
        assert second.start_step == 60
        assert second.finish_step == 120
        assert s.release(first, 60) is second

    def test_fifo_start_order(self):
        s = station(1)
        sessions = [s.arrive(i, i, 10) for i in range(5)]
        starts = [x.start_step for x in sessions]
        assert starts == sorted(starts)
        assert starts == [0, 10, 20, 30, 40]

    def test_release_at_wrong_step(self):
        s = station(1)
        session = s.arrive(0, 0, 60)
        with pytest.raises(InvariantViolation):
            s.release(session, 59)

    def test_release_of_queued_session(self):
        s = station(1)
        s.arrive(0, 0, 60)
        queued = s.arrive(1, 0, 60)
        with pytest.raises(InvariantViolation):
            s.release(queued, 120)

    def test_zero_duration_rejected(self):
        with pytest.raises(ValueError):
            station(1).arrive(0, 0, 0)


class TestUtilization:

    def test_half_occupied_is_busy(self):
        s = station(2)
        s.arrive(0, 0, 60)
        assert s.utilization() == 0.5
        assert s.is_busy(0.5)
        assert not s.is_busy(0.75)

    def test_queue_does_not_count(self):
        s = station(1)
        s.arrive(0, 0, 60)
        s.arrive(1, 0, 60)
        assert s.utilization() == 1.0

    def test_vacant_history(self):
        s = station(2)
        a = s.arrive(0, 5, 10)
        s.release(a, 15)
        assert s.vacant_at(0) == 2
        assert s.vacant_at(5) == 1
        assert s.vacant_at(14) == 1
        assert s.vacant_at(15) == 2
        assert s.change_points() == [(0, 2), (5, 1), (15, 2)]


class TestNetwork:

    @pytest.fixture
    def network(self):
        sites = [StationSite(0, PlanePoint(0, 0), 2), StationSite(1, PlanePoint(10, 0), 1)]
        return ChargingNetwork(sites, recharge_minutes=30.0, step_seconds=30)

    def test_full_charge_duration(self, network):
        assert network.charge_steps(5.0, 200.0) == 60

    def test_soc_proportional_duration(self):
        network = ChargingNetwork([StationSite(0, PlanePoint(0, 0), 1)], soc_proportional=True)
        assert network.charge_steps(100.0, 200.0) == 30
        assert network.charge_steps(200.0, 200.0) == 1

    def test_busy_uses_threshold(self, network):
        network.arrive(0, 7, 0, soc=10.0, battery_range=200.0)
        assert network.is_busy(0)
        assert not network.is_busy(1)

    def test_dense_chart(self, network):
        session = network[0].arrive(3, 1, 2)
        network.release(session, 3)
        chart = network.dense_chart(4)
        np.testing.assert_array_equal(chart[:, 0], [2, 1, 1, 2])
        np.testing.assert_array_equal(chart[:, 1], [1, 1, 1, 1])

    def test_chart_frame(self, network):
        network.arrive(1, 4, 2, soc=10.0, battery_range=200.0)
        frame = network.chart_frame()
        assert list(frame.columns) == ['step', 'station_id', 'vacant']
        assert frame.iloc[-1].tolist() == [2, 1, 0]

    def test_sessions_listed(self, network):
        network.arrive(0, 1, 0, soc=10.0, battery_range=200.0)
        network.arrive(1, 2, 0, soc=10.0, battery_range=200.0)
        assert [s.taxi_id for s in network.sessions()] == [1, 2]
