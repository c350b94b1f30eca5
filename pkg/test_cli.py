"""Tests for app/cli.py: subcommands and exit codes."""

from __future__ import annotations

import json

import pandas as pd
import pytest

from app import engine
from app.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from app.config import config_hash, load_config, window_start
from app.core import InvariantViolation
from app.demand import save_trips
from app.exporter import STATE_DUMP_FILE, run_dir_name
from app.parser import PING_COLUMNS
from app.siting import StationSite
from conftest import CENTER, make_trip, tiny_config


@pytest.fixture
def scenario(scenario_files):
    trip = make_trip(0, 0, (CENTER.x, CENTER.y), (CENTER.x + 10, CENTER.y))
    return scenario_files([trip], [StationSite(0, CENTER, 2)])


def run_dir(config_path, out, seed=7):
    return out / run_dir_name(config_hash(load_config(config_path)), seed)


class TestSite:

    def test_two_stations_from_toy_trips(self, tmp_path):
        trips = [make_trip(i, 60 * i, xy, (60, 60)) for i, xy in
                 enumerate([(10, 10), (10, 11), (50, 10), (50, 11)])]
        save_trips(trips, tmp_path / 'trips.csv')
        code = main(['site', '--trips', str(tmp_path / 'trips.csv'), '-S', '2',
                     '--out', str(tmp_path / 'sites.csv')])
        assert code == EXIT_OK
        sites = pd.read_csv(tmp_path / 'sites.csv')
        assert sites['station_id'].tolist() == [0, 1]
        assert (sites['capacity'] == 16).all()

    def test_missing_trip_file(self, tmp_path):
        code = main(['site', '--trips', str(tmp_path / 'none.csv'), '--out', str(tmp_path / 's.csv')])
        assert code == EXIT_INVALID

    def test_too_many_stations(self, tmp_path):
        save_trips([make_trip(0, 0, (10, 10), (60, 60))], tmp_path / 'trips.csv')
        code = main(['site', '--trips', str(tmp_path / 'trips.csv'), '-S', '3',
                     '--out', str(tmp_path / 'sites.csv')])
        assert code == EXIT_INVALID


class TestSimulate:

    def test_run_writes_summary(self, scenario, tmp_path, capsys):
        out = tmp_path / 'runs'
        assert main(['simulate', '--config', scenario, '--out', str(out)]) == EXIT_OK
        summary = json.loads((run_dir(scenario, out) / 'summary.json').read_text(encoding='utf-8'))
        assert summary['metrics']['fill_rate'] == 1.0
        assert (run_dir(scenario, out) / 'run.log').is_file()
        assert 'fill_rate=1.0000' in capsys.readouterr().out

    def test_rerun_refused_then_forced(self, scenario, tmp_path):
        out = str(tmp_path / 'runs')
        assert main(['simulate', '--config', scenario, '--out', out]) == EXIT_OK
        assert main(['simulate', '--config', scenario, '--out', out]) == EXIT_INVALID
        assert main(['simulate', '--config', scenario, '--out', out, '--force']) == EXIT_OK

    def test_seed_flag_names_run_dir(self, scenario, tmp_path):
        out = tmp_path / 'runs'
        assert main(['simulate', '--config', scenario, '--seed', '3', '--out', str(out)]) == EXIT_OK
        assert (run_dir(scenario, out, seed=3) / 'summary.json').is_file()

    def test_invalid_config(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps(tiny_config(fleet={'size': -1})), encoding='utf-8')
        assert main(['simulate', '--config', str(path), '--out', str(tmp_path)]) == EXIT_INVALID

    def test_missing_config(self, tmp_path):
        code = main(['simulate', '--config', str(tmp_path / 'none.toml'), '--out', str(tmp_path)])
        assert code == EXIT_INVALID

    def test_invariant_violation_dumps_state(self, scenario, tmp_path, monkeypatch):
        def broken(config, *args, **kwargs):
            raise InvariantViolation("forced", {'step': 9})

        monkeypatch.setattr(engine, 'run', broken)
        out = tmp_path / 'runs'
        assert main(['simulate', '--config', scenario, '--out', str(out)]) == EXIT_FAILED
        dump = json.loads((run_dir(scenario, out) / STATE_DUMP_FILE).read_text(encoding='utf-8'))
        assert dump['step'] == 9


class TestDemand:

    def test_same_seed_same_file(self, tmp_path):
        config = tmp_path / 'tiny.json'
        config.write_text(json.dumps(tiny_config()), encoding='utf-8')
        for name in ('a.csv', 'b.csv'):
            args = ['gen-demand', '--config', str(config), '--seed', '4', '--out', str(tmp_path / name)]
            assert main(args) == EXIT_OK
        assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()
        assert len(pd.read_csv(tmp_path / 'a.csv')) > 0

    def test_density_level(self, tmp_path):
        config = tmp_path / 'tiny.json'
        config.write_text(json.dumps(tiny_config()), encoding='utf-8')
        assert main(['gen-demand', '--config', str(config), '--density', 'extreme',
                     '--out', str(tmp_path / 'x.csv')]) == EXIT_INVALID

    def test_extract(self, tmp_path):
        epoch = int(window_start(load_config()).timestamp())
        pings = pd.DataFrame([
            {'vehicle_id': 'v1', 'timestamp': epoch + 60, 'lon': 116.30, 'lat': 39.90, 'speed': 20,
             'in_service': 1},
            {'vehicle_id': 'v1', 'timestamp': epoch + 400, 'lon': 116.35, 'lat': 39.95, 'speed': 20,
             'in_service': 1},
            {'vehicle_id': 'v1', 'timestamp': epoch + 430, 'lon': 116.35, 'lat': 39.95, 'speed': 0,
             'in_service': 0},
        ], columns=PING_COLUMNS)
        pings.to_csv(tmp_path / 'pings.csv', index=False)
        code = main(['extract', '--pings', str(tmp_path / 'pings.csv'), '--out', str(tmp_path / 't.csv')])
        assert code == EXIT_OK
        trips = pd.read_csv(tmp_path / 't.csv')
        assert trips['request_time_s'].tolist() == [60]


class TestSweepCommand:

    def test_sweep_file(self, scenario, tmp_path):
        sweep = tmp_path / 'grid.json'
        sweep.write_text(json.dumps({'base': 'scenario.json', 'axes': {'fleet_size': [1, 2]}}),
                         encoding='utf-8')
        out = tmp_path / 'sweep'
        code = main(['sweep', str(sweep), '--seeds', '2', '--no-progress', '--out', str(out)])
        assert code == EXIT_OK
        aggregate = pd.read_csv(out / 'sweep_aggregate.csv')
        assert aggregate['fleet_size'].tolist() == [1, 2]
        assert aggregate['n_seeds'].tolist() == [2, 2]

    def test_needs_file_or_preset(self, tmp_path):
        assert main(['sweep', '--out', str(tmp_path)]) == EXIT_INVALID

    def test_missing_sweep_file(self, tmp_path):
        assert main(['sweep', str(tmp_path / 'none.toml'), '--out', str(tmp_path)]) == EXIT_INVALID

    def test_cap_exceeded(self, scenario, tmp_path):
        sweep = tmp_path / 'grid.json'
        sweep.write_text(json.dumps({'base': 'scenario.json', 'axes': {'fleet_size': [1, 2, 3]},
                                     'max_runs': 2}), encoding='utf-8')
        assert main(['sweep', str(sweep), '--seeds', '1', '--out', str(tmp_path / 'o')]) == EXIT_INVALID
