"""Tests for app/exporter.py: run directories and sweep tables."""

from __future__ import annotations

import json
import os

import pandas as pd
import pytest

from app.engine import run
from app.exporter import (STATE_DUMP_FILE, SUMMARY_FILE, RunExists, RunExporter, read_summary,
                          run_dir_name)
from conftest import CENTER, make_trip


@pytest.fixture
def output(tiny, one_site):
    trips = [make_trip(0, 0, (CENTER.x, CENTER.y), (CENTER.x + 10, CENTER.y)),
             make_trip(1, 900, (CENTER.x, CENTER.y), (CENTER.x, CENTER.y + 8))]
    return run(tiny(), trips=trips, sites=one_site)


class TestRunExport:

    def test_writes_every_artifact(self, output, tmp_path):
        files = RunExporter().export_run(output, str(tmp_path))
        run_dir = tmp_path / run_dir_name(output.config_hash, output.seed)
        assert files['summary'] == str(run_dir / SUMMARY_FILE)
        for name in ('timeseries.csv', 'demand_curves.csv', 'taxi_ledger.csv', 'trips.csv',
                     'charge_sessions.csv', 'lorenz.csv', 'sites.csv', 'station_occupancy.csv',
                     'station_occupancy.jsonl'):
            assert (run_dir / name).is_file(), name

    def test_summary_content(self, output, tmp_path):
        RunExporter().export_run(output, str(tmp_path))
        summary = read_summary(str(tmp_path / run_dir_name(output.config_hash, output.seed)))
        assert summary['config_hash'] == output.config_hash
        assert summary['seed'] == 7
        assert summary['metrics']['fill_rate'] == 1.0
        assert 'meta' not in summary['config']
        assert summary['invariants']['enabled'] is True

    def test_trip_ledger_round_trips_through_csv(self, output, tmp_path):
        RunExporter().export_run(output, str(tmp_path))
        run_dir = tmp_path / run_dir_name(output.config_hash, output.seed)
        trips = pd.read_csv(run_dir / 'trips.csv')
        assert trips['status'].tolist() == ['served', 'served']
        assert trips['trip_id'].tolist() == [0, 1]

    def test_refuses_to_overwrite(self, output, tmp_path):
        exporter = RunExporter()
        exporter.export_run(output, str(tmp_path))
        with pytest.raises(RunExists):
            exporter.export_run(output, str(tmp_path))
        exporter.export_run(output, str(tmp_path), force=True)

    def test_jsonl_chart_per_station(self, output, tmp_path):
        RunExporter().export_run(output, str(tmp_path))
        path = tmp_path / run_dir_name(output.config_hash, output.seed) / 'station_occupancy.jsonl'
        lines = [json.loads(line) for line in path.read_text(encoding='utf-8').splitlines()]
        assert [line['station_id'] for line in lines] == [0]
        assert lines[0]['steps'][0] == 0
        assert lines[0]['vacant'][0] == 2

    def test_no_chart(self, output, tmp_path):
        files = RunExporter(chart='none').export_run(output, str(tmp_path))
        assert 'chart' not in files

    def test_dense_chart(self, tiny, one_site, tmp_path):
        trip = make_trip(0, 0, (CENTER.x, CENTER.y), (CENTER.x + 10, CENTER.y))
        dense = run(tiny(output={'chart': 'dense'}), trips=[trip], sites=one_site)
        files = RunExporter(chart='dense').export_run(dense, str(tmp_path))
        frame = pd.read_csv(files['chart'])
        assert len(frame) == dense.summary['steps_simulated']
        assert (frame['vacant'] == 2).all()

    def test_identical_runs_write_identical_files(self, tiny, one_site, tmp_path):
        trip = make_trip(0, 0, (CENTER.x, CENTER.y), (CENTER.x + 10, CENTER.y))
        a = RunExporter().export_run(run(tiny(), trips=[trip], sites=one_site), str(tmp_path / 'a'))
        b = RunExporter().export_run(run(tiny(), trips=[trip], sites=one_site), str(tmp_path / 'b'))
        for name in ('trips', 'taxis', 'timeseries', 'summary'):
            with open(a[name], 'rb') as fa, open(b[name], 'rb') as fb:
                assert fa.read() == fb.read(), name


class TestOtherFiles:

    def test_state_dump(self, tmp_path):
        path = RunExporter().write_state_dump({'step': 12, 'taxis': []}, str(tmp_path / 'run'))
        assert os.path.basename(path) == STATE_DUMP_FILE
        with open(path, encoding='utf-8') as f:
            assert json.load(f)['step'] == 12

    def test_missing_summary(self, tmp_path):
        assert read_summary(str(tmp_path)) is None

    def test_sweep_tables(self, tmp_path):
        aggregate = pd.DataFrame({'fleet_size': [1], 'fill_rate_mean': [0.5]})
        detail = pd.DataFrame({'fleet_size': [1, 1], 'seed': [1, 2], 'fill_rate': [0.4, 0.6]})
        files = RunExporter().export_sweep(aggregate, detail, str(tmp_path),
                                           failures=[{'seed': 3, 'error': 'boom'}])
        assert pd.read_csv(files['detail'])['seed'].tolist() == [1, 2]
        with open(files['failures'], encoding='utf-8') as f:
            assert json.load(f)['failures'][0]['error'] == 'boom'

    def test_no_failures_file_when_clean(self, tmp_path):
        files = RunExporter().export_sweep(pd.DataFrame(), pd.DataFrame(), str(tmp_path))
        assert 'failures' not in files
