"""Tests for app/config.py: loading, validation and the run hash."""

from __future__ import annotations

import json

import pytest

from app.config import (DEFAULT_CONFIG, ConfigError, ScenarioConfigLoader, config_hash,
                        dotted_override, load_config, read_document, resolve_path, total_steps,
                        validate_config, window_start)


class TestLoading:

    def test_defaults_are_valid(self):
        result = validate_config(DEFAULT_CONFIG)
        assert result['is_valid'], result['errors']

    def test_documented_defaults(self):
        cfg = load_config()
        assert cfg.dispatch.waiting_threshold_min == 3.0
        assert cfg.dispatch.canceling_threshold_min == 15.0
        assert cfg.dispatch.recharge_threshold_km == 20.0
        assert cfg.stations.capacity == 16
        assert cfg.time.step_seconds == 30

    def test_json_string(self):
        cfg = load_config('{"fleet": {"size": 12}}')
        assert cfg.fleet.size == 12
        assert cfg.fleet.battery_range_km == 200.0

    def test_toml_file_sets_base_dir(self, tmp_path):
        path = tmp_path / 'scenario.toml'
        path.write_text('seed = 5\n[fleet]\nsize = 40\n[demand]\ntrips = "trips.csv"\n',
                        encoding='utf-8')
        cfg = load_config(path)
        assert cfg.seed == 5
        assert cfg.fleet.size == 40
        assert resolve_path(cfg, cfg.demand.trips) == tmp_path.resolve() / 'trips.csv'

    def test_unknown_sections_dropped(self):
        cfg = load_config({'plotting': {'dpi': 300}})
        assert 'plotting' not in cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ScenarioConfigLoader(tmp_path / 'absent.toml')

    def test_read_document_json(self, tmp_path):
        path = tmp_path / 'doc.json'
        path.write_text(json.dumps({'axes': {'fleet_size': [1, 2]}}), encoding='utf-8')
        assert read_document(path) == {'axes': {'fleet_size': [1, 2]}}

    def test_overrides_applied_after_file(self):
        cfg = load_config({'fleet': {'size': 10}}, overrides={'fleet': {'size': 20}})
        assert cfg.fleet.size == 20

    def test_dotted_override(self):
        assert dotted_override('stations.capacity', 4) == {'stations': {'capacity': 4}}
        assert dotted_override('seed', 3) == {'seed': 3}


class TestValidation:

    def _errors(self, overrides):
        loader = ScenarioConfigLoader(overrides)
        return {e['field'] for e in loader.validate()['errors']}

    def test_negative_fleet(self):
        assert 'fleet.size' in self._errors({'fleet': {'size': -1}})

    def test_waiting_must_be_below_canceling(self):
        fields = self._errors({'dispatch': {'waiting_threshold_min': 20}})
        assert 'dispatch.waiting_threshold_min' in fields

    def test_strategy_index_range(self):
        assert 'dispatch.strategy' in self._errors({'dispatch': {'strategy': 17}})

    def test_explicit_weights(self):
        assert not self._errors({'dispatch': {'weights': [1, 0, 1, 0]}})
        assert 'dispatch.weights' in self._errors({'dispatch': {'weights': [1, 0]}})

    def test_density_level(self):
        assert not self._errors({'demand': {'density': 'high'}})
        assert 'demand.density' in self._errors({'demand': {'density': 'extreme'}})

    def test_bad_chart_mode(self):
        assert 'output.chart' in self._errors({'output': {'chart': 'pretty'}})

    def test_k_adjacent_clamp_is_a_warning(self):
        result = ScenarioConfigLoader({'stations': {'count': 2, 'k_adjacent': 3}}).validate()
        assert result['is_valid']
        assert result['warnings'][0]['field'] == 'stations.k_adjacent'

    def test_strict_load_raises_with_field_errors(self):
        with pytest.raises(ConfigError) as info:
            load_config({'fleet': {'battery_range_km': 0}})
        assert info.value.errors[0]['field'] == 'fleet.battery_range_km'


class TestDerivedValues:

    def test_window_start_is_localized(self):
        start = window_start(load_config())
        assert start.utcoffset().total_seconds() == 8 * 3600

    def test_total_steps_for_a_week(self):
        assert total_steps(load_config()) == 20160

    def test_hash_ignores_seed_and_file_format(self):
        a = load_config({'seed': 1})
        b = load_config({'seed': 2, 'output': {'chart': 'dense', 'float_format': '%.3f'}})
        assert config_hash(a) == config_hash(b)

    def test_hash_tracks_metric_binning(self):
        base = config_hash(load_config())
        assert config_hash(load_config({'output': {'bin_minutes': 30}})) != base
        assert config_hash(load_config({'output': {'smoothing_window': 5}})) != base

    def test_hash_tracks_scenario_changes(self):
        assert config_hash(load_config({'fleet': {'size': 10}})) != \
            config_hash(load_config({'fleet': {'size': 11}}))

    def test_hash_ignores_config_location(self, tmp_path):
        path = tmp_path / 'scenario.json'
        path.write_text('{}', encoding='utf-8')
        assert config_hash(load_config(path)) == config_hash(load_config())
