"""
Module for loading and validating scenario configuration files.
"""
import copy
import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pytz
from box import Box
from dateutil import parser as date_parser
from loguru import logger

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from app.core import FleetSimError

__all__ = ['ConfigError', 'ScenarioConfigLoader', 'DEFAULT_CONFIG', 'load_config',
           'validate_config', 'config_hash', 'resolve_path', 'window_start', 'total_steps',
           'read_document', 'dotted_override']


class ConfigError(FleetSimError):
    """Raised when a configuration fails validation."""

    def __init__(self, message: str, errors: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.errors = errors or []


DEFAULT_CONFIG: Dict[str, Any] = {
    'seed': 2016,
    'time': {
        'start': '2016-05-01T00:00:00',
        'timezone': 'Asia/Shanghai',
        'days': 7,
        'step_seconds': 30,
    },
    'region': {
        'lon_min': 115.5,
        'lon_max': 117.37,
        'lat_min': 39.47,
        'lat_max': 40.68,
        'width_km': 165.0,
        'height_km': 138.0,
    },
    'fleet': {
        'size': 300,
        'battery_range_km': 200.0,
        'placement_window_min': 1440,
    },
    'stations': {
        'count': 20,
        'capacity': 16,
        'sites': '',
        'k_adjacent': 3,
        'recharge_minutes': 30.0,
        'soc_proportional': False,
        'capacity_from_sites': False,
        'busy_threshold': 0.5,
        'kmeans_sample_cap': 200000,
        'kmeans_restarts': 4,
    },
    'dispatch': {
        'strategy': 15,
        'weights': [],
        'q_distance': 0.2,
        'q_empty_time': 1.0 / 30.0,
        'q_income_rate': 0.6,
        'q_soc': 0.0,
        'waiting_threshold_min': 3.0,
        'canceling_threshold_min': 15.0,
        'recharge_threshold_km': 20.0,
        'empty_speed_kmh': 30.0,
    },
    'fare': {
        'flag_fall': 13.0,
        'base_km': 3.0,
        'per_km': 2.3,
    },
    'demand': {
        'trips': '',
        'profile': 'default',
        'density': 1.0,
        'desk_scale': 0.01,
    },
    'shift': {
        'drivers_per_taxi': 2,
        'day_start_hour': 6,
        'shift_hours': 12,
    },
    'output': {
        'bin_minutes': 15,
        'smoothing_window': 3,
        'chart': 'sparse',
        'float_format': '%.6f',
    },
    'checks': {
        'invariants': True,
    },
}

# (path, type, minimum, maximum, minimum exclusive)
FIELD_RULES: List[Tuple[str, str, Optional[float], Optional[float], bool]] = [
    ('seed', 'integer', 0, None, False),
    ('time.days', 'number', 0, None, True),
    ('time.step_seconds', 'integer', 0, None, True),
    ('region.width_km', 'number', 0, None, True),
    ('region.height_km', 'number', 0, None, True),
    ('fleet.size', 'integer', 0, None, False),
    ('fleet.battery_range_km', 'number', 0, None, True),
    ('fleet.placement_window_min', 'number', 0, None, True),
    ('stations.count', 'integer', 0, None, True),
    ('stations.capacity', 'integer', 0, None, True),
    ('stations.k_adjacent', 'integer', 0, None, False),
    ('stations.recharge_minutes', 'number', 0, None, True),
    ('stations.soc_proportional', 'boolean', None, None, False),
    ('stations.capacity_from_sites', 'boolean', None, None, False),
    ('stations.busy_threshold', 'number', 0, 1, True),
    ('stations.kmeans_sample_cap', 'integer', 0, None, True),
    ('stations.kmeans_restarts', 'integer', 0, None, True),
    ('dispatch.q_distance', 'number', 0, None, True),
    ('dispatch.q_empty_time', 'number', 0, None, True),
    ('dispatch.q_income_rate', 'number', 0, None, True),
    ('dispatch.q_soc', 'number', 0, None, False),
    ('dispatch.waiting_threshold_min', 'number', 0, None, False),
    ('dispatch.canceling_threshold_min', 'number', 0, None, True),
    ('dispatch.recharge_threshold_km', 'number', 0, None, False),
    ('dispatch.empty_speed_kmh', 'number', 0, None, True),
    ('fare.flag_fall', 'number', 0, None, False),
    ('fare.base_km', 'number', 0, None, False),
    ('fare.per_km', 'number', 0, None, False),
    ('demand.desk_scale', 'number', 0, None, True),
    ('shift.drivers_per_taxi', 'integer', 0, None, True),
    ('shift.day_start_hour', 'integer', 0, 23, False),
    ('shift.shift_hours', 'number', 0, 24, True),
    ('output.bin_minutes', 'number', 0, None, True),
    ('output.smoothing_window', 'integer', 0, None, True),
    ('checks.invariants', 'boolean', None, None, False),
]


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a TOML (by suffix) or JSON file into a dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    text = path.read_text(encoding='utf-8')
    try:
        if path.suffix.lower() == '.toml':
            return tomllib.loads(text)
        return json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Invalid config file {path}: {e}")


def dotted_override(path: str, value: Any) -> Dict[str, Any]:
    """Turn ``'fleet.size', 300`` into ``{'fleet': {'size': 300}}``."""
    tree: Dict[str, Any] = {}
    node = tree
    keys = path.split('.')
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value
    return tree


class ScenarioConfigLoader:
    """Loader for scenario configurations (TOML, JSON, dict)."""

    def __init__(self, config_data: Optional[Union[Dict, str, Path]] = None):
        """Initialize the loader.

        Args:
            config_data: Config as a dict, JSON string, or path to a
                ``.toml``/``.json`` file. ``None`` yields the defaults.
        """
        self.source: Optional[Path] = None
        self.config = Box(copy.deepcopy(DEFAULT_CONFIG))
        self._load_config(config_data)

    def _load_config(self, config_data: Optional[Union[Dict, str, Path]]) -> None:
        if not config_data:
            return

        try:
            if isinstance(config_data, dict):
                overrides = config_data
            elif isinstance(config_data, str) and config_data.lstrip().startswith('{'):
                overrides = json.loads(config_data)
            else:
                self.source = Path(config_data)
                overrides = read_document(self.source)
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigError(f"Invalid config data: {str(e)}")

        unknown = sorted(set(overrides) - set(DEFAULT_CONFIG) - {'meta'})
        if unknown:
            logger.warning("Ignoring unknown config sections: {}", ', '.join(unknown))
            overrides = {k: v for k, v in overrides.items() if k not in unknown}
        self.config.merge_update(Box(overrides))
        if self.source is not None:
            # relative data paths resolve against the config file's directory
            self.config.meta = {'base_dir': str(self.source.resolve().parent)}

    def validate(self) -> Dict[str, Any]:
        """Validate the loaded configuration; see :func:`validate_config`."""
        return validate_config(self.config)

    def get_config(self, strict: bool = True) -> Box:
        """Return the merged configuration.

        Args:
            strict: Raise ``ConfigError`` if validation reports errors

        Returns:
            Box holding the full configuration tree
        """
        if strict:
            result = self.validate()
            for warning in result['warnings']:
                logger.warning("config {}: {}", warning['field'], warning['message'])
            if not result['is_valid']:
                details = '; '.join(f"{e['field']}: {e['message']}" for e in result['errors'])
                raise ConfigError(f"Invalid configuration: {details}", result['errors'])
        return self.config


def load_config(config_data: Optional[Union[Dict, str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> Box:
    """Load, merge and validate a configuration.

    Args:
        config_data: Anything accepted by :class:`ScenarioConfigLoader`
        overrides: Extra nested overrides applied after loading

    Returns:
        Validated configuration Box
    """
    loader = ScenarioConfigLoader(config_data)
    if overrides:
        loader.config.merge_update(Box(overrides))
    return loader.get_config(strict=True)


def _lookup(cfg: Dict[str, Any], path: str) -> Any:
    node: Any = cfg
    for part in path.split('.'):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _check_single_type(value: Any, type_str: str) -> bool:
    if type_str == 'number':
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    elif type_str == 'integer':
        return isinstance(value, int) and not isinstance(value, bool)
    elif type_str == 'boolean':
        return isinstance(value, bool)
    elif type_str == 'string':
        return isinstance(value, str)
    return True


def validate_config(cfg: Dict[str, Any]) -> Dict[str, Any]:
    """Validate a merged configuration tree.

    Args:
        cfg: Configuration (Box or plain dict)

    Returns:
        Dict with ``is_valid``, ``errors`` and ``warnings``; every entry
        carries ``field``, ``message`` and ``type``
    """
    errors: List[Dict[str, Any]] = []
    warnings: List[Dict[str, Any]] = []

    for path, type_str, minimum, maximum, exclusive in FIELD_RULES:
        value = _lookup(cfg, path)
        if value is None:
            errors.append({'field': path, 'message': 'Missing required field',
                           'type': 'required_field_missing'})
            continue
        if not _check_single_type(value, type_str):
            errors.append({'field': path,
                           'message': f'expected {type_str}, got {type(value).__name__}',
                           'type': 'invalid_type'})
            continue
        if minimum is not None and (value <= minimum if exclusive else value < minimum):
            op = '>' if exclusive else '>='
            errors.append({'field': path, 'message': f'must be {op} {minimum}, got {value}',
                           'type': 'out_of_range'})
        if maximum is not None and value > maximum:
            errors.append({'field': path, 'message': f'must be <= {maximum}, got {value}',
                           'type': 'out_of_range'})

    region = cfg.get('region', {})
    if region.get('lon_min', 0) >= region.get('lon_max', 0):
        errors.append({'field': 'region.lon_max', 'message': 'must exceed lon_min',
                       'type': 'invalid_relation'})
    if region.get('lat_min', 0) >= region.get('lat_max', 0):
        errors.append({'field': 'region.lat_max', 'message': 'must exceed lat_min',
                       'type': 'invalid_relation'})

    dispatch = cfg.get('dispatch', {})
    waiting = dispatch.get('waiting_threshold_min')
    canceling = dispatch.get('canceling_threshold_min')
    if _check_single_type(waiting, 'number') and _check_single_type(canceling, 'number') \
            and waiting >= canceling:
        errors.append({'field': 'dispatch.waiting_threshold_min',
                       'message': 'must be below canceling_threshold_min',
                       'type': 'invalid_relation'})

    _check_strategy(dispatch, errors)

    stations = cfg.get('stations', {})
    count, k = stations.get('count'), stations.get('k_adjacent')
    if _check_single_type(count, 'integer') and _check_single_type(k, 'integer') \
            and count > 0 and k >= count:
        warnings.append({'field': 'stations.k_adjacent',
                         'message': f'{k} >= station count {count}; clamped to {count - 1}',
                         'type': 'clamped'})

    chart = _lookup(cfg, 'output.chart')
    if chart not in ('sparse', 'dense', 'none'):
        errors.append({'field': 'output.chart', 'message': "must be 'sparse', 'dense' or 'none'",
                       'type': 'invalid_value'})

    density = _lookup(cfg, 'demand.density')
    if isinstance(density, str):
        if density not in ('low', 'middle', 'high'):
            errors.append({'field': 'demand.density',
                           'message': "level must be 'low', 'middle' or 'high'",
                           'type': 'invalid_value'})
    elif not _check_single_type(density, 'number') or density <= 0:
        errors.append({'field': 'demand.density', 'message': 'must be a positive number or level',
                       'type': 'invalid_value'})

    time_cfg = cfg.get('time', {})
    try:
        window_start(cfg)
    except (ValueError, TypeError, OverflowError, pytz.UnknownTimeZoneError) as e:
        errors.append({'field': 'time.start', 'message': f'cannot resolve start time: {e}',
                       'type': 'invalid_value'})
    if _check_single_type(time_cfg.get('days'), 'number') and \
            _check_single_type(time_cfg.get('step_seconds'), 'integer') and \
            time_cfg.get('step_seconds', 0) > 0 and \
            (time_cfg['days'] * 86400) % time_cfg['step_seconds'] != 0:
        warnings.append({'field': 'time.days', 'message': 'window is not a whole number of steps',
                         'type': 'rounded'})

    return {
        'is_valid': len(errors) == 0,
        'errors': errors,
        'warnings': warnings,
    }


def _check_strategy(dispatch: Dict[str, Any], errors: List[Dict[str, Any]]) -> None:
    weights = dispatch.get('weights') or []
    if weights:
        if len(weights) != 4 or not all(_check_single_type(w, 'number') and w >= 0 for w in weights):
            errors.append({'field': 'dispatch.weights',
                           'message': 'must be four non-negative numbers',
                           'type': 'invalid_value'})
        return
    strategy = dispatch.get('strategy')
    if not _check_single_type(strategy, 'integer') or not 1 <= strategy <= 16:
        errors.append({'field': 'dispatch.strategy', 'message': 'must be an index in 1..16',
                       'type': 'invalid_value'})


def window_start(cfg: Dict[str, Any]) -> datetime:
    """Timezone-aware start of the simulated window."""
    time_cfg = cfg['time']
    start = date_parser.isoparse(str(time_cfg['start']))
    if start.tzinfo is None:
        start = pytz.timezone(time_cfg['timezone']).localize(start)
    return start


def total_steps(cfg: Dict[str, Any]) -> int:
    """Number of steps in the simulated window."""
    return int(round(cfg['time']['days'] * 86400 / cfg['time']['step_seconds']))


def resolve_path(cfg: Dict[str, Any], value: Union[str, Path]) -> Path:
    """Resolve a data path from the config against the config file's directory."""
    path = Path(value)
    base_dir = _lookup(cfg, 'meta.base_dir')
    if not path.is_absolute() and base_dir:
        return Path(base_dir) / path
    return path


# output keys that only change how files are written
HASH_IGNORED_OUTPUT = ('float_format', 'chart')


def config_hash(cfg: Dict[str, Any]) -> str:
    """Stable short hash of everything that affects a run except the seed.

    Args:
        cfg: Configuration tree

    Returns:
        First 12 hex digits of the SHA-256 of the canonical JSON form
    """
    plain = cfg.to_dict() if isinstance(cfg, Box) else copy.deepcopy(dict(cfg))
    plain.pop('seed', None)
    output = plain.get('output')
    if isinstance(output, dict):
        plain['output'] = {k: v for k, v in output.items() if k not in HASH_IGNORED_OUTPUT}
    plain.pop('meta', None)
    canonical = json.dumps(plain, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]
