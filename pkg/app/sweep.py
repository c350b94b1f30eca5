"""
Parameter sweeps: cross-product grids of scenario settings run over several
seeds, in parallel, with cached run directories and per-cell aggregation.
"""
import copy
import itertools
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import pandas as pd
from box import Box
from loguru import logger
from tqdm import tqdm

from app import engine
from app.config import (ConfigError, ScenarioConfigLoader, config_hash, dotted_override,
                        read_document)
from app.core import FleetSimError, InvariantViolation
from app.exporter import RunExporter, read_summary, run_dir_name
from app.logs import configure_logging
from app.metrics import METRIC_COLUMNS, aggregate_seeds

# Short axis names accepted in sweep files; anything else must be a dotted config path.
AXIS_PATHS: Dict[str, str] = {
    'fleet_size': 'fleet.size',
    'battery_range': 'fleet.battery_range_km',
    'station_capacity': 'stations.capacity',
    'station_count': 'stations.count',
    'strategy_index': 'dispatch.strategy',
    'demand_density': 'demand.density',
    'canceling_threshold': 'dispatch.canceling_threshold_min',
}

DEFAULT_MAX_RUNS = 2000
DEFAULT_SEEDS = list(range(1, 11))


def axis_path(name: str) -> str:
    return AXIS_PATHS.get(name, name)


@dataclass
class SweepRun:
    """One (cell, seed) pair with its fully merged configuration."""
    coords: Dict[str, Any]
    seed: int
    config: Dict[str, Any]
    config_hash: str


@dataclass
class SweepSpec:
    base: Dict[str, Any]
    axes: Dict[str, List[Any]] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    max_runs: int = DEFAULT_MAX_RUNS
    name: str = 'sweep'

    @property
    def axis_names(self) -> List[str]:
        return list(self.axes)

    @property
    def size(self) -> int:
        size = len(self.seeds)
        for values in self.axes.values():
            size *= len(values)
        return size

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Union[str, Path]] = None,
                  base_config: Optional[Union[Dict[str, Any], str, Path]] = None) -> 'SweepSpec':
        """
        Build a sweep from its document form

        Args:
            data: Sweep document with ``base`` (path or table), ``axes``, ``seeds`` and ``max_runs``
            base_dir: Directory that relative paths in the document resolve against
            base_config: Base scenario used when the document names none

        Returns:
            SweepSpec whose ``base`` is a fully merged configuration dict
        """
        base = data.get('base', base_config)
        if isinstance(base, (str, Path)):
            path = Path(base)
            if not path.is_absolute() and base_dir:
                path = Path(base_dir) / path
            loader = ScenarioConfigLoader(path)
        else:
            loader = ScenarioConfigLoader(base or None)
            if base_dir:
                loader.config.meta = {'base_dir': str(Path(base_dir).resolve())}

        axes = {str(k): list(v) if isinstance(v, (list, tuple)) else [v]
                for k, v in (data.get('axes') or {}).items()}
        seeds = data.get('seeds', DEFAULT_SEEDS)
        if isinstance(seeds, int):
            seeds = list(range(1, seeds + 1))
        return cls(
            base=loader.config.to_dict(),
            axes=axes,
            seeds=[int(s) for s in seeds],
            max_runs=int(data.get('max_runs', DEFAULT_MAX_RUNS)),
            name=str(data.get('name', 'sweep')),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'SweepSpec':
        path = Path(path)
        return cls.from_dict(read_document(path), base_dir=path.resolve().parent)

    def cell_config(self, coords: Dict[str, Any], seed: int) -> Dict[str, Any]:
        config = Box(copy.deepcopy(self.base))
        for name, value in coords.items():
            config.merge_update(Box(dotted_override(axis_path(name), value)))
            if axis_path(name) == 'dispatch.strategy':
                config.dispatch.weights = []
        config.seed = int(seed)
        return config.to_dict()

    def cells(self) -> List[Dict[str, Any]]:
        names = self.axis_names
        return [dict(zip(names, values)) for values in itertools.product(*self.axes.values())]

    def runs(self) -> List[SweepRun]:
        """Every (cell, seed) pair in axis order; raises ConfigError past ``max_runs``."""
        if self.size > self.max_runs:
            raise ConfigError(f"sweep {self.name} has {self.size} runs, above the cap of {self.max_runs}",
                              [{'field': 'max_runs', 'message': f'{self.size} > {self.max_runs}',
                                'type': 'out_of_range'}])
        runs = []
        for coords in self.cells():
            for seed in self.seeds:
                config = self.cell_config(coords, seed)
                runs.append(SweepRun(coords, seed, config, config_hash(config)))
        return runs

    def validate(self) -> Dict[str, Any]:
        """Check the cap, the seeds and every cell's configuration."""
        errors: List[Dict[str, Any]] = []
        warnings: List[Dict[str, Any]] = []
        if not self.seeds:
            errors.append({'field': 'seeds', 'message': 'at least one seed is required',
                           'type': 'required'})
        if len(set(self.seeds)) != len(self.seeds):
            errors.append({'field': 'seeds', 'message': 'seeds must be distinct', 'type': 'duplicate'})
        for name, values in self.axes.items():
            if name not in AXIS_PATHS and '.' not in name:
                errors.append({'field': f'axes.{name}',
                               'message': f"unknown axis; use one of {sorted(AXIS_PATHS)} "
                                          "or a dotted config path",
                               'type': 'invalid_value'})
            if not values:
                errors.append({'field': f'axes.{name}', 'message': 'axis has no values',
                               'type': 'required'})
        if self.size > self.max_runs:
            errors.append({'field': 'max_runs', 'message': f'{self.size} runs exceed the cap',
                           'type': 'out_of_range'})
        if errors:
            return {'is_valid': False, 'errors': errors, 'warnings': warnings}

        seed = self.seeds[0]
        for coords in self.cells():
            result = ScenarioConfigLoader(self.cell_config(coords, seed)).validate()
            label = ', '.join(f'{k}={v}' for k, v in coords.items()) or 'base'
            for error in result['errors']:
                errors.append({**error, 'field': f"[{label}] {error['field']}"})
            for warning in result['warnings']:
                if warning not in warnings:
                    warnings.append(warning)
        return {'is_valid': len(errors) == 0, 'errors': errors, 'warnings': warnings}


def _fleet_config(base: Dict[str, Any]) -> Dict[str, Any]:
    return {
        'base': {**base, 'dispatch': {**base.get('dispatch', {}), 'strategy': 1, 'weights': []}},
        'axes': {'fleet_size': [200, 300, 400], 'station_capacity': [2, 4, 8],
                 'battery_range': [100, 200, 300]},
    }


def _strategies(base: Dict[str, Any]) -> Dict[str, Any]:
    return {'base': base, 'axes': {'strategy_index': list(range(1, 17))}}


def _validation(base: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    merged.setdefault('fleet', {})['battery_range_km'] = 100
    merged.setdefault('stations', {})['capacity'] = 8
    return {'base': merged,
            'axes': {'strategy_index': [6, 11, 13, 15, 16], 'fleet_size': [200, 300, 400]}}


def _robustness(base: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    merged.setdefault('dispatch', {})['canceling_threshold_min'] = 20
    return {'base': merged,
            'axes': {'strategy_index': list(range(1, 16)),
                     'demand_density': ['low', 'middle', 'high']}}


def _temporal(base: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    merged.setdefault('dispatch', {}).update({'strategy': 6, 'weights': []})
    return {'base': merged, 'axes': {}}


PRESETS: Dict[str, Callable[[Dict[str, Any]], Dict[str, Any]]] = {
    'fleet-config': _fleet_config,
    'strategies': _strategies,
    'validation': _validation,
    'robustness': _robustness,
    'temporal': _temporal,
}


def preset(name: str, base_config: Optional[Union[Dict[str, Any], str, Path]] = None,
           seeds: Optional[List[int]] = None) -> SweepSpec:
    """
    Build one of the named experiment grids over a base scenario

    Args:
        name: Key of :data:`PRESETS`
        base_config: Base scenario as a dict or a config file path
        seeds: Seeds to run; defaults to 1..10

    Returns:
        SweepSpec for the preset
    """
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}' (choose from {', '.join(sorted(PRESETS))})")
    base_dir = None
    if isinstance(base_config, (str, Path)):
        loader = ScenarioConfigLoader(base_config)
        base = loader.config.to_dict()
    else:
        base = copy.deepcopy(base_config or {})
        base_dir = base.get('meta', {}).get('base_dir')
    document = PRESETS[name](base)
    document['seeds'] = seeds or list(DEFAULT_SEEDS)
    document['name'] = name
    return SweepSpec.from_dict(document, base_dir=base_dir)


def _row(run: SweepRun, summary: Dict[str, Any], cached: bool) -> Dict[str, Any]:
    row = {**run.coords, 'seed': run.seed, 'config_hash': run.config_hash, 'cached': cached}
    row.update({k: v for k, v in summary['metrics'].items() if not isinstance(v, (dict, list))})
    return row


def run_cell(run: SweepRun, output_dir: str, force: bool = False) -> Dict[str, Any]:
    """
    Run and export one sweep run; the unit of work handed to pool workers

    Returns:
        Detail row on success, or a failure record with ``error``
    """
    try:
        output = engine.run(Box(run.config))
        RunExporter(run.config['output']['float_format'], run.config['output']['chart']) \
            .export_run(output, output_dir, force=force)
        return _row(run, output.summary, cached=False)
    except InvariantViolation as e:
        run_dir = os.path.join(output_dir, run_dir_name(run.config_hash, run.seed))
        RunExporter().write_state_dump(e.state, run_dir)
        logger.error("Run {} aborted: {}", run_dir, e)
        return {'coords': run.coords, 'seed': run.seed, 'config_hash': run.config_hash,
                'error': f'InvariantViolation: {e}'}
    except (FleetSimError, FileNotFoundError, ValueError) as e:
        logger.error("Run {}-s{} failed: {}", run.config_hash, run.seed, e)
        return {'coords': run.coords, 'seed': run.seed, 'config_hash': run.config_hash,
                'error': f'{type(e).__name__}: {e}'}


def _worker_init(level: Optional[str]) -> None:
    configure_logging(level)


@dataclass
class SweepResult:
    aggregate: pd.DataFrame
    detail: pd.DataFrame
    failures: List[Dict[str, Any]]
    files: Dict[str, str]

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


class SweepRunner:
    """
    Runner that executes a sweep's runs, reusing finished run directories
    """

    def __init__(self, spec: SweepSpec, output_dir: str, parallelism: int = 1,
                 force: bool = False, log_level: Optional[str] = None, progress: bool = True):
        """
        Initialize the sweep runner

        Args:
            spec: Sweep to run
            output_dir: Parent directory of the run directories and sweep tables
            parallelism: Worker processes; 1 runs everything in this process
            force: Re-run cells whose run directory already holds a summary
            log_level: Level installed in each worker
            progress: Show a tqdm progress bar
        """
        self.spec = spec
        self.output_dir = output_dir
        self.parallelism = max(1, int(parallelism))
        self.force = force
        self.log_level = log_level
        self.progress = progress

    def _cached(self, run: SweepRun) -> Optional[Dict[str, Any]]:
        if self.force:
            return None
        summary = read_summary(os.path.join(self.output_dir, run_dir_name(run.config_hash, run.seed)))
        if summary is None:
            return None
        return _row(run, summary, cached=True)

    def _execute(self, pending: List[SweepRun]) -> List[Dict[str, Any]]:
        results = []
        bar = tqdm(total=len(pending), desc=self.spec.name, unit='run', disable=not self.progress)
        if self.parallelism == 1 or len(pending) <= 1:
            for run in pending:
                results.append(run_cell(run, self.output_dir, self.force))
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=self.parallelism, initializer=_worker_init,
                                     initargs=(self.log_level,)) as pool:
                futures = {pool.submit(run_cell, run, self.output_dir, self.force): run
                           for run in pending}
                for future in as_completed(futures):
                    run = futures[future]
                    try:
                        results.append(future.result())
                    except Exception as e:
                        # worker crashed outside run_cell's own handling
                        logger.error("Run {}-s{} crashed: {}", run.config_hash, run.seed, e)
                        results.append({'coords': run.coords, 'seed': run.seed,
                                        'config_hash': run.config_hash,
                                        'error': f'{type(e).__name__}: {e}'})
                    bar.update(1)
        bar.close()
        return results

    def run(self) -> SweepResult:
        """
        Run every cell, aggregate over seeds and write the sweep tables

        Returns:
            SweepResult with the aggregate, the per-run detail and any failures
        """
        validation = self.spec.validate()
        if not validation['is_valid']:
            raise ConfigError(f"Invalid sweep {self.spec.name}", validation['errors'])
        runs = self.spec.runs()
        os.makedirs(self.output_dir, exist_ok=True)

        rows: List[Dict[str, Any]] = []
        pending: List[SweepRun] = []
        for run in runs:
            cached = self._cached(run)
            if cached is not None:
                rows.append(cached)
            else:
                pending.append(run)
        logger.info("Sweep {}: {} runs ({} cached, {} to run, parallelism {})", self.spec.name,
                    len(runs), len(rows), len(pending), self.parallelism)

        failures = []
        for result in self._execute(pending):
            if 'error' in result:
                failures.append(result)
            else:
                rows.append(result)
        failures.sort(key=lambda f: (f['config_hash'], f['seed']))

        axis_names = self.spec.axis_names
        detail = pd.DataFrame(rows)
        if detail.empty:
            detail = pd.DataFrame(columns=axis_names + ['seed', 'config_hash'] + METRIC_COLUMNS)
        detail = detail.sort_values(axis_names + ['seed']).reset_index(drop=True)
        aggregate = aggregate_seeds(detail.drop(columns=['cached'], errors='ignore'),
                                    axis_names + ['config_hash'])
        files = RunExporter(self.spec.base['output']['float_format']).export_sweep(
            aggregate, detail.drop(columns=['cached'], errors='ignore'), self.output_dir, failures)
        if failures:
            logger.warning("Sweep {}: {} of {} runs failed", self.spec.name, len(failures), len(runs))
        return SweepResult(aggregate, detail, failures, files)


def run_sweep(spec: Union[SweepSpec, str, Path], output_dir: str, parallelism: int = 1,
              force: bool = False, log_level: Optional[str] = None,
              progress: bool = True) -> SweepResult:
    """Load (if needed) and run a sweep."""
    if not isinstance(spec, SweepSpec):
        spec = SweepSpec.load(spec)
    return SweepRunner(spec, output_dir, parallelism, force, log_level, progress).run()


def axis_trend(aggregate: pd.DataFrame, axis: str, metric: str,
               fixed: Optional[Dict[str, Any]] = None) -> List[Tuple[Any, float]]:
    """(axis value, mean metric) pairs along one axis, other axes held at ``fixed`` values."""
    frame = aggregate
    for name, value in (fixed or {}).items():
        frame = frame[frame[name] == value]
    trend = frame.groupby(axis, sort=True)[f'{metric}_mean'].mean()
    return [(k, float(v)) for k, v in trend.items()]
