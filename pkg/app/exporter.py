"""
Export utility for run directories and sweep tables
"""
import json
import os
from typing import Any, Dict, List, Optional

import pandas as pd
from loguru import logger

from app.core import FleetSimError, Region
from app.engine import RunOutput
from app.siting import save_sites

SUMMARY_FILE = 'summary.json'
STATE_DUMP_FILE = 'state_dump.json'


class RunExists(FleetSimError):
    """Raised when a run directory already holds results and overwriting was not requested."""
    pass


def run_dir_name(config_hash: str, seed: int) -> str:
    return f"{config_hash}-s{seed}"


def write_json(data: Dict[str, Any], output_path: str) -> str:
    os.makedirs(os.path.dirname(output_path) or '.', exist_ok=True)
    with open(output_path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, sort_keys=True, indent=2, default=str)
        f.write('\n')
    return output_path


class RunExporter:
    """
    Utility for writing a run's outputs into its run directory
    """

    def __init__(self, float_format: str = '%.6f', chart: str = 'sparse'):
        """
        Initialize the run exporter

        Args:
            float_format: printf-style format for floats in CSV files
            chart: ``sparse`` (change points), ``dense`` (every step) or ``none``
        """
        self.float_format = float_format
        self.chart = chart

    def _csv(self, frame: pd.DataFrame, output_path: str) -> str:
        frame.to_csv(output_path, index=False, float_format=self.float_format, lineterminator='\n')
        return output_path

    def export_run(self, output: RunOutput, output_dir: str, force: bool = False) -> Dict[str, str]:
        """
        Write summary, ledgers, time series and the operations chart

        Args:
            output: Finished run
            output_dir: Parent directory; the run directory is created inside it
            force: Overwrite an existing run directory

        Returns:
            Dictionary mapping artifact names to file paths
        """
        run_dir = os.path.join(output_dir, run_dir_name(output.config_hash, output.seed))
        summary_path = os.path.join(run_dir, SUMMARY_FILE)
        if os.path.exists(summary_path) and not force:
            raise RunExists(f"{run_dir} already holds results (use --force to overwrite)")
        os.makedirs(run_dir, exist_ok=True)

        config = output.config.to_dict()
        config.pop('meta', None)
        files = {
            'timeseries': self._csv(output.timeseries, os.path.join(run_dir, 'timeseries.csv')),
            'curves': self._csv(output.curves, os.path.join(run_dir, 'demand_curves.csv')),
            'taxis': self._csv(output.taxis, os.path.join(run_dir, 'taxi_ledger.csv')),
            'trips': self._csv(output.trips, os.path.join(run_dir, 'trips.csv')),
            'sessions': self._csv(output.sessions, os.path.join(run_dir, 'charge_sessions.csv')),
            'lorenz': self._csv(output.lorenz, os.path.join(run_dir, 'lorenz.csv')),
            'sites': str(save_sites(output.sites, os.path.join(run_dir, 'sites.csv'),
                                    Region.from_config(output.config.region))),
        }
        files.update(self._export_chart(output, run_dir))
        # summary last: its presence marks a complete run directory
        files['summary'] = write_json({**output.summary, 'config': config}, summary_path)
        logger.info("Wrote run outputs to {}", run_dir)
        return files

    def _export_chart(self, output: RunOutput, run_dir: str) -> Dict[str, str]:
        if self.chart == 'none':
            return {}
        files = {}
        if self.chart == 'dense' and output.dense_chart is not None:
            dense = output.dense_chart
            frame = pd.DataFrame({
                'step': [s for s in range(dense.shape[0]) for _ in range(dense.shape[1])],
                'station_id': list(range(dense.shape[1])) * dense.shape[0],
                'vacant': dense.reshape(-1),
            })
            files['chart'] = self._csv(frame, os.path.join(run_dir, 'station_occupancy.csv'))
        else:
            files['chart'] = self._csv(output.chart, os.path.join(run_dir, 'station_occupancy.csv'))

        jsonl_path = os.path.join(run_dir, 'station_occupancy.jsonl')
        with open(jsonl_path, 'w', encoding='utf-8', newline='\n') as f:
            for station_id, group in output.chart.groupby('station_id', sort=True):
                f.write(json.dumps({
                    'station_id': int(station_id),
                    'steps': [int(v) for v in group['step']],
                    'vacant': [int(v) for v in group['vacant']],
                }, sort_keys=True) + '\n')
        files['chart_jsonl'] = jsonl_path
        return files

    def write_state_dump(self, state: Dict[str, Any], run_dir: str) -> str:
        """Write the diagnostic dump of an aborted run."""
        return write_json(state, os.path.join(run_dir, STATE_DUMP_FILE))

    def export_sweep(self, aggregate: pd.DataFrame, detail: pd.DataFrame, output_dir: str,
                     failures: Optional[List[Dict[str, Any]]] = None) -> Dict[str, str]:
        """Write the per-cell aggregate, the per-run detail and any failures."""
        os.makedirs(output_dir, exist_ok=True)
        files = {
            'aggregate': self._csv(aggregate, os.path.join(output_dir, 'sweep_aggregate.csv')),
            'detail': self._csv(detail, os.path.join(output_dir, 'sweep_detail.csv')),
        }
        if failures:
            files['failures'] = write_json({'failures': failures},
                                           os.path.join(output_dir, 'sweep_failures.json'))
        return files


def read_summary(run_dir: str) -> Optional[Dict[str, Any]]:
    path = os.path.join(run_dir, SUMMARY_FILE)
    if not os.path.exists(path):
        return None
    with open(path, encoding='utf-8') as f:
        return json.load(f)
