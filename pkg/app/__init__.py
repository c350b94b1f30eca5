"""
EV Taxi Fleet Simulator

This package provides station siting, demand synthesis, trip extraction,
dispatching, the simulation engine, metrics and parameter sweeps.
"""

# Define __all__ for public API
__all__ = [
    'FleetSimError',
    'InvariantViolation',
    'ConfigError',
    'load_config',
    'TripRequest',
    'StationSite',
    'Simulation',
    'RunOutput',
    'run',
    'RunExporter',
    'SweepSpec',
    'run_sweep',
    'gini',
]

from .core import FleetSimError, InvariantViolation
from .config import ConfigError, load_config
from .demand import TripRequest
from .siting import StationSite
from .engine import RunOutput, Simulation, run
from .exporter import RunExporter
from .sweep import SweepSpec, run_sweep
from .metrics import gini
