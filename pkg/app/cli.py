"""
Command-line entry point: site, extract, gen-demand, simulate and sweep.

Exit codes: 0 success, 1 failed run or partial sweep failure, 2 invalid input.
"""
import argparse
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from box import Box
from dotenv import load_dotenv
from loguru import logger

from app import engine
from app.config import ConfigError, ScenarioConfigLoader, config_hash, window_start
from app.core import FleetSimError, InvariantViolation, Region
from app.demand import FareSchedule, TripFileError, load_trips, save_trips
from app.exporter import RunExporter, RunExists, read_summary, run_dir_name
from app.logs import configure_logging
from app.parser import extract_trips
from app.siting import DegenerateInput, save_sites
from app.sweep import PRESETS, SweepSpec, preset, run_sweep

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2

# station count used when no config names one
DEFAULT_SITE_COUNT = 100


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, 'seed', None) is not None:
        overrides['seed'] = args.seed
    if getattr(args, 'bin_minutes', None) is not None:
        overrides['output'] = {'bin_minutes': args.bin_minutes}
    return overrides


def _load(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> Box:
    """Load the --config file (or the defaults) with flag overrides applied."""
    loader = ScenarioConfigLoader(args.config)
    overrides = _overrides(args)
    for section, values in (extra or {}).items():
        overrides.setdefault(section, {}).update(values)
    if overrides:
        loader.config.merge_update(Box(overrides))
    result = loader.validate()
    for warning in result['warnings']:
        logger.warning("Config {}: {}", warning['field'], warning['message'])
    if not result['is_valid']:
        raise ConfigError("Invalid configuration", result['errors'])
    return loader.config


def cmd_site(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.stations is not None:
        cfg.stations.count = args.stations
    elif not args.config:
        cfg.stations.count = DEFAULT_SITE_COUNT
    if args.capacity is not None:
        cfg.stations.capacity = args.capacity
    region = Region.from_config(cfg.region)
    trips = load_trips(args.trips, region)
    sites = engine.site_stations(cfg, engine.origin_points(trips, region))
    path = save_sites(sites, args.out, region)
    logger.info("Sited {} stations from {} trip origins into {}", len(sites), len(trips), path)
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = _load(args)
    epoch_offset_s = window_start(cfg).timestamp()
    trips = extract_trips(args.pings, Region.from_config(cfg.region),
                          FareSchedule.from_config(cfg.fare), epoch_offset_s)
    path = save_trips(trips, args.out)
    logger.info("Wrote {} trips to {}", len(trips), path)
    return EXIT_OK


def cmd_gen_demand(args: argparse.Namespace) -> int:
    demand: Dict[str, Any] = {'trips': ''}
    if args.profile:
        demand['profile'] = str(Path(args.profile).resolve())
    if args.density is not None:
        demand['density'] = _density(args.density)
    cfg = _load(args, {'demand': demand})
    trips = engine.prepare_trips(cfg)
    path = save_trips(trips, args.out)
    logger.info("Generated {} trips (seed {}) into {}", len(trips), cfg.seed, path)
    return EXIT_OK


def _density(value: str) -> Any:
    try:
        return float(value)
    except ValueError:
        return value


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    run_dir = os.path.join(args.out, run_dir_name(config_hash(cfg), int(cfg.seed)))
    if read_summary(run_dir) is not None and not args.force:
        raise RunExists(f"{run_dir} already holds results (use --force to overwrite)")
    os.makedirs(run_dir, exist_ok=True)
    sink = configure_logging(args.log_level, os.path.join(run_dir, 'run.log'))
    exporter = RunExporter(cfg.output.float_format, cfg.output.chart)
    try:
        output = engine.run(cfg)
        exporter.export_run(output, args.out, force=True)
    except InvariantViolation as e:
        path = exporter.write_state_dump(e.state, run_dir)
        logger.error("Run aborted: {} (state written to {})", e, path)
        return EXIT_FAILED
    finally:
        if sink:
            logger.remove(sink)
    metrics = output.metrics
    print(f"{run_dir}: fill_rate={metrics.fill_rate:.4f} avg_wait={metrics.avg_wait:.3f} "
          f"gini={metrics.gini:.4f}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    seeds = list(range(1, args.seeds + 1)) if args.seeds else None
    if args.seed is not None:
        seeds = [args.seed]
    if args.preset:
        base = _load(argparse.Namespace(config=args.config, seed=None,
                                        bin_minutes=args.bin_minutes)).to_dict()
        spec = preset(args.preset, base, seeds)
    elif args.sweep:
        if not Path(args.sweep).is_file():
            raise FileNotFoundError(f"Sweep file not found: {args.sweep}")
        spec = SweepSpec.load(args.sweep)
        if seeds:
            spec.seeds = seeds
        if args.bin_minutes is not None:
            spec.base['output']['bin_minutes'] = args.bin_minutes
    else:
        raise ConfigError("sweep needs a sweep file or --preset")

    result = run_sweep(spec, args.out, parallelism=args.parallelism, force=args.force,
                       log_level=args.log_level, progress=not args.no_progress)
    print(f"{len(result.aggregate)} cells, {len(result.detail)} runs, "
          f"{len(result.failures)} failures -> {result.files['aggregate']}")
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ev-fleet-sim',
                                     description="Electric taxi fleet simulator")
    parser.add_argument('--log-level', default=None,
                        help="Log level (default: $EVSIM_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument('--config', default=None, help="Scenario config (.toml or .json)")
        p.add_argument('--seed', type=int, default=None, help="Override the config seed")
        p.add_argument('--out', required=True, help=out_help)

    p = sub.add_parser('site', help="Place charging stations by K-means over trip origins")
    common(p, "Sites CSV to write")
    p.add_argument('--trips', required=True, help="Trip CSV")
    p.add_argument('-S', '--stations', type=int, default=None, help="Number of stations")
    p.add_argument('--capacity', type=int, default=None, help="Chargers per station")
    p.set_defaults(func=cmd_site)

    p = sub.add_parser('extract', help="Extract trips from GPS pings")
    common(p, "Trip CSV to write")
    p.add_argument('--pings', required=True, help="Ping CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser('gen-demand', help="Synthesize a week of trips from a demand profile")
    common(p, "Trip CSV to write")
    p.add_argument('--profile', default=None, help="Profile JSON (default: built-in two-peak)")
    p.add_argument('--density', default=None, help="low, middle, high or a scale factor")
    p.set_defaults(func=cmd_gen_demand)

    p = sub.add_parser('simulate', help="Run one scenario")
    common(p, "Parent directory of run directories")
    p.add_argument('--force', action='store_true', help="Overwrite an existing run directory")
    p.add_argument('--bin-minutes', type=float, default=None, help="Demand curve bin width")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('sweep', help="Run a parameter sweep")
    common(p, "Parent directory of run directories and sweep tables")
    p.add_argument('sweep', nargs='?', default=None, help="Sweep file (.toml or .json)")
    p.add_argument('--preset', choices=sorted(PRESETS), default=None,
                   help="Named experiment grid over --config")
    p.add_argument('--seeds', type=int, default=None, help="Run seeds 1..N")
    p.add_argument('--parallelism', type=int, default=1, help="Worker processes")
    p.add_argument('--force', action='store_true', help="Re-run cached cells")
    p.add_argument('--bin-minutes', type=float, default=None, help="Demand curve bin width")
    p.add_argument('--no-progress', action='store_true', help="Hide the progress bar")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the subcommand and map errors to exit codes."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error("{}", e)
        for error in e.errors:
            logger.error("  {}: {}", error['field'], error['message'])
        return EXIT_INVALID
    except (TripFileError, DegenerateInput, RunExists, FileNotFoundError) as e:
        logger.error("{}", e)
        return EXIT_INVALID
    except FleetSimError as e:
        logger.error("{}", e)
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
