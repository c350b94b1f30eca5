"""
Logging setup shared by the command line and sweep workers.
"""
import os
import sys
from pathlib import Path
from typing import Optional, Union

from loguru import logger

LOG_LEVEL_ENV = 'EVSIM_LOG_LEVEL'
LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {name}:{line} - {message}"


def resolve_level(level: Optional[str] = None) -> str:
    """Pick the log level from the flag, then the environment, then INFO."""
    return (level or os.environ.get(LOG_LEVEL_ENV) or 'INFO').upper()


def configure_logging(level: Optional[str] = None,
                      log_file: Optional[Union[str, Path]] = None) -> int:
    """Install the stderr sink (and optionally a file sink).

    Args:
        level: Log level name; falls back to ``EVSIM_LOG_LEVEL``
        log_file: Optional path of a plain-text log file

    Returns:
        Handler id of the file sink, or 0 when none was added
    """
    logger.remove()
    logger.add(sys.stderr, level=resolve_level(level), format=LOG_FORMAT)
    if log_file:
        return logger.add(str(log_file), level='DEBUG', format=LOG_FORMAT, colorize=False)
    return 0
