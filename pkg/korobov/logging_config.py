"""Console and rotating-file logging for CLI runs.

All package loggers live under ``Korobov`` (``Korobov.Grid``, ``Korobov.CLI``, ...). The console handler writes to
stderr so reports printed on stdout stay parseable.
"""
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from .errors import ConfigError

ROOT_NAME = 'Korobov'
LOG_FILE = 'korobov.log'
LEVELS = ('CRITICAL', 'ERROR', 'WARNING', 'INFO', 'DEBUG')
CONSOLE_FORMAT = '[%(asctime)s] %(levelname)s %(name)s: %(message)s'
FILE_FORMAT = '%(asctime)s %(levelname)s %(name)s %(filename)s:%(lineno)d | %(message)s'
QUIET_LOGGERS = ('aiosqlite', 'asyncio')


class ConsoleHandler(logging.StreamHandler):
    """StreamHandler bound to whatever ``sys.stderr`` is at emit time."""

    def __init__(self):
        super().__init__(sys.stderr)
        self.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def parse_level(name: Optional[str] = None) -> int:
    """Flag value, then $LOG_LEVEL, then INFO."""
    name = (name or os.getenv('LOG_LEVEL') or 'INFO').strip().upper()
    if name not in LEVELS:
        raise ConfigError(f"unknown log level '{name}'; expected one of {', '.join(LEVELS)}")
    return getattr(logging, name)


def log_path() -> Optional[Path]:
    # an empty KOROBOV_LOG_DIR turns the file log off
    raw = os.getenv('KOROBOV_LOG_DIR', 'logs').strip()
    return (Path(raw) / LOG_FILE).resolve() if raw else None


def _find(root: logging.Logger, kind: type) -> Optional[logging.Handler]:
    return next((h for h in root.handlers if type(h) is kind), None)


def setup_logging(level_name: Optional[str] = None) -> logging.Logger:
    """Configure the root logger and return the ``Korobov`` logger.

    Called once per CLI invocation. Repeated calls reuse the handlers, refreshing their level and swapping the
    file handler when the log directory changed.
    """
    level = parse_level(level_name)
    root = logging.getLogger()
    root.setLevel(level)

    console = _find(root, ConsoleHandler)
    if console is None:
        console = ConsoleHandler()
        root.addHandler(console)
    console.setLevel(level)

    target = log_path()
    current = _find(root, RotatingFileHandler)
    if current is not None and (target is None or Path(current.baseFilename) != target):
        root.removeHandler(current)
        current.close()
        current = None
    if target is not None and current is None:
        target.parent.mkdir(parents=True, exist_ok=True)
        # sweeps can be long, keep a few generations
        current = RotatingFileHandler(target, maxBytes=2_000_000, backupCount=5, encoding='utf-8')
        current.setFormatter(logging.Formatter(FILE_FORMAT))
        root.addHandler(current)
    if current is not None:
        current.setLevel(level)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logger = logging.getLogger(ROOT_NAME)
    logger.debug('Logging configured at level %s (file: %s)', logging.getLevelName(level), target or 'off')
    return logger
