"""Experiment configuration: built-in defaults < environment < TOML file < command-line flags."""
from __future__ import annotations

import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from rapidfuzz import fuzz, process

from .errors import ConfigError, DomainError
from .metrics import QuadratureConfig, QuadratureMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_SWEEP = ((1, 1), (2, 1), (3, 1), (4, 1))
DEFAULT_LEVELS = tuple(range(2, 9))
ORDERS = (2, 3)
NORMS = ('lp', 'w1p')
FORMATS = ('csv', 'json')

# TOML section -> keys it may hold
SECTIONS = {
    'experiment': ('fn', 'd', 'm', 'p', 'norm', 'sweep', 'levels', 'seed'),
    'quadrature': ('mode', 'resolution', 'offset'),
    'output': ('out', 'format'),
    'run': ('workers', 'checkpoint'),
}
# Fields that change results; everything else (paths, parallelism) is left out of the run key.
KEYED_FIELDS = ('fn', 'd', 'm', 'p', 'norm', 'sweep', 'levels', 'seed', 'mode', 'resolution', 'offset')


def parse_sweep(text: str | list) -> tuple[tuple[int, int], ...]:
    """'1x1,2x1' (or a TOML list of [W, L] pairs) -> ((1, 1), (2, 1))."""
    pairs = []
    items = text if isinstance(text, list) else [part for part in str(text).split(',') if part.strip()]
    for item in items:
        try:
            if isinstance(item, (list, tuple)):
                W, L = (int(v) for v in item)
            else:
                W, L = (int(v) for v in item.lower().split('x'))
        except (TypeError, ValueError):
            raise ConfigError(f'cannot parse sweep entry {item!r}; expected WxL like 2x1') from None
        pairs.append((W, L))
    return tuple(pairs)


def parse_levels(text: str | list) -> tuple[int, ...]:
    """'2-8' or '2,4,6' (or a TOML list) -> level budgets n."""
    try:
        if isinstance(text, list):
            return tuple(int(v) for v in text)
        text = str(text).strip()
        if '-' in text:
            lo, hi = (int(v) for v in text.split('-', 1))
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(',') if v.strip())
    except ValueError:
        raise ConfigError(f'cannot parse levels {text!r}; expected e.g. 2-8 or 2,4,6') from None


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = 'build'
    fn: str = 'sine'
    d: int = 1
    m: int = 2
    p: float = 2.0
    norm: str = 'lp'
    sweep: tuple[tuple[int, int], ...] = DEFAULT_SWEEP
    levels: tuple[int, ...] = DEFAULT_LEVELS
    seed: int = 0
    mode: Optional[str] = None
    resolution: Optional[int] = None
    offset: Optional[float] = None
    out: Optional[Path] = None
    format: str = 'csv'
    workers: int = 1
    checkpoint: Optional[Path] = None
    input: Optional[Path] = None
    max_slope: Optional[float] = None
    dump_net: Optional[Path] = None

    def validate(self) -> ExperimentConfig:
        if self.m not in ORDERS:
            raise ConfigError(f'm must be one of {ORDERS}, got {self.m}')
        if self.d < 1:
            raise ConfigError(f'd must be >= 1, got {self.d}')
        if not 1.0 <= self.p < math.inf:
            raise ConfigError(f'p must satisfy 1 <= p < inf, got {self.p}')
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.command == 'build':
            if not self.sweep:
                raise ConfigError('the (W, L) sweep is empty')
            for W, L in self.sweep:
                if W < 1 or L < 1:
                    raise ConfigError(f'sweep entries need W, L >= 1, got {W}x{L}')
        if self.command == 'interp':
            if not self.levels:
                raise ConfigError('the level sweep is empty')
            if any(n < 1 for n in self.levels):
                raise ConfigError(f'levels must be >= 1, got {self.levels}')
        if self.workers < 1:
            raise ConfigError(f'workers must be >= 1, got {self.workers}')
        self.quadrature()
        return self

    def quadrature(self) -> QuadratureConfig:
        base = QuadratureConfig.default_for(self.d, self.seed)
        try:
            return QuadratureConfig(QuadratureMode(self.mode) if self.mode else base.mode,
                                    self.resolution or base.resolution, self.seed,
                                    base.offset if self.offset is None else self.offset)
        except (DomainError, ValueError) as e:
            raise ConfigError(f'bad quadrature settings: {e}') from None

    def keyed(self) -> dict:
        doc = {name: getattr(self, name) for name in KEYED_FIELDS}
        doc['command'] = self.command
        doc['sweep'] = [list(pair) for pair in self.sweep]
        doc['levels'] = list(self.levels)
        doc['quadrature'] = self.quadrature().to_dict()
        return doc

    def run_key(self) -> str:
        """SHA-1 of the canonical result-affecting settings."""
        return hashlib.sha1(json.dumps(self.keyed(), sort_keys=True).encode('utf-8')).hexdigest()

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ('out', 'checkpoint', 'input', 'dump_net'):
            doc[key] = None if doc[key] is None else str(doc[key])
        doc['sweep'] = [list(pair) for pair in self.sweep]
        doc['levels'] = list(self.levels)
        doc['quadrature'] = self.quadrature().to_dict()
        return doc


def _suggest(key: str, known) -> str:
    guess = process.extractOne(key, list(known), scorer=fuzz.ratio)
    return f"; did you mean '{guess[0]}'?" if guess and guess[1] >= 60 else ''


def read_toml(path: str | Path) -> dict:
    """Flatten the known sections of a TOML config into field values."""
    path = Path(path)
    try:
        with path.open('rb') as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f'config file not found: {path}') from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'cannot parse {path}: {e}') from None
    values: dict[str, Any] = {}
    for section, body in doc.items():
        if section not in SECTIONS:
            raise ConfigError(f'unknown section [{section}] in {path}{_suggest(section, SECTIONS)}')
        if not isinstance(body, dict):
            raise ConfigError(f'[{section}] in {path} must be a table')
        for key, value in body.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f'unknown key {section}.{key} in {path}{_suggest(key, SECTIONS[section])}')
            values[key] = value
    return values


def from_env(env: Mapping[str, str]) -> dict:
    values: dict[str, Any] = {}
    if env.get('KOROBOV_WORKERS'):
        values['workers'] = env['KOROBOV_WORKERS']
    if env.get('KOROBOV_CHECKPOINT_DB'):
        values['checkpoint'] = env['KOROBOV_CHECKPOINT_DB']
    return values


def _coerce(values: Mapping[str, Any]) -> dict:
    out: dict[str, Any] = {}
    casts = {'d': int, 'm': int, 'p': float, 'seed': int, 'resolution': int, 'offset': float, 'workers': int,
             'max_slope': float}
    for key, value in values.items():
        if value is None:
            continue
        try:
            if key == 'sweep':
                out[key] = parse_sweep(value)
            elif key == 'levels':
                out[key] = parse_levels(value)
            elif key in ('out', 'checkpoint', 'input', 'dump_net'):
                out[key] = Path(value) if str(value) else None
            elif key in casts:
                out[key] = casts[key](value)
            else:
                out[key] = value
        except (TypeError, ValueError):
            raise ConfigError(f'bad value for {key}: {value!r}') from None
    return out


def load_config(command: str, flags: Mapping[str, Any], env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Merge defaults, environment, the --config TOML file and explicit flags (None = not given)."""
    env = os.environ if env is None else env
    merged: dict[str, Any] = {}
    merged.update(_coerce(from_env(env)))
    config_path = flags.get('config')
    if config_path:
        merged.update(_coerce(read_toml(config_path)))
    merged.update(_coerce({k: v for k, v in flags.items() if k != 'config'}))
    if merged.pop('no_checkpoint', False):
        merged['checkpoint'] = None
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    cfg = replace(ExperimentConfig(command=command), **{k: v for k, v in merged.items() if k in known})
    return cfg.validate()
