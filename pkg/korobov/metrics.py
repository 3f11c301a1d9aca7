"""L_p and W^1_p error estimates and convergence-order fits.

Network gradients are the almost-everywhere Jacobians of ``ReluNetwork``;
grid quadrature shifts its midpoints by a fraction of the mesh so power-of-two
grids never sample a dyadic breakpoint.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DimensionMismatch, DomainError
from .net import ReluNetwork

logger = logging.getLogger('Korobov.Metrics')

# Midpoints move by this fraction of the mesh: (j + 1/2 + 1/7) / N.
DEFAULT_OFFSET = 1.0 / 7.0
EVAL_CHUNK = 1 << 16


class QuadratureMode(str, Enum):
    GRID = 'grid'
    MC = 'mc'


@dataclass(frozen=True)
class QuadratureConfig:
    """Tensor midpoint grid (resolution points per axis) or Monte Carlo (resolution samples)."""

    mode: QuadratureMode = QuadratureMode.GRID
    resolution: int = 1 << 14
    seed: int = 0
    offset: float = DEFAULT_OFFSET

    def __post_init__(self):
        object.__setattr__(self, 'mode', QuadratureMode(self.mode))
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise DomainError(f'quadrature resolution must be an integer >= 2, got {self.resolution}')
        if not 0.0 < self.offset < 0.5:
            raise DomainError(f'grid offset must lie in (0, 1/2) of the mesh, got {self.offset}')

    @classmethod
    def default_for(cls, d: int, seed: int = 0) -> QuadratureConfig:
        if d == 1:
            return cls(QuadratureMode.GRID, 1 << 14, seed)
        if d == 2:
            return cls(QuadratureMode.GRID, 1 << 9, seed)
        return cls(QuadratureMode.MC, 10 ** 6, seed)

    def points(self, d: int) -> np.ndarray:
        if self.mode is QuadratureMode.MC:
            return np.random.default_rng(self.seed).random((self.resolution, d))
        axis = (np.arange(self.resolution) + 0.5 + self.offset) / self.resolution
        if d == 1:
            return axis[:, None]
        mesh = np.meshgrid(*([axis] * d), indexing='ij')
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def halved(self) -> QuadratureConfig:
        return replace(self, resolution=max(2, self.resolution // 2))

    def to_dict(self) -> dict:
        out = asdict(self)
        out['mode'] = self.mode.value
        return out


@dataclass(frozen=True)
class NormEstimate:
    """Quadrature estimate of a norm with a spread: resolution-halving change (grid) or standard error (MC)."""

    value: float
    spread: float
    samples: int

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class Field:
    """A function on the cube with an optional gradient, both taking (N, d) arrays."""

    values: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d: Optional[int] = None

    @classmethod
    def of(cls, obj: Any) -> Field:
        if isinstance(obj, Field):
            return obj
        if isinstance(obj, ReluNetwork):
            if obj.output_dim != 1:
                raise DimensionMismatch(f'{obj.name} has {obj.output_dim} outputs; errors need a scalar network')
            return cls(lambda x: obj.evaluate(x)[:, 0], lambda x: obj.gradient(x)[:, 0, :], obj.input_dim)
        if hasattr(obj, 'evaluate') and hasattr(obj, 'gradient'):
            return cls(lambda x: np.asarray(obj.evaluate(x), dtype=float).reshape(-1), obj.gradient,
                       getattr(obj, 'd', None))
        if callable(obj):
            return cls(lambda x: np.asarray(obj(x), dtype=float).reshape(-1), None, getattr(obj, 'd', None))
        raise DomainError(f'cannot measure {type(obj).__name__}')

    @classmethod
    def product_sum(cls, pairs: Sequence[tuple[Any, Any]]) -> Field:
        """sum_k a_k b_k with the product rule for gradients."""
        fields = [(cls.of(a), cls.of(b)) for a, b in pairs]

        def values(x):
            return sum(a.values(x) * b.values(x) for a, b in fields)

        def gradient(x):
            return sum(a.gradient(x) * b.values(x)[:, None] + a.values(x)[:, None] * b.gradient(x) for a, b in fields)

        return cls(values, gradient, fields[0][0].d if fields else None)


def _check_p(p: float) -> None:
    if math.isinf(p) or not p >= 1.0:
        raise DomainError(f'p must satisfy 1 <= p < inf, got {p}')


def _sample(fields: Sequence[Field], pts: np.ndarray, sobolev: bool) -> list[tuple[np.ndarray, Optional[np.ndarray]]]:
    out = []
    for f in fields:
        vals = np.concatenate([f.values(pts[i:i + EVAL_CHUNK]) for i in range(0, len(pts), EVAL_CHUNK)])
        grads = None
        if sobolev:
            if f.gradient is None:
                raise DomainError('W1p errors need gradients of both functions')
            grads = np.concatenate([np.asarray(f.gradient(pts[i:i + EVAL_CHUNK])).reshape(-1, pts.shape[1])
                                    for i in range(0, len(pts), EVAL_CHUNK)])
        out.append((vals, grads))
    return out


def _integrands(samples, p: float) -> list[np.ndarray]:
    terms = []
    for (va, ga), (vb, gb) in zip(samples, samples[1:]):
        term = np.abs(va - vb) ** p
        if ga is not None:
            term = term + np.sum(np.abs(ga - gb) ** p, axis=1)
        terms.append(term)
    return terms


def error_split(items: Sequence[Any], p: float, q: Optional[QuadratureConfig] = None,
                sobolev: bool = False) -> list[NormEstimate]:
    """Norms of the consecutive differences items[0]-items[1], items[1]-items[2], ...

    Every item is sampled once per point set, so long chains (interpolation,
    localized pieces, assembled network) cost one evaluation each.
    """
    _check_p(p)
    fields = [Field.of(item) for item in items]
    dims = {f.d for f in fields if f.d is not None}
    if len(dims) > 1:
        raise DimensionMismatch(f'functions of different dimensions: {sorted(dims)}')
    if not dims:
        raise DomainError('cannot infer the dimension of the compared functions')
    d = dims.pop()
    q = q or QuadratureConfig.default_for(d)
    pts = q.points(d)
    terms = _integrands(_sample(fields, pts, sobolev), p)
    integrals = [float(np.mean(t)) for t in terms]
    values = [i ** (1.0 / p) for i in integrals]
    if q.mode is QuadratureMode.MC:
        spreads = []
        for t, integral, value in zip(terms, integrals, values):
            se = float(np.std(t, ddof=1)) / math.sqrt(len(t))
            spreads.append(0.0 if integral == 0.0 else value * se / (p * integral))
    elif q.resolution >= 4:
        coarse = _integrands(_sample(fields, q.halved().points(d), sobolev), p)
        spreads = [abs(float(np.mean(t)) ** (1.0 / p) - v) for t, v in zip(coarse, values)]
    else:
        spreads = [0.0] * len(values)
    return [NormEstimate(v, s, len(pts)) for v, s in zip(values, spreads)]


def lp_error(f: Any, net: Any, p: float = 2.0, q: Optional[QuadratureConfig] = None) -> NormEstimate:
    """||f - net||_{L_p([0,1]^d)}."""
    return error_split([f, net], p, q)[0]


def w1p_error(f: Any, net: Any, p: float = 2.0, q: Optional[QuadratureConfig] = None) -> NormEstimate:
    """(||f - net||_p^p + sum_j ||d_j f - d_j net||_p^p)^{1/p}."""
    return error_split([f, net], p, q, sobolev=True)[0]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(records: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares slope of log(error) against log(size)."""
    records = list(records)
    if len(records) < 3:
        raise DomainError(f'a rate fit needs at least 3 records, got {len(records)}')
    sizes = np.array([r[0] for r in records], dtype=float)
    errors = np.array([r[1] for r in records], dtype=float)
    if np.any(sizes <= 0.0):
        raise DomainError('sizes must be positive')
    if np.any(~(errors > 0.0)) or not np.all(np.isfinite(errors)):
        raise DomainError('errors must be positive and finite')
    x, y = np.log(sizes), np.log(errors)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - residual / total if total > 0.0 else 1.0
    return RateFit(float(slope), float(intercept), r2, len(records))


@dataclass
class RateReport:
    rows: list[dict] = field(default_factory=list)
    fit: Optional[RateFit] = None

    def add(self, row: dict) -> None:
        self.rows.append(dict(row))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def fit_on(self, size: Callable[[dict], float], error_key: str = 'error') -> Optional[RateFit]:
        """Fit the rows that carry a positive error; None with fewer than 3 such rows."""
        usable = [(size(r), r[error_key]) for r in self.rows
                  if isinstance(r.get(error_key), (int, float)) and r[error_key] > 0.0]
        self.fit = fit_rate(usable) if len(usable) >= 3 else None
        if self.fit is not None:
            logger.info('Fitted slope %.3f (R^2 %.4f) over %d rows', self.fit.slope, self.fit.r2, self.fit.count)
        return self.fit
