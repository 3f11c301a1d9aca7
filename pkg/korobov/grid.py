"""Sparse grids on the unit cube: index sets, hierarchical bases and surpluses.

Levels ``l`` with ``|l|_1 <= n + d - 1`` and odd positions ``i`` address the
basis functions. Order m = 2 uses the tensor-product hat; higher orders use a
one-dimensional shape built as a product of single-kink ramps
``s(1 - c z)`` with ``z = 2^l x - i``, stored as data in ``SHAPE_TABLES``.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .errors import DimensionMismatch, DomainError, SampleError

logger = logging.getLogger('Korobov.Grid')

Sampler = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ShapeTable:
    """Ramp coefficients of one order's 1-d basis on the reference cell z in [-1, 1]."""

    order: int
    coefficients: tuple[float, ...]
    peak: float

    def __post_init__(self):
        if len(self.coefficients) != self.order - 1:
            raise DomainError(f'order {self.order} needs {self.order - 1} ramp coefficients')


# (1 - z)(1 + z) = 1 - z^2, the quadratic hierarchical Lagrange basis.
SHAPE_TABLES: dict[int, ShapeTable] = {
    3: ShapeTable(order=3, coefficients=(1.0, -1.0), peak=1.0),
}


def register_shape_table(order: int, coefficients: Iterable[float], peak: Optional[float] = None) -> ShapeTable:
    coefficients = tuple(float(c) for c in coefficients)
    if peak is None:
        z = np.linspace(-1.0, 1.0, 4097)
        peak = float(np.max(np.prod([np.maximum(1.0 - c * z, 0.0) for c in coefficients], axis=0)))
    table = ShapeTable(order=order, coefficients=coefficients, peak=peak)
    SHAPE_TABLES[order] = table
    logger.info('Registered shape table for order %d: %s', order, coefficients)
    return table


def shape_table(order: int) -> ShapeTable:
    try:
        return SHAPE_TABLES[order]
    except KeyError:
        raise DomainError(f'no shape table for order m={order}; register one with register_shape_table') from None


def _check_order(order: int) -> None:
    if order < 2:
        raise DomainError(f'order m must be >= 2, got {order}')
    if order > 2:
        shape_table(order)


def basis_1d(order: int, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Value and z-derivative of the 1-d reference basis at ``z``."""
    z = np.asarray(z, dtype=float)
    if order == 2:
        inside = np.abs(z) < 1.0
        return np.maximum(1.0 - np.abs(z), 0.0), np.where(inside, -np.sign(z), 0.0)
    coeffs = shape_table(order).coefficients
    ramps = [np.maximum(1.0 - c * z, 0.0) for c in coeffs]
    slopes = [np.where(1.0 - c * z > 0.0, -c, 0.0) for c in coeffs]
    value = np.prod(ramps, axis=0)
    deriv = np.zeros_like(z)
    for k, slope in enumerate(slopes):
        deriv = deriv + slope * np.prod([r for j, r in enumerate(ramps) if j != k], axis=0)
    return value, deriv


@dataclass(frozen=True)
class MultiIndex:
    level: tuple[int, ...]
    position: tuple[int, ...]

    def __post_init__(self):
        level = tuple(int(v) for v in self.level)
        position = tuple(int(v) for v in self.position)
        if not level or len(level) != len(position):
            raise DimensionMismatch(f'level {level} and position {position} differ in dimension')
        for l, i in zip(level, position):
            if l < 1:
                raise DomainError(f'levels must be >= 1, got {level}')
            if i % 2 == 0 or not 1 <= i <= 2 ** l - 1:
                raise DomainError(f'position {position} is not in I_l for level {level}')
        object.__setattr__(self, 'level', level)
        object.__setattr__(self, 'position', position)

    @property
    def d(self) -> int:
        return len(self.level)

    @property
    def norm1(self) -> int:
        return sum(self.level)

    @property
    def point(self) -> np.ndarray:
        return np.array([i * 2.0 ** -l for l, i in zip(self.level, self.position)])

    def support(self) -> list[tuple[float, float]]:
        return [((i - 1) * 2.0 ** -l, (i + 1) * 2.0 ** -l) for l, i in zip(self.level, self.position)]

    def local(self, x) -> np.ndarray:
        """Reference coordinates z_j = 2^{l_j} x_j - i_j."""
        x = np.asarray(x, dtype=float)
        return x * np.exp2(self.level) - np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class HatBasis:
    index: MultiIndex

    order = 2

    def evaluate(self, x) -> np.ndarray:
        value, _ = basis_1d(2, self.index.local(x))
        return np.prod(value, axis=-1)


@dataclass(frozen=True)
class HighOrderBasis:
    index: MultiIndex
    order: int

    def __post_init__(self):
        if self.order < 3:
            raise DomainError('HighOrderBasis needs m >= 3; use HatBasis for m = 2')
        shape_table(self.order)

    @property
    def coefficients(self) -> tuple[float, ...]:
        return shape_table(self.order).coefficients

    def ramp_parameters(self) -> list[list[tuple[float, float]]]:
        """(slope, offset) of each ramp s(slope * x_j + offset), per dimension."""
        return [[(-(2.0 ** l) * c, c * i + 1.0) for c in self.coefficients]
                for l, i in zip(self.index.level, self.index.position)]

    def factors(self, x) -> np.ndarray:
        """All ramp values rho_{j,k}(x_j), shape (..., d, m-1)."""
        z = self.index.local(x)[..., :, None]
        c = np.asarray(self.coefficients)
        return np.maximum(1.0 - c * z, 0.0)

    def evaluate(self, x) -> np.ndarray:
        return np.prod(self.factors(x), axis=(-2, -1))


def basis_eval(basis: HatBasis | HighOrderBasis, x) -> np.ndarray:
    return basis.evaluate(x)


def hier_index_set(level: Iterable[int]) -> set[tuple[int, ...]]:
    level = tuple(int(l) for l in level)
    if not level or any(l < 1 for l in level):
        raise DomainError(f'levels must be >= 1, got {level}')
    return set(itertools.product(*[range(1, 2 ** l, 2) for l in level]))


def cell_counts(level: Iterable[int]) -> tuple[int, ...]:
    return tuple(2 ** (int(l) - 1) for l in level)


def enumerate_levels(n: int, d: int) -> list[tuple[int, ...]]:
    """All l with |l|_1 <= n + d - 1, ordered by |l|_1 then lexicographically."""
    if n < 1 or d < 1:
        raise DomainError(f'need n >= 1 and d >= 1, got n={n}, d={d}')
    cap = n + d - 1
    levels = [l for l in itertools.product(range(1, n + 1), repeat=d) if sum(l) <= cap]
    return sorted(levels, key=lambda l: (sum(l), l))


def _level_nodes(level: tuple[int, ...]) -> np.ndarray:
    """Nodes of one level in C order of the cell array, shape (prod 2^{l_j-1}, d)."""
    axes = [(2.0 * np.arange(c) + 1.0) * 2.0 ** -l for c, l in zip(cell_counts(level), level)]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _sample(f: Sampler, points: np.ndarray) -> np.ndarray:
    """f at ``points`` with boundary samples pinned to exactly 0."""
    values = np.zeros(points.shape[0])
    interior = np.all((points > 0.0) & (points < 1.0), axis=1)
    if np.any(interior):
        sampled = np.asarray(f(points[interior]), dtype=float).reshape(-1)
        if not np.all(np.isfinite(sampled)):
            bad = points[interior][~np.isfinite(sampled)][0]
            raise SampleError(f'sampler returned a non-finite value at {bad.tolist()}')
        values[interior] = sampled
    return values


class SparseInterpolant:
    """Immutable sparse-grid interpolant: per-level dense surplus arrays indexed by cell."""

    def __init__(self, order: int, n: int, d: int, blocks: Mapping[tuple[int, ...], np.ndarray]):
        _check_order(order)
        if n < 1 or d < 1:
            raise DomainError(f'need n >= 1 and d >= 1, got n={n}, d={d}')
        cap = n + d - 1
        self.order, self.n, self.d = order, n, d
        self._blocks: dict[tuple[int, ...], np.ndarray] = {}
        for level, values in sorted(blocks.items(), key=lambda kv: (sum(kv[0]), kv[0])):
            level = tuple(int(l) for l in level)
            if len(level) != d or any(l < 1 for l in level) or sum(level) > cap:
                raise DomainError(f'level {level} is not admissible for n={n}, d={d}')
            arr = np.array(values, dtype=float, copy=True).reshape(cell_counts(level))
            arr.flags.writeable = False
            self._blocks[level] = arr

    @classmethod
    def from_entries(cls, order: int, n: int, d: int, entries: Iterable[tuple[MultiIndex, float]]) -> SparseInterpolant:
        blocks: dict[tuple[int, ...], np.ndarray] = {}
        for index, value in entries:
            arr = blocks.setdefault(index.level, np.zeros(cell_counts(index.level)))
            arr[tuple((i - 1) // 2 for i in index.position)] = value
        return cls(order, n, d, blocks)

    @classmethod
    def empty(cls, order: int, n: int, d: int) -> SparseInterpolant:
        return cls(order, n, d, {})

    @property
    def levels(self) -> list[tuple[int, ...]]:
        return list(self._blocks)

    def block(self, level: tuple[int, ...]) -> np.ndarray:
        level = tuple(level)
        if level in self._blocks:
            return self._blocks[level]
        return np.zeros(cell_counts(level))

    @property
    def entries(self) -> list[tuple[MultiIndex, float]]:
        out = []
        for level, arr in self._blocks.items():
            for cell in itertools.product(*[range(c) for c in arr.shape]):
                out.append((MultiIndex(level, tuple(2 * t + 1 for t in cell)), float(arr[cell])))
        return out

    def __len__(self) -> int:
        return int(sum(arr.size for arr in self._blocks.values()))

    def nodes(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros((0, self.d))
        return np.vstack([_level_nodes(level) for level in self._blocks])

    def max_surplus(self) -> float:
        return max((float(np.max(np.abs(arr))) for arr in self._blocks.values()), default=0.0)

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        single = arr.ndim == 1
        batch = arr.reshape(1, -1) if single else arr
        if batch.shape[1] != self.d:
            raise DimensionMismatch(f'interpolant is {self.d}-dimensional, got points of shape {arr.shape}')
        return batch, single

    def _level_terms(self, level, arr, x):
        """Surplus of the active cell and per-dimension basis values/derivatives."""
        counts = np.asarray(arr.shape)
        cells = np.clip(np.floor(x * counts).astype(int), 0, counts - 1)
        z = x * np.exp2(level) - (2.0 * cells + 1.0)
        value, deriv = basis_1d(self.order, z)
        return arr[tuple(cells.T)], value, deriv

    def evaluate(self, x):
        batch, single = self._batch(x)
        total = np.zeros(batch.shape[0])
        for level, arr in self._blocks.items():
            coef, value, _ = self._level_terms(level, arr, batch)
            total += coef * np.prod(value, axis=1)
        return float(total[0]) if single else total

    __call__ = evaluate

    def gradient(self, x) -> np.ndarray:
        batch, single = self._batch(x)
        grad = np.zeros_like(batch)
        for level, arr in self._blocks.items():
            coef, value, deriv = self._level_terms(level, arr, batch)
            scale = np.exp2(level)
            for j in range(self.d):
                others = np.prod(np.delete(value, j, axis=1), axis=1)
                grad[:, j] += coef * others * deriv[:, j] * scale[j]
        return grad[0] if single else grad


def _stencil_surplus(f: Sampler, level: tuple[int, ...]) -> np.ndarray:
    """Tensorized [-1/2, 1, -1/2] stencil at every node of one level."""
    nodes = _level_nodes(level)
    steps = np.array([2.0 ** -l for l in level])
    surplus = np.zeros(nodes.shape[0])
    for offsets in itertools.product((-1, 0, 1), repeat=len(level)):
        weight = math.prod(1.0 if o == 0 else -0.5 for o in offsets)
        surplus += weight * _sample(f, nodes + np.asarray(offsets) * steps)
    return surplus.reshape(cell_counts(level))


def _hierarchize_stencil(f: Sampler, n: int, d: int, workers: Optional[int]) -> dict:
    levels = enumerate_levels(n, d)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda l: _stencil_surplus(f, l), levels))
    else:
        blocks = [_stencil_surplus(f, l) for l in levels]
    return dict(zip(levels, blocks))


def hierarchize_residual(f: Sampler, n: int, m: int, d: int) -> SparseInterpolant:
    """Surpluses as residuals of f against the coarser partial interpolant.

    Works for any registered order: a basis of level l vanishes at the nodes of
    every other level with |l'|_1 <= |l|_1, so sweeping by |l|_1 is exact.
    """
    _check_order(m)
    blocks: dict[tuple[int, ...], np.ndarray] = {}
    levels = enumerate_levels(n, d)
    for norm, group in itertools.groupby(levels, key=sum):
        partial = SparseInterpolant(m, n, d, blocks)
        for level in group:
            nodes = _level_nodes(level)
            residual = _sample(f, nodes) - partial.evaluate(nodes)
            blocks[level] = residual.reshape(cell_counts(level))
    return SparseInterpolant(m, n, d, blocks)


def hierarchize(f: Sampler, n: int, m: int, d: int, workers: Optional[int] = None) -> SparseInterpolant:
    """Hierarchical surpluses of ``f`` up to |l|_1 <= n + d - 1.

    ``f`` maps an (N, d) array of interior points to N values; boundary
    samples are taken as 0. m = 2 uses the tensorized stencil, higher orders
    the residual sweep.
    """
    _check_order(m)
    if m == 2:
        interp = SparseInterpolant(2, n, d, _hierarchize_stencil(f, n, d, workers))
    else:
        interp = hierarchize_residual(f, n, m, d)
    logger.debug('Hierarchized m=%d n=%d d=%d: %d levels, %d surpluses, max |v| %.3e',
                 m, n, d, len(interp.levels), len(interp), interp.max_surplus())
    return interp


def interp_eval(interp: SparseInterpolant, x):
    return interp.evaluate(x)


def interp_error_bound(n: int, m: int, d: int, p: float, constant: float = 1.0) -> float:
    """2^{-2n}(nd)^{3(d-1)} for m = 2, C 2^{-mn} n^{d-1} for m >= 3."""
    if m < 2:
        raise DomainError(f'order m must be >= 2, got {m}')
    if n < 1 or d < 1 or p < 1:
        raise DomainError(f'need n, d >= 1 and p >= 1, got n={n}, d={d}, p={p}')
    if m == 2:
        return 2.0 ** (-2 * n) * float(n * d) ** (3 * (d - 1))
    return constant * 2.0 ** (-m * n) * float(n) ** (d - 1)
