"""End-to-end assembly of sparse-grid interpolants into ReLU networks.

A block reproduces one level l of the interpolant: step networks find the
level cell of every coordinate, the cell is linearized into an integer that
addresses a point fitter holding the (normalized) surpluses, and the fitted
value is multiplied with the basis factors of that cell. Blocks are summed
with ``grid_sum`` and the output layer undoes the coefficient normalization.

Theorem-1 networks approximate in L_p on the trimmed region; the Theorem-2
assembly multiplies localized block sums psi_k with the partition of unity
phi_k for W^1_p approximation.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, DomainError
from .gadgets import (TrimmedGrid, fitter_error_bound, partition_net, point_fitter, product2, product_chain,
                      product_multi, step_carry)
from .grid import SparseInterpolant, cell_counts, enumerate_levels, hierarchize, interp_error_bound, shape_table
from .metrics import Field, NormEstimate, QuadratureConfig, error_split
from .net import (AffineLayer, ReluNetwork, SizeBudget, assert_budget, compose, concat, grid_sum, postcompose_affine,
                  precompose_affine, scale_output, sum_parallel, zero_network)

logger = logging.getLogger('Korobov.Construct')

Sampler = Callable[[np.ndarray], np.ndarray]


def choose_n(W: int, L: int) -> int:
    """n = ceil(2 log2(2WL))."""
    if W < 1 or L < 1:
        raise DomainError(f'need W, L >= 1, got W={W}, L={L}')
    return math.ceil(2 * math.log2(2 * W * L) - 1e-12)


def trimmed_measure_bound(n: int, d: int, eps: float) -> float:
    """Upper bound on the measure of [0,1]^d outside the trimmed region."""
    return eps * d * 2.0 ** (n + d) * float(n + d) ** d


def choose_epsilon(n: int, p: float, d: int, per_block_bound: float, sup_estimate: float) -> float:
    """Largest eps <= 2^{-2n-1} with mu(outside) * sup^p <= per_block_bound^p."""
    if not per_block_bound > 0.0:
        raise DomainError(f'per-block bound must be positive, got {per_block_bound}')
    cap = 2.0 ** (-2 * n - 1)
    if sup_estimate <= 0.0:
        return cap
    eps = (per_block_bound / sup_estimate) ** p / (d * 2.0 ** (n + d) * float(n + d) ** d)
    return min(cap, eps)


@dataclass(frozen=True)
class TrimmedRegion:
    """Omega_eps^l for one level, or the global Omega_eps (the finest level cells) when level is None."""

    n: int
    eps: float
    level: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.n < 1:
            raise DomainError(f'n must be >= 1, got {self.n}')
        if not 0.0 < self.eps < 2.0 ** (-2 * self.n):
            raise DomainError(f'trim width must lie in (0, 2^-2n), got {self.eps}')
        if self.level is not None:
            level = tuple(int(v) for v in self.level)
            if any(v < 1 for v in level) or sum(level) > self.n + len(level) - 1:
                raise DomainError(f'level {level} is not admissible for n={self.n}')
            object.__setattr__(self, 'level', level)

    def grids(self, d: int) -> list[TrimmedGrid]:
        if self.level is None:
            return [TrimmedGrid(2 ** (self.n - 1), self.eps)] * d
        if len(self.level) != d:
            raise DimensionMismatch(f'level {self.level} is not {d}-dimensional')
        return [TrimmedGrid(K, self.eps) for K in cell_counts(self.level)]

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.ones(x.shape[0], dtype=bool)
        for j, grid in enumerate(self.grids(x.shape[1])):
            inside &= grid.contains(x[:, j])
        return inside

    def sample(self, d: int, count: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        out = np.empty((0, d))
        while len(out) < count:
            pts = rng.random((2 * count, d))
            out = np.vstack([out, pts[self.contains(pts)]])
        return out[:count]


def linear_index(level: Sequence[int], position: Sequence[int]) -> int:
    """ind(i) = sum_j (i_j - 1)/2 * prod_{r<j} 2^{l_r - 1} (mixed radix, first coordinate fastest)."""
    ind, stride = 0, 1
    for l, i in zip(level, position):
        ind += (int(i) - 1) // 2 * stride
        stride *= 2 ** (int(l) - 1)
    return ind


def _strides(level: Sequence[int]) -> list[int]:
    strides, stride = [], 1
    for K in cell_counts(level):
        strides.append(stride)
        stride *= K
    return strides


def _check_capacity(level: Sequence[int], W: int, L: int) -> None:
    cells = math.prod(cell_counts(level))
    if cells > W * W * (2 * L) ** 2:
        raise DomainError(f'level {tuple(level)} has {cells} cells, more than W^2(2L)^2 = {W * W * 4 * L * L}')


def _cell_stage(level: Sequence[int], W: int, L: int, eps: float, shifts: Sequence[float]) -> ReluNetwork:
    """x -> (c_1, y_1, ..., c_d, y_d): level cell of y_j = x_j + shift_j, and y_j itself."""
    parts = [precompose_affine(step_carry(K, W, 2 * L, eps), [[1.0]], [shift])
             for K, shift in zip(cell_counts(level), shifts)]
    return concat(*parts)


def index_encoder(level: Sequence[int], W: int, L: int, eps: float) -> ReluNetwork:
    """x -> ind(i) on every trimmed cell of the level; size (4dW + 3d, 8L + 5)."""
    level = tuple(int(v) for v in level)
    d = len(level)
    _check_capacity(level, W, L)
    for K in cell_counts(level):
        TrimmedGrid(K, eps)
    stage = _cell_stage(level, W, L, eps, (0.0,) * d)
    weight = np.zeros((1, 2 * d))
    for j, stride in enumerate(_strides(level)):
        weight[0, 2 * j] = stride
    net = postcompose_affine(stage, weight).renamed('index' + ''.join(map(str, level)))
    return net.with_budget(SizeBudget(4 * d * W + 3 * d, 8 * L + 5))


@dataclass(frozen=True, eq=False)
class BlockPlan:
    """One level's normalized surpluses plus the gadget parameters used to build its block.

    ``shifts`` move the step-network inputs and ``candidates`` list the cell
    offsets tried per coordinate; the defaults (no shift, offset 0) give the
    Theorem-1 block.
    """

    level: tuple[int, ...]
    coefficients: np.ndarray
    W: int
    L: int
    s: float
    order: int
    n: int
    eps: float
    shifts: tuple[float, ...] = ()
    candidates: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        level = tuple(int(v) for v in self.level)
        d = len(level)
        object.__setattr__(self, 'level', level)
        if any(v < 1 for v in level) or sum(level) > self.n + d - 1:
            raise DomainError(f'level {level} is not admissible for n={self.n}')
        _check_capacity(level, self.W, self.L)
        coef = np.array(self.coefficients, dtype=float).reshape(cell_counts(level))
        coef.flags.writeable = False
        object.__setattr__(self, 'coefficients', coef)
        object.__setattr__(self, 'shifts', tuple(self.shifts) or (0.0,) * d)
        object.__setattr__(self, 'candidates', tuple(tuple(c) for c in self.candidates) or ((0,),) * d)
        if len(self.shifts) != d or len(self.candidates) != d:
            raise DimensionMismatch(f'shifts/candidates do not match the {d}-dimensional level')

    @property
    def d(self) -> int:
        return len(self.level)

    @property
    def patterns(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*self.candidates))


def default_fitter_order(m: int, d: int) -> int:
    """s = 3 for m = 2 and md + m otherwise."""
    return 3 if m == 2 else m * d + m


def _final_product_bound(d: int, W: int, L: int) -> float:
    return 3.0 ** (5 * d + 4) * float(W + 1) ** (-14 * (d + 1) * L)


def _final_product(d: int, W: int, L: int) -> ReluNetwork:
    """(t_1..t_d, v) -> v prod t_j for t_j in [0, 1], |v| <= 1."""
    if d == 1:
        net, _ = product2(W + 1, 28 * L, 4.0)
    else:
        net, _ = product_multi(d + 1, 3.0, W, math.ceil(2 * (d + 1) * L / d))
    return net


def _theta_levels(d: int, L: int) -> int:
    return 42 * d * L


def _rescale_exponent(m: int, n: int, d: int) -> int:
    return (m - 1) * d * (n + d - 1)


def _hat_factor() -> ReluNetwork:
    """z -> s(1 - |z|)."""
    return ReluNetwork([
        AffineLayer([[1.0], [-1.0]], [0.0, 0.0]),
        AffineLayer([[-1.0, -1.0]], [1.0]),
        AffineLayer([[1.0]], [0.0]),
    ], name='hat')


def _ramp_factor(m: int, n: int, d: int, W: int, L: int) -> ReluNetwork:
    """z -> prod_k 2^{-(n+d-1)} s(1 - c_k z), the normalized order-m shape."""
    coeffs = shape_table(m).coefficients
    scale = 2.0 ** (-(n + d - 1))
    ramps = ReluNetwork([
        AffineLayer([[-scale * c] for c in coeffs], [scale] * len(coeffs)),
        AffineLayer(np.eye(len(coeffs)), np.zeros(len(coeffs))),
    ], name='ramps')
    if len(coeffs) == 1:
        return ramps
    stage, _ = product2(W + 1, _theta_levels(d, L), 2.0)
    return compose(product_chain(stage, len(coeffs)), ramps)


def block_bound(plan: BlockPlan) -> float:
    """Sup bound on |block - sum_i v_i phi_{l,i}| on the block's region, in normalized units."""
    d, W, L, m = plan.d, plan.W, plan.L, plan.order
    if m == 2:
        value = _final_product_bound(d, W, L) + 2.0 * float(W) ** (2 - 2 * plan.s) * float(2 * L) ** (2 - 2 * plan.s)
    else:
        coeffs = shape_table(m).coefficients
        theta = max(0, len(coeffs) - 1) * 24.0 * float(W + 1) ** (-_theta_levels(d, L))
        rescale = 2.0 ** _rescale_exponent(m, plan.n, d)
        peak = shape_table(m).peak ** d
        value = rescale * (_final_product_bound(d, W, L) + 4.0 * d * theta) \
            + 2.0 * fitter_error_bound(W, 2 * L, plan.s) * peak
    return value * len(plan.patterns)


def block_budget(plan: BlockPlan) -> SizeBudget:
    d, W, L, m = plan.d, plan.W, plan.L, plan.order
    patterns = len(plan.patterns)
    if m == 2:
        return SizeBudget.from_bounds(patterns * 55 * d * (W + 1) * math.log2(8 * W),
                                      40 * (d + 1) ** 2 * (L + 1) * math.log2(8 * L))
    return SizeBudget.from_bounds(patterns * 66 * m * d * W * math.log2(8 * W),
                                  90 * m * m * d * d * L * math.log2(8 * L))


def _build_block(plan: BlockPlan) -> ReluNetwork:
    d, level = plan.d, plan.level
    if np.any(np.abs(plan.coefficients) > 1.0 + 1e-12):
        raise DomainError(f'block {level}: normalized coefficients must lie in [-1, 1]')
    stage = _cell_stage(level, plan.W, plan.L, plan.eps, plan.shifts)
    xi = np.clip((plan.coefficients.ravel(order='F') + 1.0) / 2.0, 0.0, 1.0)
    fitter, _ = point_fitter(xi, plan.W, 2 * plan.L, plan.s)
    value = postcompose_affine(fitter, [[2.0]], [-1.0])
    if plan.order == 2:
        factor = _hat_factor()
        product = _final_product(d, plan.W, plan.L)
        scale = 1.0
    else:
        factor = _ramp_factor(plan.order, plan.n, d, plan.W, plan.L)
        product = _final_product(d, plan.W, plan.L)
        scale = 2.0 ** _rescale_exponent(plan.order, plan.n, d)
    branch = compose(product, concat(*([factor] * d), value))
    strides = _strides(level)
    branches = []
    for delta in plan.patterns:
        weight = np.zeros((d + 1, 2 * d))
        bias = np.zeros(d + 1)
        for j, (l, shift, dj, stride) in enumerate(zip(level, plan.shifts, delta, strides)):
            # z_j = 2^l (y_j - shift_j) - (2 (c_j + delta_j) + 1)
            weight[j, 2 * j + 1] = 2.0 ** l
            weight[j, 2 * j] = -2.0
            bias[j] = -(2.0 ** l) * shift - 2.0 * dj - 1.0
            weight[d, 2 * j] = stride
            bias[d] += stride * dj
        branches.append(precompose_affine(branch, weight, bias))
    body = branches[0] if len(branches) == 1 else sum_parallel(branches)
    net = compose(body, stage)
    if scale != 1.0:
        net = scale_output(net, scale)
    return net.renamed('block' + ''.join(map(str, level))).with_budget(block_budget(plan))


def build_block_m2(plan: BlockPlan) -> tuple[ReluNetwork, float]:
    """Level block for the hat basis with its sup error bound on Omega_eps^l."""
    if plan.order != 2:
        raise DomainError(f'build_block_m2 needs an order-2 plan, got m={plan.order}')
    net = _build_block(plan)
    assert_budget(net)
    return net, block_bound(plan)


def build_block_m3(plan: BlockPlan) -> tuple[ReluNetwork, float]:
    """Level block for an order m >= 3 shape: normalized ramps, ramp products, rescaled output."""
    if plan.order < 3:
        raise DomainError(f'build_block_m3 needs m >= 3, got m={plan.order}')
    shape_table(plan.order)
    net = _build_block(plan)
    assert_budget(net)
    return net, block_bound(plan)


def build_block(plan: BlockPlan) -> tuple[ReluNetwork, float]:
    return build_block_m2(plan) if plan.order == 2 else build_block_m3(plan)


@dataclass
class BlockSummary:
    level: tuple[int, ...]
    width: int
    depth: int
    params: int
    bound: float
    patterns: int = 1


@dataclass
class ConstructionReport:
    theorem: int
    d: int
    m: int
    p: float
    W: int
    L: int
    n: int
    epsilon: float
    s: float
    c_norm: float
    width: int = 0
    depth: int = 0
    params: int = 0
    budget: Optional[SizeBudget] = None
    budget_ok: bool = True
    blocks: list[BlockSummary] = field(default_factory=list)
    bound_sum: float = 0.0
    interp_bound: float = 0.0
    grid: tuple[int, int] = (1, 1)
    seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    def finish(self, net: ReluNetwork, budget: SizeBudget) -> None:
        self.width, self.depth, self.params = net.width, net.depth, net.params
        self.budget = budget
        self.budget_ok = assert_budget(net, budget).ok

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc['budget'] = None if self.budget is None else {'width': self.budget.width, 'depth': self.budget.depth}
        doc['blocks'] = [dict(asdict(b), level=list(b.level)) for b in self.blocks]
        doc['grid'] = list(self.grid)
        return doc

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, default=_json_default)


def _json_default(obj: Any):
    if isinstance(obj, NormEstimate):
        return asdict(obj)
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f'cannot serialize {type(obj).__name__}')


def log_budget_factor(x: int, d: int) -> float:
    return x * math.log2(8 * x) ** (d + 1)


def theorem1_budget(m: int, d: int, W: int, L: int) -> SizeBudget:
    if m == 2:
        c1, c2 = 112 * d * (2 * d) ** d, 320 * d * d
    else:
        c1, c2 = 70 * m * d ** (d + 1), 90 * m * m * d * d * 2 ** d
    return SizeBudget.from_bounds(c1 * log_budget_factor(W, d), c2 * log_budget_factor(L, d))


def psi_budget(m: int, d: int, W: int, L: int) -> SizeBudget:
    c4, c5 = 68 * d * (2 * d) ** d * m * m, 89 * d * d * m * m
    return SizeBudget.from_bounds(c4 * log_budget_factor(W, d), c5 * log_budget_factor(L, d))


def theorem2_budget(m: int, d: int, W: int, L: int) -> SizeBudget:
    c4, c5 = 68 * d * (2 * d) ** d * m * m, 89 * d * d * m * m
    return SizeBudget.from_bounds(2 ** d * (c4 + 21 * d) * log_budget_factor(W, d), (c5 + 8) * log_budget_factor(L, d))


def _check_target(f: Sampler, d: int) -> None:
    fd = getattr(f, 'd', d)
    if fd != d:
        raise DimensionMismatch(f'target is {fd}-dimensional but d={d}')


def _build_all(plans: Sequence[BlockPlan], workers: Optional[int]) -> list[tuple[ReluNetwork, float]]:
    if workers and workers > 1 and len(plans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build_block, plans))
    return [build_block(plan) for plan in plans]


def assemble_blocks(nets: Sequence[ReluNetwork], d: int, depth_budget: int) -> tuple[ReluNetwork, tuple[int, int]]:
    """Grid-sum the blocks, as many serial stages as the depth budget allows."""
    nets = list(nets)
    if not nets:
        return zero_network(d), (1, 1)
    block_depth = max(1, max(net.depth for net in nets))
    n2 = max(1, min(len(nets), depth_budget // block_depth))
    n1 = math.ceil(len(nets) / n2)
    n2 = math.ceil(len(nets) / n1)
    padded = nets + [zero_network(d)] * (n1 * n2 - len(nets))
    return grid_sum(padded, n1, n2), (n1, n2)


def _plans_for(interp: SparseInterpolant, W: int, L: int, s: float, eps: float, c_norm: float,
               shifts: Sequence[float] = (), candidates: Sequence[Sequence[int]] = ()) -> list[BlockPlan]:
    return [BlockPlan(level, interp.block(level) / c_norm, W, L, s, interp.order, interp.n, eps,
                      tuple(shifts), tuple(tuple(c) for c in candidates))
            for level in enumerate_levels(interp.n, interp.d)]


def build_theorem1(f: Sampler, m: int, W: int, L: int, d: int, p: float = 2.0, *, workers: Optional[int] = None,
                   s: Optional[float] = None) -> tuple[ReluNetwork, ConstructionReport]:
    """L_p network for a zero-trace target: hierarchize, build every level block, grid-sum, rescale."""
    _check_target(f, d)
    started = time.perf_counter()
    n = choose_n(W, L)
    interp = hierarchize(f, n, m, d, workers)
    max_v = interp.max_surplus()
    c_norm = max(1.0, max_v)
    s = default_fitter_order(m, d) if s is None else s
    unit_plan = BlockPlan((1,) * d, np.zeros((1,) * d), W, L, s, m, n, 2.0 ** (-2 * n - 1))
    bound = block_bound(unit_plan)
    peak = 1.0 if m == 2 else shape_table(m).peak ** d
    eps = choose_epsilon(n, p, d, bound, 2.0 * (max_v / c_norm) * peak + bound)
    plans = _plans_for(interp, W, L, s, eps, c_norm)
    built = _build_all(plans, workers)
    budget = theorem1_budget(m, d, W, L)
    assembled, grid = assemble_blocks([net for net, _ in built], d, budget.depth)
    net = scale_output(assembled, c_norm).renamed(f'theorem1_m{m}_d{d}_W{W}_L{L}')
    report = ConstructionReport(1, d, m, p, W, L, n, eps, s, c_norm, grid=grid,
                                interp_bound=interp_error_bound(n, m, d, p))
    report.blocks = [BlockSummary(plan.level, b.width, b.depth, b.params, c_norm * bd)
                     for plan, (b, bd) in zip(plans, built)]
    report.bound_sum = float(sum(b.bound for b in report.blocks))
    report.finish(net, budget)
    report.seconds = time.perf_counter() - started
    logger.info('Theorem-1 network m=%d d=%d W=%d L=%d: n=%d, %d blocks, size (%d, %d), %d params',
                m, d, W, L, n, len(plans), net.width, net.depth, net.params)
    return net.with_budget(budget), report


# --- W1p networks on the whole cube ---------------------------------------------------

def partition_period(n: int) -> int:
    """K = 2^{n-1}: partition cells coincide with the finest level cells."""
    return 2 ** (n - 1)


def build_psi_k(f: Sampler, m: int, W: int, L: int, d: int, p: float, k: Sequence[int], *,
                interp: Optional[SparseInterpolant] = None, workers: Optional[int] = None,
                s: Optional[float] = None) -> tuple[ReluNetwork, ConstructionReport]:
    """Block sum that reproduces Pi_n f on Omega_k, with W1inf bounds per block.

    Coordinates with k_j = 1 use plain step networks (trims fall in the gaps
    of Omega_1). Coordinates with k_j = 2 read the cell of x_j + 5/(8K) and try
    both that cell and its left neighbour; the wrong candidate's hat is zero.
    """
    k = tuple(int(v) for v in k)
    if len(k) != d or any(v not in (1, 2) for v in k):
        raise DomainError(f'k must be in {{1,2}}^{d}, got {k}')
    _check_target(f, d)
    started = time.perf_counter()
    n = choose_n(W, L)
    if interp is None:
        interp = hierarchize(f, n, m, d, workers)
    K = partition_period(n)
    eps = 1.0 / (8 * K)
    c_norm = max(1.0, interp.max_surplus())
    s = default_fitter_order(m, d) if s is None else s
    shifts = [0.0 if kind == 1 else 5.0 / (8 * K) for kind in k]
    candidates = [(0,) if kind == 1 else (0, -1) for kind in k]
    plans = _plans_for(interp, W, L, s, eps, c_norm, shifts, candidates)
    built = _build_all(plans, workers)
    budget = psi_budget(m, d, W, L)
    assembled, grid = assemble_blocks([net for net, _ in built], d, budget.depth)
    net = scale_output(assembled, c_norm).renamed('psi_' + ''.join(map(str, k)))
    report = ConstructionReport(2, d, m, p, W, L, n, eps, s, c_norm, grid=grid,
                                interp_bound=interp_error_bound(n, m, d, p))
    report.blocks = [BlockSummary(plan.level, b.width, b.depth, b.params,
                                  c_norm * bd * 2.0 ** max(plan.level), len(plan.patterns))
                     for plan, (b, bd) in zip(plans, built)]
    report.bound_sum = float(sum(b.bound for b in report.blocks))
    report.extras.update(k=list(k), K=K, sup_bound=psi_sup_bound(plans, c_norm))
    report.finish(net, budget)
    report.seconds = time.perf_counter() - started
    return net.with_budget(budget), report


def psi_sup_bound(plans: Sequence[BlockPlan], c_norm: float) -> float:
    """|psi_k| <= c sum_l patterns_l (1 + product error), everywhere on the cube."""
    return float(c_norm * sum(len(plan.patterns) * (1.0 + _final_product_bound(plan.d, plan.W, plan.L))
                              for plan in plans))


def _stack(first: ReluNetwork, second: ReluNetwork) -> ReluNetwork:
    """x -> (first(x), second(x))."""
    d = first.input_dim
    return precompose_affine(concat(first, second), np.vstack([np.eye(d), np.eye(d)]))


def build_theorem2(f: Sampler, m: int, W: int, L: int, d: int, p: float = 2.0, *, workers: Optional[int] = None,
                   s: Optional[float] = None,
                   quadrature: Optional[QuadratureConfig] = None) -> tuple[ReluNetwork, ConstructionReport]:
    """W^1_p network sum_k product(phi_k, psi_k) over the 2^d partition families.

    With ``quadrature`` the report's extras carry E0 = ||f - Pi_n f||,
    E1 = ||Pi_n f - sum_k phi_k psi_k|| and E2 = ||sum_k phi_k psi_k - net||
    in the W^1_p norm.
    """
    _check_target(f, d)
    started = time.perf_counter()
    n = choose_n(W, L)
    interp = hierarchize(f, n, m, d, workers)
    K = partition_period(n)
    pieces, psi_reports = [], []
    for k in itertools.product((1, 2), repeat=d):
        phi_k, phi_contract = partition_net(K, d, k, W, L, n)
        psi_k, psi_report = build_psi_k(f, m, W, L, d, p, k, interp=interp, workers=workers, s=s)
        pieces.append((k, phi_k, psi_k, phi_contract.error_bound))
        psi_reports.append(psi_report)
    C = max(r.extras['sup_bound'] for r in psi_reports)
    a = C + 50.0 * d ** 2.5 + 1.0
    levels = 4 * m * d * L + math.ceil(math.log(6.0 * a * a) / math.log(W + 1))
    product, product_contract = product2(W + 1, levels, a)
    terms = [compose(product, _stack(phi_k, psi_k)) for _, phi_k, psi_k, _ in pieces]
    budget = theorem2_budget(m, d, W, L)
    net = sum_parallel(terms).renamed(f'theorem2_m{m}_d{d}_W{W}_L{L}')
    first = psi_reports[0]
    report = ConstructionReport(2, d, m, p, W, L, n, first.epsilon, first.s, first.c_norm,
                                interp_bound=interp_error_bound(n, m, d, p))
    report.blocks = [b for r in psi_reports for b in r.blocks]
    report.bound_sum = float(sum(r.bound_sum * (1.0 + 4.0 * K) + C * bound + product_contract.error_bound
                                 for r, (_, _, _, bound) in zip(psi_reports, pieces)))
    report.extras.update(K=K, a=a, product_levels=levels,
                         pieces=[{'k': list(k), 'phi': [phi.width, phi.depth], 'psi': [psi.width, psi.depth]}
                                 for k, phi, psi, _ in pieces])
    if quadrature is not None:
        split = theorem2_error_split(f, interp, [(phi, psi) for _, phi, psi, _ in pieces], net, p, quadrature)
        report.extras.update({key: value.value for key, value in split.items()})
    report.finish(net, budget)
    report.seconds = time.perf_counter() - started
    logger.info('Theorem-2 network m=%d d=%d W=%d L=%d: K=%d, size (%d, %d)', m, d, W, L, K, net.width, net.depth)
    return net.with_budget(budget), report


def theorem2_error_split(f: Sampler, interp: SparseInterpolant, pairs: Sequence[tuple[ReluNetwork, ReluNetwork]],
                         net: ReluNetwork, p: float,
                         quadrature: Optional[QuadratureConfig] = None) -> dict[str, NormEstimate]:
    """E0 (interpolation), E1 (localized blocks), E2 (final products) in the W^1_p norm."""
    e0, e1, e2 = error_split([f, interp, Field.product_sum(pairs), net], p, quadrature, sobolev=True)
    return {'E0': e0, 'E1': e1, 'E2': e2}
