"""Primitive ReLU constructions, each delivered with the contract it satisfies.

* ``step_network``   exact integer cell index on trimmed cells
* ``point_fitter``   bit-extraction lookup of K samples at integer inputs
* ``product2``       x*y on (-a, a)^2 via base-N sawtooth squaring
* ``product_multi``  product of d+1 factors by chaining ``product2``
* ``partition_net``  the trapezoid partition of unity g_k

Networks are assembled row by row with ``_LayerPlan`` against the outputs of
the previous layer; the exact gadgets only ever add and subtract small
integers and dyadic numbers, so their outputs are exact in double precision.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .net import (AffineLayer, ReluNetwork, SizeBudget, affine_network, assert_budget, compose, concat,
                  identity, postcompose_affine, precompose_affine, scale_output, sum_parallel, zero_network)

logger = logging.getLogger('Korobov.Gadgets')

# Tolerance quoted by exact gadgets (integers on safe cells, exact sawtooth).
EXACT_TOL = 1e-9
# Desk-scale cap on stored bits per sample so all plane integers stay below 2^53.
MAX_BITS = 40
MAX_BITS_PER_PLANE = 40
# Round-off allowance added to every stated bound when a contract is checked.
CHECK_SLACK = 1e-7


class Norm(str, Enum):
    SUP = 'sup'
    W1_INF = 'w1inf'


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise DomainError(f'empty box {self.lower} .. {self.upper}')

    @classmethod
    def cube(cls, d: int, lo: float = 0.0, hi: float = 1.0) -> Box:
        return cls((lo,) * d, (hi,) * d)

    def describe(self) -> str:
        return 'x'.join(f'[{lo:g},{hi:g}]' for lo, hi in zip(self.lower, self.upper))


def box_points(box: Box, per_axis: int) -> np.ndarray:
    """One point per cell of a per_axis^d mesh of ``box``.

    Axis j is shifted by frac((j + 1) sqrt 2) of a cell. Sawtooth kinks sit on
    dyadic values, and partition products also kink along x_i - x_j = const;
    distinct irrational offsets keep every sample off both sets.
    """
    axes = []
    for j, (lo, hi) in enumerate(zip(box.lower, box.upper)):
        offset = math.fmod((j + 1) * math.sqrt(2.0), 1.0)
        axes.append(lo + (hi - lo) * (np.arange(per_axis) + offset) / per_axis)
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


@dataclass(frozen=True)
class TrimmedGrid:
    """K equal cells of [0, 1], each but the last trimmed by eps at its right end."""

    K: int
    eps: float

    def __post_init__(self):
        if self.K < 1:
            raise DomainError(f'cell count must be >= 1, got {self.K}')
        if not 0.0 < self.eps <= 1.0 / (3 * self.K):
            raise DomainError(f'trim width must lie in (0, 1/(3K)] = (0, {1.0 / (3 * self.K):.3g}], got {self.eps}')

    def safe_intervals(self) -> list[tuple[float, float]]:
        return [(k / self.K, (k + 1) / self.K - (self.eps if k <= self.K - 2 else 0.0)) for k in range(self.K)]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cells = np.clip(np.floor(x * self.K).astype(int), 0, self.K - 1)
        right = (cells + 1) / self.K - np.where(cells <= self.K - 2, self.eps, 0.0)
        return (x >= 0.0) & (x <= 1.0) & (x <= right)

    def sample(self, per_interval: int) -> tuple[np.ndarray, np.ndarray]:
        """Evenly spread points in every safe interval and their cell index."""
        pts, cells = [], []
        for k, (lo, hi) in enumerate(self.safe_intervals()):
            pts.append(np.linspace(lo, hi, per_interval))
            cells.append(np.full(per_interval, k))
        return np.concatenate(pts), np.concatenate(cells)

    def describe(self) -> str:
        return f'trimmed cells K={self.K}, eps={self.eps:.3g}'


@dataclass(frozen=True)
class IntegerPoints:
    K: int

    def describe(self) -> str:
        return f'integers 0..{self.K - 1}'


@dataclass(frozen=True)
class OmegaK:
    """The shifted cell family Omega_k of the partition of unity with period 1/K."""

    K: int
    k: tuple[int, ...]

    def __post_init__(self):
        if self.K < 1 or not self.k or any(v not in (1, 2) for v in self.k):
            raise DomainError(f'need K >= 1 and k in {{1,2}}^d, got K={self.K}, k={self.k}')

    @property
    def d(self) -> int:
        return len(self.k)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        frac = x * self.K - np.floor(x * self.K)
        inside = np.ones(x.shape[0], dtype=bool)
        for j, kind in enumerate(self.k):
            if kind == 1:
                member = (frac[:, j] <= 0.75) & (x[:, j] < 1.0)
            else:
                member = (frac[:, j] <= 0.25) | (frac[:, j] >= 0.5)
            inside &= member & (x[:, j] >= 0.0) & (x[:, j] <= 1.0)
        return inside

    def describe(self) -> str:
        return f'Omega_k K={self.K}, k={self.k}'


Region = Box | TrimmedGrid | IntegerPoints | OmegaK


@dataclass(frozen=True)
class GadgetContract:
    name: str
    size: SizeBudget
    error_bound: float
    norm: Norm
    region: Region
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        # deep gadgets state bounds that underflow to 0.0; the check slack still applies
        if not (self.error_bound >= 0.0 and math.isfinite(self.error_bound)):
            raise DomainError(f'{self.name}: error bound must be finite and >= 0, got {self.error_bound}')

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'params': dict(self.params),
            'width_bound': self.size.width,
            'depth_bound': self.size.depth,
            'error_bound': self.error_bound,
            'norm': self.norm.value,
            'region': self.region.describe(),
        }


@dataclass(frozen=True)
class ContractCheck:
    contract: GadgetContract
    width: int
    depth: int
    measured: float
    slack: float = CHECK_SLACK

    @property
    def size_ok(self) -> bool:
        return self.contract.size.admits(self.width, self.depth)

    @property
    def error_ok(self) -> bool:
        return bool(self.measured <= self.contract.error_bound + self.slack)

    @property
    def passed(self) -> bool:
        return self.size_ok and self.error_ok

    @property
    def margin(self) -> float:
        return self.contract.error_bound - self.measured

    def to_row(self) -> dict:
        row = self.contract.to_dict()
        row.update(width=self.width, depth=self.depth, measured=self.measured, margin=self.margin,
                   size_ok=self.size_ok, error_ok=self.error_ok, passed=self.passed)
        return row


def check_contract(net: ReluNetwork, contract: GadgetContract, points: np.ndarray,
                   target: Callable[[np.ndarray], np.ndarray],
                   target_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                   grad_points: Optional[np.ndarray] = None, slack: float = CHECK_SLACK) -> ContractCheck:
    """Measure sup (and for W1inf contracts gradient) error of ``net`` on the given samples."""
    values = net.evaluate(points)[:, 0]
    measured = float(np.max(np.abs(values - target(points)))) if len(points) else 0.0
    if contract.norm is Norm.W1_INF and target_grad is not None:
        gp = points if grad_points is None else grad_points
        grads = net.gradient(gp)[:, 0, :]
        measured = max(measured, float(np.max(np.abs(grads - target_grad(gp)))))
    check = ContractCheck(contract, net.width, net.depth, measured, slack)
    if not check.passed:
        logger.warning('%s failed: size (%d, %d) vs (%d, %d), error %.3e vs bound %.3e', contract.name, net.width,
                       net.depth, contract.size.width, contract.size.depth, measured, contract.error_bound)
    return check


def product_perturbation_bound(m: int, eps: float) -> float:
    """|prod a - prod b| <= 2^m eps for |a_i| <= 2, |b_i| <= 1, |a_i - b_i| <= eps."""
    return 2.0 ** m * eps


def check_product_perturbation(m: int, eps: float, count: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Largest observed |prod a - prod b| over random admissible tuples, and the bound."""
    rng = np.random.default_rng(seed)
    b = rng.uniform(-1.0, 1.0, size=(count, m))
    a = b + rng.uniform(-eps, eps, size=(count, m))
    worst = float(np.max(np.abs(np.prod(a, axis=1) - np.prod(b, axis=1))))
    return worst, product_perturbation_bound(m, eps)


# --- layer assembly ---------------------------------------------------------

Form = tuple[dict, float]


class _LayerPlan:
    """Rows of one affine layer, written against the previous layer's outputs."""

    def __init__(self, in_dim: int):
        self.in_dim = in_dim
        self._rows: list[dict] = []
        self._bias: list[float] = []

    def add(self, terms: Optional[dict] = None, bias: float = 0.0) -> int:
        self._rows.append(dict(terms or {}))
        self._bias.append(float(bias))
        return len(self._rows) - 1

    def add_form(self, form: Form, shift: float = 0.0) -> int:
        return self.add(form[0], form[1] + shift)

    def __len__(self) -> int:
        return len(self._rows)

    def layer(self) -> AffineLayer:
        weight = np.zeros((len(self._rows), self.in_dim))
        for r, terms in enumerate(self._rows):
            for c, v in terms.items():
                weight[r, c] += v
        return AffineLayer(weight, self._bias)


def _combine(*parts: tuple[float, Form], const: float = 0.0) -> Form:
    terms: dict = {}
    total = const
    for coef, (t, c) in parts:
        for idx, v in t.items():
            terms[idx] = terms.get(idx, 0.0) + coef * v
        total += coef * c
    return terms, total


def _var(idx: int) -> Form:
    return {idx: 1.0}, 0.0


def _sum_vars(indices: Sequence[int], coefs: Sequence[float]) -> Form:
    return {i: float(c) for i, c in zip(indices, coefs)}, 0.0


# --- step networks ------------------------------------------------------------

def _ramp(weights: Sequence[float], offset: float, threshold: float, band: float) -> tuple[np.ndarray, float]:
    """Pre-activation a with a <= 0 below threshold - 3band/4 and a >= 1 above threshold - band/4,
    where the compared quantity is weights . u + offset."""
    scale = 2.0 / band
    return np.asarray(weights, dtype=float) * scale, (offset - threshold + band) * scale - 0.5


def _ramp_stack(carry_dim: int, ramps: Sequence[tuple[np.ndarray, float]], per_layer: int) -> ReluNetwork:
    """u -> (count, u), count = #{t : a_t(u) >= 1}, exact whenever no a_t(u) lies in (0, 1).

    Each ramp is 1 - s(1 - s(a)); consecutive groups are pipelined so a group's
    second half shares a layer with the next group's first half. Carried
    inputs pass through s, so they must be nonnegative after the first layer.
    Depth = number of groups + 1, width <= 2*per_layer + carry_dim + 1.
    """
    p = carry_dim
    groups = [list(ramps[i:i + per_layer]) for i in range(0, len(ramps), per_layer)]
    if not groups:
        return affine_network(np.vstack([np.zeros((1, p)), np.eye(p)]), name='count0')
    layers = []
    plan = _LayerPlan(p)
    U = [plan.add({j: w[j] for j in range(p) if w[j] != 0.0}, off) for w, off in groups[0]]
    C = [plan.add({j: 1.0}) for j in range(p)]
    V: list[int] = []
    S: Optional[int] = None
    layers.append(plan.layer())
    for t in range(1, len(groups) + 1):
        plan = _LayerPlan(len(layers[-1].bias))
        new_v = [plan.add({u: -1.0}, 1.0) for u in U]
        new_u = [] if t == len(groups) else [
            plan.add({C[j]: w[j] for j in range(p) if w[j] != 0.0}, off) for w, off in groups[t]]
        new_c = [plan.add({c: 1.0}) for c in C]
        terms = {v: -1.0 for v in V}
        if S is not None:
            terms[S] = 1.0
        new_s = plan.add(terms, float(len(V)))
        layers.append(plan.layer())
        U, V, C, S = new_u, new_v, new_c, new_s
    out = _LayerPlan(len(layers[-1].bias))
    terms = {v: -1.0 for v in V}
    terms[S] = 1.0
    out.add(terms, float(len(V)))
    for c in C:
        out.add({c: 1.0})
    layers.append(out.layer())
    return ReluNetwork(layers, name='ramp_stack')


def step_carry(K: int, W: int, L: int, eps: float) -> ReluNetwork:
    """x -> (k, x) with k the trimmed cell index of x; x is carried through s (x >= 0)."""
    per_layer = 2 * W
    fine = min(K, per_layer * L)
    blocks = math.ceil(K / fine)
    coarse_ramps = [_ramp([1.0], 0.0, j * fine / K, eps) for j in range(1, blocks)]
    stage_a = _ramp_stack(1, coarse_ramps, per_layer)
    # fine position r = K x - fine * k1 in cell units; trims scale by K
    fine_ramps = [_ramp([-float(fine), float(K)], 0.0, float(m), eps * K) for m in range(1, fine)]
    stage_b = _ramp_stack(2, fine_ramps, per_layer)
    readout = affine_network([[1.0, float(fine), 0.0], [0.0, 0.0, 1.0]])
    net = compose(readout, compose(stage_b, stage_a))
    if K % fine:
        # the last block is partial: clamp k <= K - 1
        clamp = ReluNetwork([
            AffineLayer([[-1.0, 0.0], [0.0, 1.0]], [K - 1.0, 0.0]),
            AffineLayer([[-1.0, 0.0], [0.0, 1.0]], [K - 1.0, 0.0]),
        ])
        net = compose(clamp, net)
    return net.renamed(f'step{K}')


def step_network(K: int, W: int, L: int, eps: float) -> tuple[ReluNetwork, GadgetContract]:
    """Map every safe interval [k/K, (k+1)/K - eps*1_{k<=K-2}] exactly to k; size (4W+3, 4L+5)."""
    if W < 1 or L < 1:
        raise DomainError(f'need W, L >= 1, got W={W}, L={L}')
    if K > W * W * L * L:
        raise DomainError(f'K={K} exceeds W^2 L^2 = {W * W * L * L}')
    region = TrimmedGrid(K, eps)
    contract = GadgetContract('step_network', SizeBudget(4 * W + 3, 4 * L + 5), EXACT_TOL, Norm.SUP, region,
                              {'K': K, 'W': W, 'L': L, 'eps': eps})
    if K == 1:
        net = zero_network(1)
    else:
        net = postcompose_affine(step_carry(K, W, L, eps), [[1.0, 0.0]])
    return net.with_budget(contract.size).renamed(f'step{K}'), contract


# --- point fitting by bit extraction ------------------------------------------

def fitter_bits(W: int, L: int, s: float) -> int:
    return min(math.ceil(2 * s * math.log2(W * L)) + 2, MAX_BITS)


def fitter_error_bound(W: int, L: int, s: float) -> float:
    """W^{-2s} L^{-2s}."""
    return float(W * L) ** (-2.0 * s)


def _fitter_plane_size(K: int, L: int) -> int:
    return max(1, min(K, MAX_BITS_PER_PLANE, math.floor(2 * (L + 2) * math.log2(4 * L))))


def _bit_extractor(theta0: np.ndarray, plane_size: int) -> ReluNetwork:
    """(i1, i2) -> sum_b 2^{-b-1} bit i2 of plane b of block i1, clamped to [0, 1].

    ``theta0[c, b]`` holds block c of plane b as an integer whose binary digits
    (most significant first) are the bits for positions i2 = 0..plane_size-1.
    """
    blocks, planes = theta0.shape
    top = 2.0 ** plane_size
    half = 2.0 ** (plane_size - 1)
    layers = []
    if blocks > 1:
        plan = _LayerPlan(2)
        hi = [plan.add({0: 1.0}, 1.0 - c) for c in range(1, blocks)]
        lo = [plan.add({0: 1.0}, -float(c)) for c in range(1, blocks)]
        i2 = _var(plan.add({1: 1.0}))
        layers.append(plan.layer())
        theta = []
        for b in range(planes):
            parts = [(theta0[c, b] - theta0[c - 1, b], _combine((1.0, _var(hi[c - 1])), (-1.0, _var(lo[c - 1]))))
                     for c in range(1, blocks)]
            theta.append(_combine(*parts, const=float(theta0[0, b])))
        in_dim = len(plan)
    else:
        i2 = _var(1)
        theta = [({}, float(theta0[0, b])) for b in range(planes)]
        in_dim = 2
    weights = [2.0 ** -(b + 1) for b in range(planes)]
    prev_pq: Optional[list[tuple[int, int]]] = None
    prev_ef: Optional[tuple[int, int]] = None
    prev_sel: Optional[list[int]] = None
    acc: Optional[int] = None
    for t in range(plane_size + 1):
        plan = _LayerPlan(in_dim)
        if t < plane_size:
            pq = [(plan.add_form(th, 1.0 - half), plan.add_form(th, -half)) for th in theta]
            carry = [plan.add_form(th) for th in theta] if t < plane_size - 1 else []
            ef = (plan.add_form(i2, -float(t)), plan.add_form(_combine((-1.0, i2)), float(t)))
            i2_next = plan.add_form(i2) if t < plane_size - 1 else None
        sel = None
        if prev_pq is not None:
            sel = [plan.add({p: 1.0, q: -1.0, prev_ef[0]: -1.0, prev_ef[1]: -1.0}) for p, q in prev_pq]
        acc_terms: dict = {} if acc is None else {acc: 1.0}
        if prev_sel is not None:
            acc_terms.update({s_: w for s_, w in zip(prev_sel, weights)})
        new_acc = plan.add(acc_terms) if acc_terms else None
        layers.append(plan.layer())
        in_dim = len(plan)
        acc, prev_sel = new_acc, sel
        if t < plane_size:
            prev_pq, prev_ef = pq, ef
            if t < plane_size - 1:
                theta = [_combine((2.0, _var(c)), (-top, _var(p)), (top, _var(q))) for c, (p, q) in zip(carry, pq)]
                i2 = _var(i2_next)
        else:
            prev_pq = None
    # clamp(v) = s(v) - s(v - 1) on the final sum
    plan = _LayerPlan(in_dim)
    value_terms = {} if acc is None else {acc: 1.0}
    value_terms.update({s_: w for s_, w in zip(prev_sel, weights)})
    pos = plan.add(value_terms)
    over = plan.add(value_terms, -1.0)
    layers.append(plan.layer())
    layers.append(AffineLayer([[1.0 if j == pos else (-1.0 if j == over else 0.0) for j in range(len(plan))]], [0.0]))
    return ReluNetwork(layers, name='bit_extractor')


def point_fitter(samples: Sequence[float], W: int, L: int, s: float) -> tuple[ReluNetwork, GadgetContract]:
    """Network with |phi(i) - xi_i| <= W^{-2s} L^{-2s} at i = 0..K-1 and output clamped to [0, 1]."""
    xi = np.asarray(samples, dtype=float).reshape(-1)
    K = xi.size
    if W < 1 or L < 1 or s < 1:
        raise DomainError(f'need W, L, s >= 1, got W={W}, L={L}, s={s}')
    if K < 1 or K > W * W * L * L:
        raise DomainError(f'{K} samples do not fit W^2 L^2 = {W * W * L * L}')
    if not np.all(np.isfinite(xi)) or np.any(xi < 0.0) or np.any(xi > 1.0):
        raise DomainError('point fitter samples must lie in [0, 1]')
    bits = fitter_bits(W, L, s)
    contract = GadgetContract(
        'point_fitter',
        SizeBudget.from_bounds(16 * s * (W + 1) * math.log2(8 * W), 5 * (L + 2) * math.log2(4 * L)),
        fitter_error_bound(W, L, s), Norm.SUP, IntegerPoints(K), {'K': K, 'W': W, 'L': L, 's': s, 'bits': bits})
    scale = 2 ** bits
    codes = [min(int(round(v * scale)), scale - 1) for v in xi]
    if K == 1:
        net = affine_network([[0.0]], [codes[0] / scale], name='fitter')
        return net.with_budget(contract.size), contract
    plane_size = _fitter_plane_size(K, L)
    blocks = math.ceil(K / plane_size)
    theta0 = np.zeros((blocks, bits))
    for i, code in enumerate(codes):
        c, t = divmod(i, plane_size)
        for b in range(bits):
            if (code >> (bits - 1 - b)) & 1:
                theta0[c, b] += 2.0 ** (plane_size - 1 - t)
    extractor = _bit_extractor(theta0, plane_size)
    if blocks == 1:
        front = affine_network([[0.0], [1.0]])
    else:
        span = float(blocks * plane_size)
        core = step_carry(blocks, W, L, 1.0 / (4 * blocks * plane_size))
        core = precompose_affine(core, [[1.0 / span]], [0.5 / span])
        # (i1, y) -> (i1, i - plane_size * i1) with i = span * y - 1/2
        front = postcompose_affine(core, [[1.0, 0.0], [-float(plane_size), span]], [0.0, -0.5])
    net = compose(extractor, front).renamed('fitter')
    logger.debug('point_fitter K=%d: %d blocks x %d positions, %d bits, size (%d, %d)',
                 K, blocks, plane_size, bits, net.width, net.depth)
    return net.with_budget(contract.size), contract


# --- products -------------------------------------------------------------------

def _fold_coefficients(N: int) -> np.ndarray:
    """F_N(v) = dist(N v, 2Z) on [0, 1] as sum_j c_j s(v - j/N)."""
    c = np.array([2.0 * N * (-1) ** j for j in range(N)])
    c[0] = float(N)
    return c


def _defect_coefficients(N: int) -> np.ndarray:
    """D(v) = v - I_N(v^2) on [0, 1] as sum_j d_j s(v - j/N)."""
    d = np.full(N, -2.0 / N)
    d[0] = 1.0 - 1.0 / N
    return d


def _square_channel(N: int, levels: int) -> ReluNetwork:
    """z -> I_{N^levels}(z^2) for |z| <= 1; depth levels + 1, width N + 2."""
    fold, defect = _fold_coefficients(N), _defect_coefficients(N)
    knots = [j / N for j in range(N)]
    plan = _LayerPlan(1)
    plus, minus = plan.add({0: 1.0}), plan.add({0: -1.0})
    layers = [plan.layer()]
    u_form = _sum_vars([plus, minus], [1.0, 1.0])
    v_form = u_form
    acc: Optional[int] = None
    prev_nodes: list[int] = []
    u_carry: Optional[int] = None
    for s in range(1, levels + 1):
        plan = _LayerPlan(len(layers[-1].bias))
        nodes = [plan.add_form(v_form, -knot) for knot in knots]
        if s == 1:
            new_u = nodes[0]
            new_acc = None
        else:
            new_u = plan.add_form(u_form)
            terms = {} if acc is None else {acc: 1.0}
            for idx, coef in zip(prev_nodes, defect):
                terms[idx] = terms.get(idx, 0.0) + coef * float(N) ** (-2 * (s - 2))
            new_acc = plan.add(terms)
        layers.append(plan.layer())
        prev_nodes, acc, u_carry = nodes, new_acc, new_u
        u_form = _var(u_carry)
        v_form = _sum_vars(nodes, fold)
    out = _LayerPlan(len(layers[-1].bias))
    terms = {u_carry: 1.0}
    if acc is not None:
        terms[acc] = terms.get(acc, 0.0) - 1.0
    for idx, coef in zip(prev_nodes, defect):
        terms[idx] = terms.get(idx, 0.0) - coef * float(N) ** (-2 * (levels - 1))
    out.add(terms)
    layers.append(out.layer())
    return ReluNetwork(layers, name=f'square{N}^{levels}')


def product2(W: int, L: int, a: float) -> tuple[ReluNetwork, GadgetContract]:
    """phi(x, y) ~ xy on (-a, a)^2 with value and gradient error <= 6 a^2 W^{-L}; size (15W, 2L).

    xy = 2a^2 (S(|x+y|/2a) - S(|x|/2a) - S(|y|/2a)) with S the interpolant of
    u^2 on a grid of N^{2L-1} cells, N = max(2, W). The x+y and y channels
    are identical when x = 0, so phi(0, y) = 0.
    """
    if a < 2:
        raise DomainError(f'product2 needs a >= 2, got {a}')
    if W < 1 or L < 1:
        raise DomainError(f'need W, L >= 1, got W={W}, L={L}')
    bound = 6.0 * a * a * float(W) ** (-L)
    contract = GadgetContract('product2', SizeBudget(15 * W, 2 * L), bound, Norm.W1_INF,
                              Box((-a, -a), (a, a)), {'W': W, 'L': L, 'a': a})
    channel = _square_channel(max(2, W), 2 * L - 1)
    inv = 1.0 / (2.0 * a)
    parts = [scale_output(precompose_affine(channel, [[inv, inv]]), 2.0 * a * a),
             scale_output(precompose_affine(channel, [[inv, 0.0]]), -2.0 * a * a),
             scale_output(precompose_affine(channel, [[0.0, inv]]), -2.0 * a * a)]
    net = sum_parallel(parts).renamed('product2')
    return net.with_budget(contract.size), contract


def product_chain(stage: ReluNetwork, arity: int) -> ReluNetwork:
    """Multiply ``arity`` inputs left to right with a two-input product ``stage``."""
    net: Optional[ReluNetwork] = None
    for r in range(arity - 1):
        rest = arity - 2 - r
        layer = concat(stage, identity(rest)) if rest else stage
        net = layer if net is None else compose(layer, net)
    return net


def product_multi(arity: int, c: float, W: int, L: int) -> tuple[ReluNetwork, GadgetContract]:
    """Product of x_1..x_d in [-2, 2] and x_{d+1} in [-c, c]; W1inf error <= 14 a^4 (W+1)^{-7dL}."""
    d = arity - 1
    if d < 2:
        raise DomainError(f'product_multi needs arity >= 3, got {arity}')
    if c <= 2:
        raise DomainError(f'product_multi needs c > 2, got {c}')
    a = max(2.0 ** (d + 1), float(c))
    contract = GadgetContract(
        'product_multi', SizeBudget(15 * (W + 1) + 2 * d - 1, 14 * d * d * L),
        14.0 * a ** 4 * float(W + 1) ** (-7 * d * L), Norm.W1_INF,
        Box((-2.0,) * d + (-float(c),), (2.0,) * d + (float(c),)), {'arity': arity, 'c': c, 'W': W, 'L': L})
    stage, _ = product2(W + 1, 7 * d * L, a)
    net = product_chain(stage, arity).renamed(f'product{arity}')
    return net.with_budget(contract.size), contract


# --- partition of unity ---------------------------------------------------------

def _partition_center(K: int, kind: int) -> float:
    return (3.0 if kind == 1 else 7.0) / (8.0 * K)


def partition_g(K: int, d: int, k: Sequence[int]) -> Callable[[np.ndarray], np.ndarray]:
    """Exact g_k(x) = prod_j g_{k_j}(x_j): trapezoids of period 1/K, plateau 1/(4K), ramps of slope 4K."""
    k = tuple(int(v) for v in k)
    OmegaK(K, k)
    if len(k) != d:
        raise DomainError(f'k={k} does not have {d} entries')
    centers = np.array([_partition_center(K, kind) for kind in k])

    def g(x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = K * np.abs(x - centers)
        r = np.abs(t - np.rint(t))
        return np.prod(np.clip(1.5 - 4.0 * r, 0.0, 1.0), axis=1)

    return g


def partition_g_gradient(K: int, d: int, k: Sequence[int]) -> Callable[[np.ndarray], np.ndarray]:
    """Almost-everywhere gradient of ``partition_g``; zero on plateaus and outside the support."""
    k = tuple(int(v) for v in k)
    if len(k) != d:
        raise DomainError(f'k={k} does not have {d} entries')
    centers = np.array([_partition_center(K, kind) for kind in k])

    def grad(x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = K * np.abs(x - centers)
        r = np.abs(t - np.rint(t))
        pre = 1.5 - 4.0 * r
        h = np.clip(pre, 0.0, 1.0)
        ramp = (pre > 0.0) & (pre < 1.0)
        dh = np.where(ramp, -4.0 * K * np.sign(t - np.rint(t)) * np.sign(x - centers), 0.0)
        out = np.empty_like(x)
        for j in range(d):
            out[:, j] = dh[:, j] * np.prod(np.delete(h, j, axis=1), axis=1)
        return out

    return grad


def _fold_factors(total: int, limit: int) -> list[int]:
    """Split ``total`` into fold factors, merging primes while the product stays <= limit."""
    primes, m, p = [], total, 2
    while p * p <= m:
        while m % p == 0:
            primes.append(p)
            m //= p
        p += 1
    if m > 1:
        primes.append(m)
    factors, current = [], 1
    for prime in sorted(primes):
        if current * prime <= limit:
            current *= prime
        else:
            if current > 1:
                factors.append(current)
            current = prime
    if current > 1:
        factors.append(current)
    return factors


def _partition_1d(K: int, kind: int, per_layer: int) -> ReluNetwork:
    """Exact sawtooth network for g_1 or g_2: |x - c| -> folds F_{2K} -> trapezoid."""
    center = _partition_center(K, kind)
    plan = _LayerPlan(1)
    plus, minus = plan.add({0: 1.0}, -center), plan.add({0: -1.0}, center)
    layers = [plan.layer()]
    v_form = _sum_vars([plus, minus], [1.0, 1.0])
    for N in _fold_factors(2 * K, per_layer):
        coefs = _fold_coefficients(N)
        chunks = [list(range(i, min(i + per_layer, N))) for i in range(0, N, per_layer)]
        partial: Optional[tuple[int, int]] = None
        v_carry: Optional[Form] = None
        prev_nodes: list[tuple[int, float]] = []
        for n_chunk, chunk in enumerate(chunks):
            plan = _LayerPlan(len(layers[-1].bias))
            source = v_form if v_carry is None else v_carry
            nodes = [(plan.add_form(source, -j / N), coefs[j]) for j in chunk]
            last = n_chunk == len(chunks) - 1
            if not last:
                v_carry = _var(plan.add_form(source))
            if prev_nodes:
                run = _combine(*[(coef, _var(idx)) for idx, coef in prev_nodes])
                if partial is not None:
                    run = _combine((1.0, run), (1.0, _var(partial[0])), (-1.0, _var(partial[1])))
                partial = (plan.add_form(run), plan.add_form(_combine((-1.0, run))))
            layers.append(plan.layer())
            prev_nodes = nodes
        v_form = _combine(*[(coef, _var(idx)) for idx, coef in prev_nodes])
        if partial is not None:
            v_form = _combine((1.0, v_form), (1.0, _var(partial[0])), (-1.0, _var(partial[1])))
    # r = F_{2K}/2 = dist(K|x - c|, Z); H(r) = s(1.5 - 4r) - s(0.5 - 4r)
    plan = _LayerPlan(len(layers[-1].bias))
    top = plan.add_form(_combine((-2.0, v_form)), 1.5)
    bottom = plan.add_form(_combine((-2.0, v_form)), 0.5)
    layers.append(plan.layer())
    weight = np.zeros((1, len(plan)))
    weight[0, top], weight[0, bottom] = 1.0, -1.0
    layers.append(AffineLayer(weight, [0.0]))
    return ReluNetwork(layers, name=f'g{kind}')


def partition_budget(K: int, d: int, W: int, L: int, n: int) -> SizeBudget:
    width = (9 + d) * (W + 1) + d - 1
    if d == 1:
        return SizeBudget(width, 2 * L + 2 * math.ceil(math.log2(2 * K)) + 2)
    return SizeBudget(width, 15 * d * (d - 1) * n * L)


def partition_error_bound(K: int, d: int, W: int, L: int, n: int) -> float:
    """50 d^{5/2} (W+1)^{-4dnL}, independent of K."""
    return 50.0 * d ** 2.5 * float(W + 1) ** (-4 * d * n * L)


def partition_net(K: int, d: int, k: Sequence[int], W: int, L: int, n: int) -> tuple[ReluNetwork, GadgetContract]:
    """Network for g_k with W1inf error <= 50 d^{5/2} (W+1)^{-4dnL} (exact for d = 1)."""
    k = tuple(int(v) for v in k)
    if len(k) != d:
        raise DomainError(f'k={k} does not have {d} entries')
    if W < 1 or L < 1 or n < 1:
        raise DomainError(f'need W, L, n >= 1, got W={W}, L={L}, n={n}')
    OmegaK(K, k)
    contract = GadgetContract('partition_net', partition_budget(K, d, W, L, n),
                              partition_error_bound(K, d, W, L, n), Norm.W1_INF, Box.cube(d),
                              {'K': K, 'd': d, 'k': k, 'W': W, 'L': L, 'n': n})
    factors = concat(*[_partition_1d(K, kind, W + 1) for kind in k])
    if d == 1:
        net = factors
    else:
        levels = 4 * d * n * L + math.ceil(math.log(8 * d * K) / math.log(W + 1))
        stage, _ = product2(W + 1, levels, 2.0)
        net = compose(product_chain(stage, d), factors)
    net = net.renamed('partition_' + ''.join(map(str, k))).with_budget(contract.size)
    assert_budget(net)
    return net, contract


def support_localization_check(phi_k: ReluNetwork, g: Callable[[np.ndarray], np.ndarray], region: OmegaK,
                               resolution: Optional[int] = None, seed: int = 0) -> bool:
    """True when the sampled max of |phi_k g| outside Omega_k does not exceed the max inside (+1e-9)."""
    d = region.d
    if resolution is None:
        resolution = 8192 if d == 1 else (256 if d == 2 else 0)
    if d <= 2:
        axis = (np.arange(resolution) + 0.5) / resolution
        pts = np.stack([m.reshape(-1) for m in np.meshgrid(*([axis] * d), indexing='ij')], axis=-1)
    else:
        pts = np.random.default_rng(seed).random((100_000, d))
    values = np.abs(phi_k.evaluate(pts)[:, 0] * np.asarray(g(pts), dtype=float).reshape(-1))
    inside = region.contains(pts)
    inside_max = float(np.max(values[inside])) if np.any(inside) else 0.0
    outside_max = float(np.max(values[~inside])) if np.any(~inside) else 0.0
    ok = outside_max <= inside_max + 1e-9
    if not ok:
        logger.warning('support check failed for %s: outside %.3e > inside %.3e', region.describe(), outside_max,
                       inside_max)
    return ok
