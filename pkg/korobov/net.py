"""Explicit ReLU networks and their width/depth calculus.

A network is an ordered list of affine layers with a ReLU between consecutive
layers and none after the last one, i.e. ``A_L o s o ... o s o A_0``. Depth is
the number of hidden activations and width the largest hidden layer. Every
combinator here produces the size its docstring promises exactly, which the
tests check as integer equalities.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import DimensionMismatch, DomainError

logger = logging.getLogger('Korobov.Net')

FORMAT = 'korobov.relu/1'
# Rows evaluated per matmul pass; keeps tangent arrays small for wide nets.
CHUNK_ROWS = 8192


@dataclass(frozen=True)
class SizeBudget:
    width: int
    depth: int

    def __post_init__(self):
        for label, value in (('width', self.width), ('depth', self.depth)):
            if int(value) != value or value < 1:
                raise DomainError(f'budget {label} must be a positive integer, got {value!r}')

    @classmethod
    def from_bounds(cls, width: float, depth: float) -> SizeBudget:
        """Integer budget admitted by real-valued size formulas (floor, tolerant of log2 rounding)."""
        return cls(max(1, math.floor(width + 1e-9)), max(1, math.floor(depth + 1e-9)))

    def admits(self, width: int, depth: int) -> bool:
        return width <= self.width and depth <= self.depth


@dataclass(frozen=True, eq=False)
class AffineLayer:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = np.array(self.weight, dtype=float, copy=True)
        bias = np.array(self.bias, dtype=float, copy=True).reshape(-1)
        if weight.ndim != 2 or weight.shape[0] != bias.shape[0]:
            raise DimensionMismatch(f'weight {weight.shape} does not match bias {bias.shape}')
        weight.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, 'weight', weight)
        object.__setattr__(self, 'bias', bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, h: np.ndarray) -> np.ndarray:
        return h @ self.weight.T + self.bias


@dataclass(frozen=True)
class BudgetCheck:
    ok: bool
    width: int
    depth: int
    budget: Optional[SizeBudget]

    def describe(self) -> str:
        if self.budget is None:
            return f'({self.width}, {self.depth}) no budget declared'
        verdict = 'within' if self.ok else 'EXCEEDS'
        return f'({self.width}, {self.depth}) {verdict} ({self.budget.width}, {self.budget.depth})'


class ReluNetwork:
    """Immutable fully connected ReLU network."""

    def __init__(self, layers: Iterable[AffineLayer | tuple], budget: Optional[SizeBudget] = None, name: str = 'net'):
        layers = tuple(layer if isinstance(layer, AffineLayer) else AffineLayer(*layer) for layer in layers)
        if not layers:
            raise DomainError('a network needs at least one affine layer')
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise DimensionMismatch(f'layer expects {nxt.in_dim} inputs but receives {prev.out_dim}')
        self._layers = layers
        self.budget = budget
        self.name = name

    @property
    def layers(self) -> tuple[AffineLayer, ...]:
        return self._layers

    @property
    def input_dim(self) -> int:
        return self._layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self._layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self._layers) - 1

    @property
    def width(self) -> int:
        if self.depth == 0:
            return 0
        return max(layer.out_dim for layer in self._layers[:-1])

    @property
    def params(self) -> int:
        """Number of nonzero weights and biases."""
        return int(sum(np.count_nonzero(l.weight) + np.count_nonzero(l.bias) for l in self._layers))

    def with_budget(self, budget: Optional[SizeBudget]) -> ReluNetwork:
        return ReluNetwork(self._layers, budget=budget, name=self.name)

    def renamed(self, name: str) -> ReluNetwork:
        return ReluNetwork(self._layers, budget=self.budget, name=name)

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        single = arr.ndim == 1
        batch = arr.reshape(1, -1) if single else arr
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise DimensionMismatch(f'{self.name} expects inputs of dimension {self.input_dim}, got shape {arr.shape}')
        return batch, single

    def evaluate(self, x) -> np.ndarray:
        """Forward pass. A 1-D input is one point and yields a (k,) vector; an (N, d) batch yields (N, k)."""
        batch, single = self._as_batch(x)
        out = np.empty((batch.shape[0], self.output_dim))
        for start in range(0, batch.shape[0], CHUNK_ROWS):
            h = batch[start:start + CHUNK_ROWS]
            for layer in self._layers[:-1]:
                h = np.maximum(layer.apply(h), 0.0)
            out[start:start + CHUNK_ROWS] = self._layers[-1].apply(h)
        return out[0] if single else out

    __call__ = evaluate

    def gradient(self, x) -> np.ndarray:
        """Almost-everywhere Jacobian by forward-mode chain rule, with s'(0) = 0.

        Returns (k, d) for a single point and (N, k, d) for a batch.
        """
        batch, single = self._as_batch(x)
        d = self.input_dim
        jac = np.empty((batch.shape[0], self.output_dim, d))
        for start in range(0, batch.shape[0], CHUNK_ROWS):
            h = batch[start:start + CHUNK_ROWS]
            tangent = np.broadcast_to(np.eye(d), (h.shape[0], d, d))
            for layer in self._layers[:-1]:
                pre = layer.apply(h)
                active = pre > 0.0
                tangent = np.matmul(layer.weight, tangent) * active[:, :, None]
                h = np.where(active, pre, 0.0)
            jac[start:start + CHUNK_ROWS] = np.matmul(self._layers[-1].weight, tangent)
        return jac[0] if single else jac

    def __repr__(self) -> str:
        return (f'ReluNetwork({self.name!r}, {self.input_dim}->{self.output_dim}, '
                f'width={self.width}, depth={self.depth}, params={self.params})')


def affine_network(weight, bias=None, name: str = 'affine') -> ReluNetwork:
    """Depth-0 network x -> Wx + b."""
    weight = np.atleast_2d(np.asarray(weight, dtype=float))
    bias = np.zeros(weight.shape[0]) if bias is None else bias
    return ReluNetwork([AffineLayer(weight, bias)], name=name)


def identity(dim: int) -> ReluNetwork:
    return affine_network(np.eye(dim), name=f'identity{dim}')


def zero_network(input_dim: int, output_dim: int = 1) -> ReluNetwork:
    return affine_network(np.zeros((output_dim, input_dim)), name='zero')


def scale_output(net: ReluNetwork, factor: float) -> ReluNetwork:
    last = net.layers[-1]
    layers = net.layers[:-1] + (AffineLayer(factor * last.weight, factor * last.bias),)
    return ReluNetwork(layers, name=net.name)


def precompose_affine(net: ReluNetwork, weight, bias=None) -> ReluNetwork:
    """net(Wx + b), folded into the first layer (no extra depth)."""
    return compose(net, affine_network(weight, bias))


def postcompose_affine(net: ReluNetwork, weight, bias=None) -> ReluNetwork:
    """W net(x) + b, folded into the last layer."""
    return compose(affine_network(weight, bias), net)


def pad_depth(net: ReluNetwork, depth: int) -> ReluNetwork:
    """Lengthen ``net`` to exactly ``depth`` hidden layers with s(y) - s(-y) identity pairs.

    Width becomes max(net.width, 2k). The pairs reproduce y exactly since one
    of s(y), s(-y) is always zero.
    """
    if depth < net.depth:
        raise DomainError(f'cannot pad a depth-{net.depth} network down to {depth}')
    if depth == net.depth:
        return net
    k = net.output_dim
    eye = np.eye(k)
    last = net.layers[-1]
    layers = list(net.layers[:-1])
    layers.append(AffineLayer(np.vstack([last.weight, -last.weight]), np.concatenate([last.bias, -last.bias])))
    pair = np.block([[eye, -eye], [-eye, eye]])
    for _ in range(depth - net.depth - 1):
        layers.append(AffineLayer(pair, np.zeros(2 * k)))
    layers.append(AffineLayer(np.hstack([eye, -eye]), np.zeros(k)))
    return ReluNetwork(layers, name=net.name)


def compose(outer: ReluNetwork, inner: ReluNetwork) -> ReluNetwork:
    """outer o inner; width max(W1, W2), depth L1 + L2 (the two boundary affine maps are merged)."""
    if inner.output_dim != outer.input_dim:
        raise DimensionMismatch(f'cannot feed {inner.output_dim} outputs of {inner.name} into {outer.name} '
                                f'({outer.input_dim} inputs)')
    tail, head = inner.layers[-1], outer.layers[0]
    merged = AffineLayer(head.weight @ tail.weight, head.weight @ tail.bias + head.bias)
    return ReluNetwork(inner.layers[:-1] + (merged,) + outer.layers[1:], name=f'{outer.name}o{inner.name}')


def concat(*nets: ReluNetwork) -> ReluNetwork:
    """Block-diagonal stacking on consecutive input slices; depth max L_i.

    Branches shallower than that are padded first, so the width is the sum of
    W_i over full-depth branches plus max(W_i, 2 k_i) over the others (k_i
    outputs; a depth-0 branch counts 2 k_i).
    """
    if not nets:
        raise DomainError('concat needs at least one network')
    depth = max(net.depth for net in nets)
    padded = [pad_depth(net, depth) for net in nets]
    layers = []
    for r in range(depth + 1):
        layers.append(AffineLayer(block_diag(*[p.layers[r].weight for p in padded]),
                                  np.concatenate([p.layers[r].bias for p in padded])))
    return ReluNetwork(layers, name='concat')


def _check_shared_dims(nets: Sequence[ReluNetwork]) -> tuple[int, int]:
    if not nets:
        raise DomainError('summation needs at least one network')
    d, k = nets[0].input_dim, nets[0].output_dim
    for net in nets:
        if net.input_dim != d or net.output_dim != k:
            raise DimensionMismatch(f'{net.name} is {net.input_dim}->{net.output_dim}, expected {d}->{k}')
    return d, k


def sum_parallel(nets: Sequence[ReluNetwork]) -> ReluNetwork:
    """Shared input, side-by-side hidden layers, outputs added; depth max L_i.

    Width as for ``concat``: shallower branches count max(W_i, 2k) after padding.
    """
    nets = list(nets)
    _check_shared_dims(nets)
    depth = max(net.depth for net in nets)
    padded = [pad_depth(net, depth) for net in nets]
    if depth == 0:
        return affine_network(sum(p.layers[0].weight for p in padded), sum(p.layers[0].bias for p in padded),
                              name='sum')
    layers = [AffineLayer(np.vstack([p.layers[0].weight for p in padded]),
                          np.concatenate([p.layers[0].bias for p in padded]))]
    for r in range(1, depth):
        layers.append(AffineLayer(block_diag(*[p.layers[r].weight for p in padded]),
                                  np.concatenate([p.layers[r].bias for p in padded])))
    layers.append(AffineLayer(np.hstack([p.layers[-1].weight for p in padded]), sum(p.layers[-1].bias for p in padded)))
    return ReluNetwork(layers, name='sum')


def sum_serial(nets: Sequence[ReluNetwork]) -> ReluNetwork:
    """Run the nets one after another. Width max W_i + 2d + 2k, depth sum L_i.

    Each hidden layer holds the current net's units, the input as d identity
    pairs and the running sum as k identity pairs. Every net needs depth >= 1.
    """
    nets = list(nets)
    d, k = _check_shared_dims(nets)
    for net in nets:
        if net.depth < 1:
            raise DomainError(f'{net.name} has depth 0; pad it before serial summation')
    i_d, i_k = np.eye(d), np.eye(k)
    split_d = np.vstack([i_d, -i_d])
    pair_d = np.block([[i_d, -i_d], [-i_d, i_d]])
    pair_k = np.block([[i_k, -i_k], [-i_k, i_k]])
    join_d = np.hstack([i_d, -i_d])
    join_k = np.hstack([i_k, -i_k])

    first = nets[0].layers[0]
    layers = [AffineLayer(np.vstack([first.weight, split_d, np.zeros((2 * k, d))]),
                          np.concatenate([first.bias, np.zeros(2 * d + 2 * k)]))]
    for idx, net in enumerate(nets):
        for layer in net.layers[1:-1]:
            layers.append(AffineLayer(block_diag(layer.weight, pair_d, pair_k),
                                      np.concatenate([layer.bias, np.zeros(2 * d + 2 * k)])))
        last = net.layers[-1]
        width = last.in_dim
        if idx + 1 < len(nets):
            nxt = nets[idx + 1].layers[0]
            rows_h = np.hstack([np.zeros((nxt.out_dim, width)), nxt.weight @ join_d, np.zeros((nxt.out_dim, 2 * k))])
            rows_x = np.hstack([np.zeros((2 * d, width)), pair_d, np.zeros((2 * d, 2 * k))])
            rows_s = np.hstack([np.vstack([last.weight, -last.weight]), np.zeros((2 * k, 2 * d)), pair_k])
            layers.append(AffineLayer(np.vstack([rows_h, rows_x, rows_s]),
                                      np.concatenate([nxt.bias, np.zeros(2 * d), last.bias, -last.bias])))
        else:
            layers.append(AffineLayer(np.hstack([last.weight, np.zeros((k, 2 * d)), join_k]), last.bias))
    return ReluNetwork(layers, name='serial_sum')


def grid_sum(nets: Sequence[ReluNetwork], n1: int, n2: int) -> ReluNetwork:
    """Sum n1*n2 scalar nets: n2 serial stages of n1-wide parallel groups.

    For members of NN(W, L) the result has width <= n1*W + 2d + 2 and depth <= n2*L.
    """
    nets = list(nets)
    if n1 < 1 or n2 < 1 or len(nets) != n1 * n2:
        raise DomainError(f'grid_sum needs exactly n1*n2 = {n1 * n2} nets, got {len(nets)}')
    _check_shared_dims(nets)
    groups = [sum_parallel(nets[r * n1:(r + 1) * n1]) for r in range(n2)]
    if n2 == 1:
        return groups[0]
    return sum_serial([g if g.depth >= 1 else pad_depth(g, 1) for g in groups])


def size_of(net: ReluNetwork) -> tuple[int, int]:
    return net.width, net.depth


def assert_budget(net: ReluNetwork, budget: Optional[SizeBudget] = None) -> BudgetCheck:
    """Compare actual size with ``budget`` (or the declared one). Never raises on violation."""
    budget = budget if budget is not None else net.budget
    ok = budget is None or budget.admits(net.width, net.depth)
    check = BudgetCheck(ok=ok, width=net.width, depth=net.depth, budget=budget)
    if not ok:
        logger.warning('%s size %s', net.name, check.describe())
    return check


def to_dict(net: ReluNetwork) -> dict:
    return {
        'format': FORMAT,
        'name': net.name,
        'input_dim': net.input_dim,
        'output_dim': net.output_dim,
        'budget': None if net.budget is None else {'width': net.budget.width, 'depth': net.budget.depth},
        'size': {'width': net.width, 'depth': net.depth, 'params': net.params},
        'layers': [{'weight': layer.weight.tolist(), 'bias': layer.bias.tolist()} for layer in net.layers],
    }


def from_dict(doc: dict) -> ReluNetwork:
    if doc.get('format') != FORMAT:
        raise DomainError(f"unsupported network document format {doc.get('format')!r}")
    budget = doc.get('budget')
    layers = [AffineLayer(np.asarray(l['weight'], dtype=float).reshape(len(l['bias']), -1), l['bias'])
              for l in doc['layers']]
    net = ReluNetwork(layers, budget=None if budget is None else SizeBudget(**budget), name=doc.get('name', 'net'))
    if net.input_dim != doc['input_dim'] or net.output_dim != doc['output_dim']:
        raise DimensionMismatch('layer shapes disagree with the declared dimensions')
    return net


def to_json(net: ReluNetwork, indent: Optional[int] = None) -> str:
    return json.dumps(to_dict(net), indent=indent)


def from_json(text: str) -> ReluNetwork:
    return from_dict(json.loads(text))


def save_network(net: ReluNetwork, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(net), encoding='utf-8')
    logger.debug('Wrote %s to %s', net, path)
    return path


def load_network(path: str | Path) -> ReluNetwork:
    return from_json(Path(path).read_text(encoding='utf-8'))
