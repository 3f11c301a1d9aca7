"""Target functions with zero boundary trace and closed-form mixed derivatives.

Every corpus member is a product of one-dimensional factors, so values,
gradients, mixed derivatives and Korobov seminorms all factor per dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from rapidfuzz import fuzz, process

from .errors import ConfigError, DimensionMismatch, DomainError


def _sine_lp_constant(p: float) -> float:
    """||sin(pi x)||_{L_p[0,1]}; also the norm of sin/cos over whole half-periods."""
    if math.isinf(p):
        return 1.0
    return (math.gamma((p + 1) / 2) / (math.sqrt(math.pi) * math.gamma(p / 2 + 1))) ** (1.0 / p)


@dataclass(frozen=True)
class SineFactor:
    """sin(w pi x) with integer frequency w."""

    frequency: int

    def derivative(self, order: int, x: np.ndarray) -> np.ndarray:
        w = self.frequency * math.pi
        return w ** order * np.sin(w * x + order * math.pi / 2)

    def derivative_norm(self, order: int, p: float) -> float:
        return (self.frequency * math.pi) ** order * _sine_lp_constant(p)


@dataclass(frozen=True)
class BubbleFactor:
    """x (1 - x)."""

    def derivative(self, order: int, x: np.ndarray) -> np.ndarray:
        if order == 0:
            return x * (1.0 - x)
        if order == 1:
            return 1.0 - 2.0 * x
        if order == 2:
            return np.full_like(x, -2.0)
        return np.zeros_like(x)

    def derivative_norm(self, order: int, p: float) -> float:
        if order == 0:
            # integral of (x(1-x))^p = B(p+1, p+1)
            if math.isinf(p):
                return 0.25
            return (math.gamma(p + 1) ** 2 / math.gamma(2 * p + 2)) ** (1.0 / p)
        if order == 1:
            return 1.0 if math.isinf(p) else (1.0 / (p + 1)) ** (1.0 / p)
        if order == 2:
            return 2.0
        return 0.0


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    name: str
    factors: tuple = field(repr=False)

    @property
    def d(self) -> int:
        return len(self.factors)

    def _points(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        single = arr.ndim == 1
        batch = arr.reshape(1, -1) if single else arr
        if batch.shape[1] != self.d:
            raise DimensionMismatch(f'{self.name} is {self.d}-dimensional, got points of shape {arr.shape}')
        return batch, single

    def mixed_derivative(self, alpha: Sequence[int], x):
        """D^alpha f at x (alpha = per-direction derivative orders)."""
        batch, single = self._points(x)
        if len(alpha) != self.d or any(a < 0 for a in alpha):
            raise DomainError(f'derivative orders {tuple(alpha)} do not fit a {self.d}-dimensional function')
        out = np.ones(batch.shape[0])
        for j, (factor, a) in enumerate(zip(self.factors, alpha)):
            out = out * factor.derivative(a, batch[:, j])
        return float(out[0]) if single else out

    def evaluate(self, x):
        return self.mixed_derivative((0,) * self.d, x)

    __call__ = evaluate

    def gradient(self, x) -> np.ndarray:
        batch, single = self._points(x)
        grad = np.stack([self.mixed_derivative(tuple(int(r == j) for r in range(self.d)), batch)
                         for j in range(self.d)], axis=1)
        return grad[0] if single else grad

    def seminorm(self, m: int, p: float) -> float:
        """Korobov seminorm |f|_{m,p}: L_p norm of the full mixed derivative of order m per direction."""
        return math.prod(factor.derivative_norm(m, p) for factor in self.factors)

    def lp_norm(self, p: float) -> float:
        return math.prod(factor.derivative_norm(0, p) for factor in self.factors)


def make_sine_product(d: int) -> TestFunction:
    if d < 1:
        raise DomainError(f'dimension must be >= 1, got {d}')
    return TestFunction('sine', tuple(SineFactor(1) for _ in range(d)))


def make_poly_bubble(d: int) -> TestFunction:
    if d < 1:
        raise DomainError(f'dimension must be >= 1, got {d}')
    return TestFunction('bubble', tuple(BubbleFactor() for _ in range(d)))


def make_anisotropic(d: int, frequencies: Sequence[float]) -> TestFunction:
    frequencies = list(frequencies)
    if len(frequencies) != d:
        raise DimensionMismatch(f'{len(frequencies)} frequencies given for d={d}')
    for w in frequencies:
        if float(w) != int(w) or int(w) < 1:
            raise DomainError(f'frequencies must be positive integers (zero boundary trace), got {w}')
    ints = [int(w) for w in frequencies]
    if all(w == 1 for w in ints):
        return make_sine_product(d)
    return TestFunction('aniso:' + ','.join(map(str, ints)), tuple(SineFactor(w) for w in ints))


def boundary_trace(f: TestFunction, count: int = 1000, seed: int = 0) -> float:
    """Largest |f| over random points on the boundary of the unit cube."""
    rng = np.random.default_rng(seed)
    pts = rng.random((count, f.d))
    faces = rng.integers(0, f.d, size=count)
    pts[np.arange(count), faces] = rng.integers(0, 2, size=count).astype(float)
    return float(np.max(np.abs(f.evaluate(pts))))


def _aniso_from_text(d: int, argument: str) -> TestFunction:
    try:
        freqs = [float(part) for part in argument.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f'cannot parse anisotropic frequencies {argument!r}') from None
    if len(freqs) != d:
        raise ConfigError(f'aniso:{argument} lists {len(freqs)} frequencies but d={d}')
    try:
        return make_anisotropic(d, freqs)
    except DomainError as e:
        raise ConfigError(str(e)) from None


REGISTRY: dict[str, Callable[[int, str], TestFunction]] = {
    'sine': lambda d, _arg: make_sine_product(d),
    'bubble': lambda d, _arg: make_poly_bubble(d),
    'aniso': _aniso_from_text,
}


def resolve(name: str, d: int) -> TestFunction:
    """Look up a corpus entry by CLI name: 'sine', 'bubble' or 'aniso:w1,...,wd'."""
    key, _, argument = name.strip().partition(':')
    key = key.lower()
    if key not in REGISTRY:
        guess = process.extractOne(key, REGISTRY.keys(), scorer=fuzz.ratio)
        hint = f"; did you mean '{guess[0]}'?" if guess and guess[1] >= 50 else ''
        raise ConfigError(f'unknown function {name!r}{hint} (known: {", ".join(sorted(REGISTRY))})')
    if key == 'aniso' and not argument:
        raise ConfigError("aniso needs frequencies, e.g. 'aniso:1,3'")
    if d < 1:
        raise ConfigError(f'dimension must be >= 1, got {d}')
    return REGISTRY[key](d, argument)
