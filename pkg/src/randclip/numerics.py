"""Special functions and reproducible Gaussian sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

_MAX_ITER = 1_000_000
_EPS = 1e-16
_TINY = 1e-300


class DomainError(ValueError):
    """Raised when an argument lies outside a function's domain."""


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for positive ``x``.

    Raises:
        DomainError: if ``x <= 0``.
    """
    if not x > 0:
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return float(special.gammaln(x))


def _stirling_tail(s: float) -> float:
    """ln Gamma(s + 1) - (s + 1/2) ln s + s - ln(2 pi)/2."""
    if s < 16.0:
        return log_gamma(s + 1.0) - (s + 0.5) * math.log(s) + s - 0.5 * math.log(2 * math.pi)
    inv = 1.0 / s
    inv2 = inv * inv
    return inv * (1 / 12 - inv2 * (1 / 360 - inv2 * (1 / 1260 - inv2 / 1680)))


def _log1pmx(u: float) -> float:
    """log(1 + u) - u without cancellation for small ``u``."""
    if abs(u) > 0.1:
        return math.log1p(u) - u
    term, total, n = u, 0.0, 2
    while True:
        term *= -u
        contrib = term / n
        total += contrib
        if abs(contrib) < 1e-17 * abs(total) or n > 200:
            return total
        n += 1


def _log_prefactor(s: float, x: float) -> float:
    """log of x^s e^{-x} / Gamma(s + 1), stable for large ``s``."""
    u = (x - s) / s
    if abs(u) > 0.5:
        # far from the mode the direct form has no cancellation
        return s * math.log(x) - x - log_gamma(s + 1.0)
    return s * _log1pmx(u) - 0.5 * math.log(2 * math.pi * s) - _stirling_tail(s)


def reg_lower_gamma(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x).

    Uses the power series below ``x = s + 1`` and Lentz's continued fraction
    for the upper function above it.

    Raises:
        DomainError: if ``s <= 0`` or ``x < 0``.
    """
    if not s > 0:
        raise DomainError(f"reg_lower_gamma requires s > 0, got {s!r}")
    if not x >= 0:
        raise DomainError(f"reg_lower_gamma requires x >= 0, got {x!r}")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    log_pre = _log_prefactor(s, x)
    if x < s + 1.0:
        return min(1.0, math.exp(log_pre) * _lower_series(s, x))
    return max(0.0, 1.0 - math.exp(log_pre) * _upper_fraction(s, x) * s)


def reg_upper_gamma(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) = 1 - P(s, x), accurate in the tail."""
    if not s > 0:
        raise DomainError(f"reg_upper_gamma requires s > 0, got {s!r}")
    if not x >= 0:
        raise DomainError(f"reg_upper_gamma requires x >= 0, got {x!r}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    log_pre = _log_prefactor(s, x)
    if x < s + 1.0:
        return max(0.0, 1.0 - math.exp(log_pre) * _lower_series(s, x))
    return min(1.0, math.exp(log_pre) * _upper_fraction(s, x) * s)


def _lower_series(s: float, x: float) -> float:
    # sum_n x^n / ((s+1)...(s+n)); multiplied by x^s e^-x / Gamma(s+1)
    term = total = 1.0
    a = s
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if term < total * _EPS:
            return total
    raise ArithmeticError(f"series for P({s}, {x}) did not converge")


def _upper_fraction(s: float, x: float) -> float:
    # Modified Lentz for Gamma(s, x) e^x x^-s.
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for n in range(1, _MAX_ITER):
        an = -n * (n - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"continued fraction for Q({s}, {x}) did not converge")


def std_normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def std_normal_sf(x):
    """Standard normal survival function, accurate far into the upper tail."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def _key_words(seed: int, path: tuple[int, ...]) -> np.ndarray:
    entropy = np.random.SeedSequence(seed, spawn_key=path)
    return entropy.generate_state(2, dtype=np.uint64)


@dataclass
class SeededStream:
    """Counter-based random stream on the Philox generator.

    ``(seed, path, counter)`` fixes every value the stream will produce, so a
    stream can be rebuilt anywhere and continue bit-identically. ``path``
    names a sub-stream; distinct paths key independent Philox instances.

    Attributes:
        seed: 64-bit unsigned seed.
        counter: index of the next unused Philox block.
        path: sub-stream identifiers, e.g. (step, sample, layer).
    """

    seed: int
    counter: int = 0
    path: tuple[int, ...] = ()
    _key: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if self.counter < 0:
            raise DomainError("counter must be nonnegative")
        self.seed = int(self.seed)
        self.path = tuple(int(p) for p in self.path)
        self._key = _key_words(self.seed, self.path)

    def substream(self, *ids: int) -> SeededStream:
        """Independent child stream identified by ``ids``."""
        return SeededStream(self.seed, 0, self.path + tuple(int(i) for i in ids))

    def standard_normal(self, shape) -> np.ndarray:
        """Draw standard normals and advance the counter past the blocks used."""
        bitgen = np.random.Philox(key=self._key, counter=self.counter)
        out = np.random.Generator(bitgen).standard_normal(shape)
        # Philox increments the first counter word once per 4-word block.
        self.counter = int(bitgen.state["state"]["counter"][0]) + 1
        return out

    def uniform(self, shape) -> np.ndarray:
        """Draw uniforms on [0, 1) and advance the counter past the blocks used."""
        bitgen = np.random.Philox(key=self._key, counter=self.counter)
        out = np.random.Generator(bitgen).random(shape)
        self.counter = int(bitgen.state["state"]["counter"][0]) + 1
        return out


def sample_gaussian(stream: SeededStream, mean: float, stddev: float, count: int) -> np.ndarray:
    """``count`` i.i.d. draws from N(mean, stddev^2).

    Raises:
        DomainError: if ``stddev < 0`` or ``count < 0``.
    """
    if stddev < 0:
        raise DomainError(f"stddev must be nonnegative, got {stddev!r}")
    if count < 0:
        raise DomainError(f"count must be nonnegative, got {count!r}")
    z = stream.standard_normal(int(count))
    if stddev == 0:
        return np.full(int(count), float(mean))
    return mean + stddev * z
