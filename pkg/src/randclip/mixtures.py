"""CDFs of sums of independent scaled chi-squared variables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import DomainError, SeededStream, reg_lower_gamma

ZERO_WEIGHT = 1e-12
TWO_TERM_NODES = 256
MC_CHUNK = 1 << 14


@dataclass(frozen=True)
class ScaledChiSqSum:
    """Distribution of ``sum_j w_j * chi2(nu_j)`` with independent components.

    Attributes:
        terms: (weight, dof) pairs with nonnegative weights and positive dofs.
    """

    terms: tuple[tuple[float, int], ...]

    def __post_init__(self):
        terms = tuple((float(w), int(n)) for w, n in self.terms)
        if not terms:
            raise DomainError("ScaledChiSqSum needs at least one term")
        for w, n in terms:
            if w < 0 or not math.isfinite(w):
                raise DomainError(f"weights must be finite and nonnegative, got {w!r}")
            if n <= 0:
                raise DomainError(f"dofs must be positive, got {n!r}")
        if not any(w > 0 for w, _ in terms):
            raise DomainError("at least one weight must be positive")
        object.__setattr__(self, "terms", terms)

    @property
    def mean(self) -> float:
        return sum(w * n for w, n in self.terms)

    @classmethod
    def block_pair(cls, i: int, j: int, lam: float, k: int) -> ScaledChiSqSum:
        """Two-block form ``lam chi2(ik)/(ik) + (1 - lam) chi2(jk)/(jk)``."""
        return cls(((lam / (i * k), i * k), ((1.0 - lam) / (j * k), j * k)))


def scaled_chi2_cdf(x: float, weight: float, dof: int) -> float:
    """P[weight * chi2(dof) <= x].

    Raises:
        DomainError: if ``weight <= 0`` or ``dof <= 0``.
    """
    if not weight > 0:
        raise DomainError(f"weight must be positive, got {weight!r}")
    if dof <= 0:
        raise DomainError(f"dof must be positive, got {dof!r}")
    if x <= 0:
        return 0.0
    return reg_lower_gamma(0.5 * dof, x / (2.0 * weight))


def two_term_cdf(x: float, dist: ScaledChiSqSum) -> float:
    """CDF of a two-term scaled chi-squared sum at ``x``.

    Integrates the density of the higher-dof term against the CDF of the
    other over the window where both carry mass. A term whose weight is
    below 1e-12 is dropped and the single-term CDF is returned.

    Raises:
        DomainError: if ``dist`` does not have exactly two terms.
    """
    if len(dist.terms) != 2:
        raise DomainError(f"two_term_cdf needs exactly two terms, got {len(dist.terms)}")
    (w1, n1), (w2, n2) = dist.terms
    if w1 < ZERO_WEIGHT:
        return scaled_chi2_cdf(x, w2, n2)
    if w2 < ZERO_WEIGHT:
        return scaled_chi2_cdf(x, w1, n1)
    if x <= 0:
        return 0.0
    return kernels.two_term_cdf(x, w1, n1, w2, n2, n_nodes=TWO_TERM_NODES)


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo probability estimate.

    Attributes:
        p: fraction of samples with X <= x.
        lower, upper: Wilson 95% interval for the probability.
        stderr: binomial standard error sqrt(p (1 - p) / n).
        mean: sample mean of X.
        mean_stderr: standard error of ``mean``.
        n: number of samples.
    """

    p: float
    lower: float
    upper: float
    stderr: float
    mean: float
    mean_stderr: float
    n: int

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


def _wilson(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    p = hits / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def simplex_samples(lam, k: int, n: int, stream: SeededStream) -> np.ndarray:
    """``n`` draws of ``sum_i lam_i chi2(k)/k`` built from squared Gaussians.

    Samples are produced in fixed chunks, each on its own sub-stream, so the
    output does not depend on how chunks are distributed over workers.
    """
    lam = np.asarray(lam, dtype=float)
    _check_simplex(lam)
    if k <= 0:
        raise DomainError(f"k must be positive, got {k!r}")
    support = np.flatnonzero(lam > 0)
    w = lam[support] / k
    out = np.empty(n)
    for c, start in enumerate(range(0, n, MC_CHUNK)):
        m = min(MC_CHUNK, n - start)
        z = stream.substream(c).standard_normal((m, len(support), k))
        out[start:start + m] = np.einsum("mdk,d->m", z * z, w)
    return out


def simplex_sum_cdf_mc(x: float, lam, k: int, n: int, stream: SeededStream) -> McEstimate:
    """Monte-Carlo estimate of P[sum_i lam_i chi2(k)/k <= x].

    Raises:
        DomainError: if ``lam`` is not on the simplex or ``n < 1000``.
    """
    if n < 1000:
        raise DomainError(f"need at least 1000 samples, got {n!r}")
    xs = simplex_samples(lam, k, n, stream)
    return _estimate(xs, x)


def simplex_sum_cdf_mc_grid(xs, lam, k: int, n: int, stream: SeededStream) -> list[McEstimate]:
    """Like :func:`simplex_sum_cdf_mc` at several points on one shared sample."""
    if n < 1000:
        raise DomainError(f"need at least 1000 samples, got {n!r}")
    samples = np.sort(simplex_samples(lam, k, n, stream))
    return [_estimate(samples, float(x), presorted=True) for x in np.atleast_1d(xs)]


def _estimate(samples: np.ndarray, x: float, presorted: bool = False) -> McEstimate:
    n = len(samples)
    if presorted:
        hits = int(np.searchsorted(samples, x, side="right"))
    else:
        hits = int(np.count_nonzero(samples <= x))
    p = hits / n
    lo, hi = _wilson(hits, n)
    return McEstimate(
        p=p, lower=lo, upper=hi, stderr=math.sqrt(p * (1 - p) / n),
        mean=float(samples.mean()), mean_stderr=float(samples.std(ddof=1) / math.sqrt(n)), n=n,
    )


def _check_simplex(lam: np.ndarray) -> None:
    if lam.ndim != 1 or lam.size == 0:
        raise DomainError("lambda must be a nonempty vector")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise DomainError("lambda entries must be finite and nonnegative")
    if abs(lam.sum() - 1.0) > 1e-9:
        raise DomainError(f"lambda must sum to 1 within 1e-9, got {lam.sum()!r}")
