"""Selects the compiled kernels when available, else the numpy fallback.

Set ``RANDCLIP_PURE_PYTHON=1`` to force the fallback.
"""

import functools
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("RANDCLIP_PURE_PYTHON", "") == "1":
        raise ImportError("fallback forced by environment")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels
BACKEND = "compiled" if _ckernels is not None else "python"

SMOOTH_NODES = 64
PLAIN_NODES = 48
LAMBDA_STRIDES = (25, 5, 1)


@functools.lru_cache(maxsize=None)
def gauss_rule(n: int) -> np.ndarray:
    """Gauss-Legendre rule on [0, 1] under the map u -> 3u^2 - 2u^3.

    The map has zero slope at both ends, which tames the integrable
    endpoint singularities of chi-squared densities with one degree of freedom.

    Returns:
        (3, n) array of mapped nodes, map derivatives, and weights.
    """
    u, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u + 1.0)
    rule = np.vstack([3 * u**2 - 2 * u**3, 6 * u - 6 * u**2, 0.5 * w])
    rule.setflags(write=False)
    return np.ascontiguousarray(rule)


@functools.lru_cache(maxsize=None)
def plain_rule(n: int) -> np.ndarray:
    """Plain Gauss-Legendre rule on [0, 1] as a (2, n) array; n = 0 disables it."""
    if n == 0:
        return np.zeros((2, 0))
    u, w = np.polynomial.legendre.leggauss(n)
    rule = np.ascontiguousarray(np.vstack([0.5 * (u + 1.0), 0.5 * w]))
    rule.setflags(write=False)
    return rule


def _impl(backend):
    if backend is None:
        return BACKENDS[BACKEND]
    try:
        return BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {backend!r}") from None


def two_term_cdf(x, w1, n1, w2, n2, n_nodes=256, n_plain=0, backend=None):
    """CDF of ``w1 chi2(n1) + w2 chi2(n2)`` at ``x`` by windowed quadrature.

    ``n_plain > 0`` enables the cheaper plain rule on windows without an
    endpoint singularity.
    """
    return _impl(backend).two_term_cdf(
        float(x), float(w1), float(n1), float(w2), float(n2),
        np.array(gauss_rule(n_nodes)), np.array(plain_rule(n_plain)),
    )


def middle_sup(x, k, pair_i, pair_j, n_lambda, strides=LAMBDA_STRIDES, stop_above=np.inf,
               skip_floor=-np.inf, bounds=None, backend=None):
    """Maximize the two-block CDF over pairs and the half lambda grid.

    Args:
        bounds: optional per-pair upper bounds used to skip pairs.
        skip_floor: pairs whose bound is at most this value are skipped.
        stop_above: stop the scan as soon as a value exceeds this.

    Returns:
        (F, pair index, lambda index, per-pair values, pairs evaluated).
    """
    strides = _check_strides(strides)
    pi = np.ascontiguousarray(pair_i, dtype=np.int64)
    pj = np.ascontiguousarray(pair_j, dtype=np.int64)
    if bounds is None:
        bounds = np.full(len(pi), np.inf)
    bounds = np.ascontiguousarray(bounds, dtype=np.float64)
    values = np.empty(len(pi))
    f, q, m, evaluated = _impl(backend).middle_sup(
        float(x), int(k), pi, pj, int(n_lambda), np.asarray(strides, dtype=np.int64),
        float(stop_above), float(skip_floor), bounds, values,
        np.array(gauss_rule(SMOOTH_NODES)), np.array(plain_rule(PLAIN_NODES)),
    )
    return float(f), int(q), int(m), values, int(evaluated)


def _check_strides(strides):
    strides = tuple(int(s) for s in strides)
    if not strides or strides[-1] != 1 or any(s <= 0 for s in strides):
        raise ValueError("strides must be positive and end with 1")
    if any(a % b for a, b in zip(strides, strides[1:])):
        raise ValueError("each stride must divide the previous one")
    return strides
