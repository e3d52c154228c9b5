import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from randclip.mixtures import (
    ScaledChiSqSum, scaled_chi2_cdf, simplex_samples, simplex_sum_cdf_mc, simplex_sum_cdf_mc_grid,
    two_term_cdf,
)
from randclip.numerics import DomainError, SeededStream


def nb_series_cdf(x, w1, n1, w2, n2):
    """Two-term CDF as a negative-binomial mixture of gamma CDFs.

    With rates b1 <= b2 of the gamma components, the sum is distributed as
    Gamma(a1 + a2 + M, b1) with M negative binomial(a2, b1 / b2).
    """
    b1, a1, b2, a2 = 2 * w1, n1 / 2, 2 * w2, n2 / 2
    if b1 > b2:
        b1, a1, b2, a2 = b2, a2, b1, a1
    r = b1 / b2
    mean = a2 * (1 - r) / r
    sd = math.sqrt(a2 * (1 - r)) / r
    m = np.arange(int(mean + 40 * sd + 60))
    return float(np.sum(stats.nbinom.pmf(m, a2, r) * special.gammainc(a1 + a2 + m, x / b1)))


def pair(w1, n1, w2, n2):
    return ScaledChiSqSum(((w1, n1), (w2, n2)))


# ---------------------------------------------------------------- scaled chi2

def test_scaled_chi2_examples():
    assert scaled_chi2_cdf(4.5, 1.0, 3) == pytest.approx(0.7877, abs=5e-5)
    assert scaled_chi2_cdf(-0.1, 1.0, 3) == 0.0
    nu = 10**4
    assert scaled_chi2_cdf(1.0, 1.0 / nu, nu) == pytest.approx(0.5, abs=0.01)


@given(st.floats(1e-3, 10.0), st.integers(1, 5000), st.floats(0.0, 5.0))
def test_scaled_chi2_matches_scipy(w, nu, r):
    x = r * w * nu
    assert scaled_chi2_cdf(x, w, nu) == pytest.approx(stats.chi2.cdf(x / w, nu), abs=1e-10)


def test_scaled_chi2_domain():
    with pytest.raises(DomainError):
        scaled_chi2_cdf(1.0, 0.0, 3)
    with pytest.raises(DomainError):
        scaled_chi2_cdf(1.0, 1.0, 0)


# ---------------------------------------------------------------- two-term

def test_two_term_counterexample_value():
    assert two_term_cdf(1.5, pair(0.71, 1, 0.145, 2)) == pytest.approx(0.7961, abs=1e-3)


def test_two_term_counterexample_matches_series():
    assert two_term_cdf(1.5, pair(0.71, 1, 0.145, 2)) == pytest.approx(
        nb_series_cdf(1.5, 0.71, 1, 0.145, 2), abs=1e-8)


def test_two_term_vertex_edge():
    d = pair(1.0 / 8, 8, 0.0, 16)
    for x in (0.3, 1.0, 1.7):
        assert two_term_cdf(x, d) == scaled_chi2_cdf(x, 1.0 / 8, 8)


@pytest.mark.parametrize("k", [1, 2, 8, 32])
def test_two_term_additivity_example(k):
    for x in np.linspace(0.05, 3.0, 13):
        assert two_term_cdf(x, pair(0.5, k, 0.5, k)) == pytest.approx(
            scaled_chi2_cdf(x, 0.5, 2 * k), abs=1e-6)


@given(st.floats(0.01, 2.0), st.integers(1, 40), st.integers(1, 40), st.floats(0.0, 5.0))
def test_two_term_additivity_collapse(w, a, b, x):
    assert two_term_cdf(x, pair(w, a, w, b)) == pytest.approx(scaled_chi2_cdf(x, w, a + b), abs=1e-6)


@given(st.floats(0.02, 0.98), st.integers(1, 64), st.integers(1, 64), st.integers(1, 8),
       st.floats(0.0, 3.0))
def test_two_term_matches_series_oracle(lam, i, j, k, x):
    d = ScaledChiSqSum.block_pair(i, j, lam, k)
    (w1, n1), (w2, n2) = d.terms
    assert two_term_cdf(x, d) == pytest.approx(nb_series_cdf(x, w1, n1, w2, n2), abs=1e-6)


@given(st.floats(0.01, 0.99), st.integers(1, 16), st.integers(1, 16), st.integers(1, 16))
def test_two_term_monotone_in_unit_interval(lam, i, j, k):
    d = ScaledChiSqSum.block_pair(i, j, lam, k)
    F = [two_term_cdf(x, d) for x in np.linspace(-0.5, 5.0, 60)]
    assert all(0.0 <= f <= 1.0 for f in F)
    assert all(b >= a - 1e-12 for a, b in zip(F, F[1:]))


def test_block_pair_mean_is_one():
    for lam in (0.0, 0.3, 0.5, 1.0):
        assert ScaledChiSqSum.block_pair(3, 5, lam, 4).mean == pytest.approx(1.0)


def test_sum_validation():
    with pytest.raises(DomainError):
        ScaledChiSqSum(())
    with pytest.raises(DomainError):
        ScaledChiSqSum(((0.0, 2), (0.0, 3)))
    with pytest.raises(DomainError):
        ScaledChiSqSum(((-1.0, 2),))


# ---------------------------------------------------------------- Monte Carlo

def test_mc_vertex_and_uniform_agree_with_closed_form():
    k, d = 4, 5
    vertex = np.eye(d)[0]
    uniform = np.full(d, 1.0 / d)
    for x in (0.6, 1.0, 1.4):
        est = simplex_sum_cdf_mc(x, vertex, k, 20000, SeededStream(1))
        assert est.contains(scaled_chi2_cdf(x, 1.0 / k, k))
        est = simplex_sum_cdf_mc(x, uniform, k, 20000, SeededStream(2))
        assert est.contains(scaled_chi2_cdf(x, 1.0 / (k * d), k * d))


def test_mc_counterexample():
    est = simplex_sum_cdf_mc(1.5, [0.71, 0.145, 0.145], 1, 200000, SeededStream(3))
    assert est.contains(0.7961)


def test_mc_mean_is_one():
    rng = np.random.default_rng(4)
    for t in range(5):
        lam = rng.dirichlet(np.ones(6))
        est = simplex_sum_cdf_mc(1.0, lam, 3, 50000, SeededStream(5, path=(t,)))
        assert abs(est.mean - 1.0) <= 3 * est.mean_stderr


def test_mc_reproducible_across_chunks():
    lam = [0.5, 0.25, 0.25]
    a = simplex_samples(lam, 2, 40000, SeededStream(6))
    b = simplex_samples(lam, 2, 40000, SeededStream(6))
    assert np.array_equal(a, b)
    # a prefix is the same sample regardless of the total count
    assert np.array_equal(simplex_samples(lam, 2, 1000, SeededStream(6)), a[:1000])


def test_mc_validation():
    with pytest.raises(DomainError):
        simplex_sum_cdf_mc(1.0, [0.5, 0.6], 2, 1000, SeededStream(0))
    with pytest.raises(DomainError):
        simplex_sum_cdf_mc(1.0, [0.5, 0.5], 2, 999, SeededStream(0))


def _sign_changes(diff, margin):
    signs = [np.sign(v) for v, m in zip(diff, margin) if abs(v) > m]
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def test_single_crossing_for_majorized_pairs():
    rng = np.random.default_rng(8)
    xs = np.arange(0.01, 5.0, 0.01)
    k, d, n = 2, 4, 100000
    for t in range(6):
        mu = rng.dirichlet(np.ones(d))
        # a T-transform moves mass between two coordinates, so lam majorizes mu
        order = np.argsort(mu)
        lam = mu.copy()
        shift = rng.uniform(0.3, 1.0) * mu[order[0]]
        lam[order[0]] -= shift
        lam[order[-1]] += shift
        a = simplex_sum_cdf_mc_grid(xs, lam, k, n, SeededStream(9, path=(t, 0)))
        b = simplex_sum_cdf_mc_grid(xs, mu, k, n, SeededStream(9, path=(t, 1)))
        diff = [u.p - v.p for u, v in zip(a, b)]
        margin = [3 * math.hypot(u.stderr, v.stderr) + 1e-12 for u, v in zip(a, b)]
        assert _sign_changes(diff, margin) <= 1
