# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the two-term chi-squared CDF and the middle-region search."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fmax, fmin, NAN
from scipy.special.cython_special cimport gammainc, gammaln

cnp.import_array()

cdef double TAIL = 35.0
cdef double ZERO_WEIGHT = 1e-12
cdef double PLAIN_MIN_SHAPE = 8.0


cdef struct Rule:
    const double* g      # smoothed nodes
    const double* gp     # derivative of the smoothing map
    const double* gw     # weights of the smoothed rule
    int n
    const double* pg     # plain nodes
    const double* pw     # plain weights
    int pn


cdef inline void _support(double a, double b, double* lo, double* hi) noexcept nogil:
    # Sub-gamma tail bounds: mass outside [lo, hi] is below 2 * exp(-TAIL).
    cdef double r = sqrt(2.0 * a * TAIL)
    lo[0] = fmax(0.0, a - r) * b
    hi[0] = (a + r + TAIL) * b


cdef double _two_term(double x, double w1, double n1, double w2, double n2,
                      const Rule* rule) noexcept nogil:
    cdef double a1, b1, a2, b2, tmp
    cdef double lo_c, hi_c, lo_d, hi_d, base, lower, upper, lnorm, acc, y, z
    cdef int m
    if x <= 0.0:
        return 0.0
    if w1 < ZERO_WEIGHT:
        return gammainc(0.5 * n2, x / (2.0 * w2))
    if w2 < ZERO_WEIGHT:
        return gammainc(0.5 * n1, x / (2.0 * w1))
    if w1 == w2:
        return gammainc(0.5 * (n1 + n2), x / (2.0 * w1))
    a1 = 0.5 * n1
    b1 = 2.0 * w1
    a2 = 0.5 * n2
    b2 = 2.0 * w2
    if a1 > a2:
        tmp = a1; a1 = a2; a2 = tmp
        tmp = b1; b1 = b2; b2 = tmp
    # term 2 (larger shape) supplies the density, term 1 the CDF
    _support(a1, b1, &lo_c, &hi_c)
    _support(a2, b2, &lo_d, &hi_d)
    base = gammainc(a2, fmax(0.0, x - hi_c) / b2)
    lower = fmax(fmax(0.0, x - hi_c), lo_d)
    upper = fmin(fmin(x - lo_c, hi_d), x)
    if upper <= lower:
        return fmin(1.0, base)
    lnorm = -gammaln(a2) - a2 * log(b2)
    acc = 0.0
    if rule.pn > 0 and a1 >= PLAIN_MIN_SHAPE:
        # both factors are bell-shaped on the window; the plain rule suffices
        for m in range(rule.pn):
            y = lower + (upper - lower) * rule.pg[m]
            acc += rule.pw[m] * exp((a2 - 1.0) * log(y) - y / b2 + lnorm) * gammainc(a1, (x - y) / b1)
        return fmin(1.0, base + (upper - lower) * acc)
    for m in range(rule.n):
        y = lower + (upper - lower) * rule.g[m]
        z = x - y
        if y <= 0.0 or z <= 0.0:
            continue
        acc += rule.gw[m] * rule.gp[m] * exp((a2 - 1.0) * log(y) - y / b2 + lnorm) * gammainc(a1, z / b1)
    return fmin(1.0, base + (upper - lower) * acc)


cdef Rule _make_rule(double[:, ::1] smooth, double[:, ::1] plain):
    cdef Rule rule
    rule.g = &smooth[0, 0]
    rule.gp = &smooth[1, 0]
    rule.gw = &smooth[2, 0]
    rule.n = smooth.shape[1]
    rule.pn = plain.shape[1]
    if rule.pn > 0:
        rule.pg = &plain[0, 0]
        rule.pw = &plain[1, 0]
    else:
        rule.pg = NULL
        rule.pw = NULL
    return rule


def two_term_cdf(double x, double w1, double n1, double w2, double n2,
                 smooth, plain):
    """CDF of ``w1 chi2(n1) + w2 chi2(n2)`` at ``x``.

    Args:
        smooth: (3, n) array of mapped nodes, map derivatives and weights.
        plain: (2, m) array of nodes and weights on [0, 1]; m may be 0.
    """
    cdef double[:, ::1] s = np.ascontiguousarray(smooth, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(plain, dtype=np.float64)
    cdef Rule rule = _make_rule(s, p)
    cdef double out
    with nogil:
        out = _two_term(x, w1, n1, w2, n2, &rule)
    return out


cdef inline double _pair_value(double x, double k, long i, long j, long m, double denom,
                               const Rule* rule) noexcept nogil:
    cdef double lam = 0.5 * m / denom
    return _two_term(x, lam / (i * k), i * k, (1.0 - lam) / (j * k), j * k, rule)


def middle_sup(double x, long k, pair_i, pair_j, long n_lambda, strides,
               double stop_above, double skip_floor, bounds, values, smooth, plain):
    """Best two-block configuration at ``x``.

    Pairs are scanned in order. For each pair the lambda grid
    ``0.5 * m / (n_lambda - 1)`` is searched on the lattice of the first
    stride, then refined around the running maximum with each finer stride.
    A pair is skipped when its entry in ``bounds`` (an upper bound on its
    value, e.g. its best at a larger ``x``) cannot beat the running best or
    ``skip_floor``. The scan stops once a value exceeds ``stop_above``.

    ``values`` receives each pair's best (or its bound when skipped, NaN when
    the scan stopped first).

    Returns:
        (F, pair index, lambda index, pairs evaluated); pair index is -1 if
        nothing was evaluated.
    """
    cdef double[:, ::1] s = np.ascontiguousarray(smooth, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(plain, dtype=np.float64)
    cdef Rule rule = _make_rule(s, p)
    cdef long[::1] pi = np.ascontiguousarray(pair_i, dtype=np.int64)
    cdef long[::1] pj = np.ascontiguousarray(pair_j, dtype=np.int64)
    cdef long[::1] st = np.ascontiguousarray(strides, dtype=np.int64)
    cdef double[::1] bnd = bounds
    cdef double[::1] out = values
    cdef Py_ssize_t nlev = st.shape[0]
    cdef Py_ssize_t npairs = pi.shape[0]
    cdef Py_ssize_t q, qq, lev, best_q = -1, evaluated = 0
    cdef long m, t, r, best_m = -1, cm, center, last = n_lambda - 1
    cdef double kk = <double> k, denom = <double> (n_lambda - 1)
    cdef double v, best = -1.0, cbest
    with nogil:
        for q in range(npairs):
            if bnd[q] <= fmax(best, skip_floor):
                out[q] = bnd[q]
                continue
            evaluated += 1
            # lambda = 0 leaves only the j-block
            cbest = gammainc(0.5 * pj[q] * kk, 0.5 * x * pj[q] * kk)
            cm = 0
            m = st[0]
            while True:
                if m > last:
                    m = last
                v = _pair_value(x, kk, pi[q], pj[q], m, denom, &rule)
                if v > cbest:
                    cbest = v
                    cm = m
                if m == last:
                    break
                m += st[0]
            for lev in range(1, nlev):
                r = st[lev - 1] // st[lev]
                center = cm
                for t in range(1 - r, r):
                    if t == 0:
                        continue
                    m = center + t * st[lev]
                    if m < 0 or m > last:
                        continue
                    v = _pair_value(x, kk, pi[q], pj[q], m, denom, &rule)
                    if v > cbest:
                        cbest = v
                        cm = m
            out[q] = cbest
            if cbest > best:
                best = cbest
                best_q = q
                best_m = cm
            if best > stop_above:
                for qq in range(q + 1, npairs):
                    out[qq] = NAN
                break
    return best, best_q, best_m, evaluated
