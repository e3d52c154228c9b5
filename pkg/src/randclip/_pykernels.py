"""Pure numpy twins of the compiled kernels (same algorithm, same evaluation order)."""

import numpy as np
from scipy import special

TAIL = 35.0
ZERO_WEIGHT = 1e-12
PLAIN_MIN_SHAPE = 8.0


def _support(a, b):
    # Sub-gamma tail bounds: mass outside [lo, hi] is below 2 * exp(-TAIL).
    r = np.sqrt(2.0 * a * TAIL)
    return np.maximum(0.0, a - r) * b, (a + r + TAIL) * b


def _quad(nodes, weights, lower, width, a1, b1, a2, b2, x, lnorm, deriv=None):
    y = lower[:, None] + width[:, None] * nodes[None, :]
    z = x - y
    ok = (y > 0.0) & (z > 0.0)
    ys = np.where(ok, y, 1.0)
    zs = np.where(ok, z, 0.0)
    w = weights if deriv is None else weights * deriv
    terms = w * np.exp((a2 - 1.0) * np.log(ys) - ys / b2[:, None] + lnorm[:, None])
    terms = np.where(ok, terms * special.gammainc(a1, zs / b1[:, None]), 0.0)
    acc = np.zeros(len(lower))
    for m in range(terms.shape[1]):
        acc += terms[:, m]
    return acc


def _two_term_vec(x, w1, n1, w2, n2, smooth, plain):
    """Two-term CDF for arrays of weights sharing the dofs ``n1`` and ``n2``."""
    w1 = np.atleast_1d(np.asarray(w1, dtype=float))
    w2 = np.atleast_1d(np.asarray(w2, dtype=float))
    out = np.zeros(w1.shape)
    if x <= 0.0:
        return out
    zero1 = w1 < ZERO_WEIGHT
    zero2 = (w2 < ZERO_WEIGHT) & ~zero1
    equal = (w1 == w2) & ~(zero1 | zero2)
    both = ~(zero1 | zero2 | equal)
    with np.errstate(divide="ignore"):
        out[zero1] = special.gammainc(0.5 * n2, x / (2.0 * w2[zero1]))
        out[zero2] = special.gammainc(0.5 * n1, x / (2.0 * w1[zero2]))
    out[equal] = special.gammainc(0.5 * (n1 + n2), x / (2.0 * w1[equal]))
    if not both.any():
        return out
    a1, a2 = 0.5 * n1, 0.5 * n2
    b1, b2 = 2.0 * w1[both], 2.0 * w2[both]
    if a1 > a2:
        a1, a2 = a2, a1
        b1, b2 = b2, b1
    lo_c, hi_c = _support(a1, b1)
    lo_d, hi_d = _support(a2, b2)
    base = special.gammainc(a2, np.maximum(0.0, x - hi_c) / b2)
    lower = np.maximum(np.maximum(0.0, x - hi_c), lo_d)
    upper = np.minimum(np.minimum(x - lo_c, hi_d), x)
    width = upper - lower
    lnorm = -special.gammaln(a2) - a2 * np.log(b2)
    res = base.copy()
    active = width > 0.0
    use_plain = active & (plain.shape[1] > 0) & (a1 >= PLAIN_MIN_SHAPE)
    use_smooth = active & ~use_plain
    for sel, nodes, weights, deriv in (
        (use_plain, plain[0], plain[1], None),
        (use_smooth, smooth[0], smooth[2], smooth[1]),
    ):
        if sel.any():
            acc = _quad(nodes, weights, lower[sel], width[sel], a1, b1[sel], a2, b2[sel], x,
                        lnorm[sel], deriv)
            res[sel] = base[sel] + width[sel] * acc
    out[both] = np.minimum(1.0, res)
    return out


def two_term_cdf(x, w1, n1, w2, n2, smooth, plain):
    """CDF of ``w1 chi2(n1) + w2 chi2(n2)`` at ``x``."""
    return float(_two_term_vec(x, w1, n1, w2, n2, smooth, plain)[0])


def _values(x, k, i, j, ms, last, smooth, plain):
    lam = 0.5 * np.asarray(ms, dtype=float) / last
    ik, jk = float(i * k), float(j * k)
    return _two_term_vec(x, lam / ik, ik, (1.0 - lam) / jk, jk, smooth, plain)


def middle_sup(x, k, pair_i, pair_j, n_lambda, strides, stop_above, skip_floor, bounds,
               values, smooth, plain):
    """Best two-block configuration at ``x``; see the compiled twin for details."""
    strides = [int(s) for s in strides]
    last = n_lambda - 1
    coarse = list(range(strides[0], last, strides[0])) + [last]
    best, best_q, best_m, evaluated = -1.0, -1, -1, 0
    pairs = list(zip(np.asarray(pair_i).tolist(), np.asarray(pair_j).tolist()))
    for q, (i, j) in enumerate(pairs):
        if bounds[q] <= max(best, skip_floor):
            values[q] = bounds[q]
            continue
        evaluated += 1
        cbest = float(special.gammainc(0.5 * j * k, 0.5 * x * j * k))
        cm = 0
        for m, v in zip(coarse, _values(x, k, i, j, coarse, last, smooth, plain)):
            if v > cbest:
                cbest, cm = v, m
        for prev, cur in zip(strides, strides[1:]):
            r = prev // cur
            center = cm
            ms = [center + t * cur for t in range(1 - r, r) if t != 0]
            ms = [m for m in ms if 0 <= m <= last]
            for m, v in zip(ms, _values(x, k, i, j, ms, last, smooth, plain)):
                if v > cbest:
                    cbest, cm = v, m
        values[q] = cbest
        if cbest > best:
            best, best_q, best_m = cbest, q, cm
        if best > stop_above:
            values[q + 1:] = np.nan
            break
    return float(best), best_q, best_m, evaluated
