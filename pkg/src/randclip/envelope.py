"""Envelope CDF of the squared norm-estimation factor for Hutch and Hutch++."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import kernels
from .numerics import DomainError

ESTIMATORS = ("hutch", "hutchpp")
SEARCH_CAP = 256
CAP_MIN_D = 512
FTOL = 1e-9
MONOTONE_TOL = 1e-6


class EnvelopeError(RuntimeError):
    """Raised when a built envelope violates monotonicity beyond tolerance."""


class EnvelopeFormatError(ValueError):
    """Raised on malformed envelope text."""


@dataclass
class EnvelopeGrid:
    """Tabulated envelope CDF.

    Attributes:
        k: projection dimension.
        d: number of blocks in the configuration simplex.
        estimator: "hutch" or "hutchpp".
        x_plus: start of the uniform branch (1 for Hutch++).
        x: strictly increasing abscissae.
        F: nondecreasing CDF values in [0, 1].
        n_lambda: lambda grid size used by the middle-region search.
        search_cap: cap on i + j in the middle search, or None if uncapped.
    """

    k: int
    d: int
    estimator: str
    x_plus: float
    x: np.ndarray
    F: np.ndarray
    n_lambda: int
    search_cap: int | None = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        _validate(self)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.F.tolist()))

    def cdf(self, y):
        """Piecewise-linear interpolation of the table; 0 below and 1 above it."""
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.x, self.F, left=0.0, right=1.0)
        out = np.where(y < self.x[0], 0.0, out)
        return float(out) if out.ndim == 0 else out

    def quantile(self, q: float) -> float:
        """Smallest y with cdf(y) >= q under the piecewise-linear table."""
        if not 0.0 <= q <= 1.0:
            raise DomainError(f"quantile level must lie in [0, 1], got {q!r}")
        idx = int(np.searchsorted(self.F, q, side="left"))
        if idx >= len(self.F):
            return float(self.x[-1])
        if idx == 0:
            return float(self.x[0])
        f0, f1 = self.F[idx - 1], self.F[idx]
        x0, x1 = self.x[idx - 1], self.x[idx]
        return float(x0 + (q - f0) / (f1 - f0) * (x1 - x0))


def _validate(g: EnvelopeGrid) -> None:
    if g.estimator not in ESTIMATORS:
        raise DomainError(f"estimator must be one of {ESTIMATORS}, got {g.estimator!r}")
    if g.k <= 0 or g.d <= 0:
        raise DomainError("k and d must be positive")
    if not 1.0 <= g.x_plus <= 2.0:
        raise DomainError(f"x_plus must lie in [1, 2], got {g.x_plus!r}")
    if g.x.ndim != 1 or g.x.shape != g.F.shape or g.x.size == 0:
        raise DomainError("x and F must be nonempty vectors of equal length")
    if np.any(np.diff(g.x) <= 0):
        raise DomainError("x must be strictly increasing")
    if np.any(np.diff(g.F) < 0):
        raise DomainError("F must be nondecreasing")
    if np.any(g.F < 0) or np.any(g.F > 1):
        raise DomainError("F must lie in [0, 1]")


def vertex_cdf(x, k: int):
    """CDF of chi2(k)/k, the single-block configuration."""
    return _chi2_mean_one(x, k)


def uniform_cdf(x, k: int, d: int):
    """CDF of chi2(kd)/(kd), the uniform configuration."""
    return _chi2_mean_one(x, k * d)


def _chi2_mean_one(x, n):
    x = np.asarray(x, dtype=float)
    out = special.gammainc(0.5 * n, 0.5 * n * np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out


def hutchpp_envelope(x, k: int):
    """Hutch++ envelope: max of the chi2(k)/k CDF and the unit step at 1."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 1.0, 1.0, vertex_cdf(x, k))
    return float(out) if out.ndim == 0 else out


def search_pairs(d: int) -> tuple[np.ndarray, np.ndarray, int | None]:
    """Ordered (i, j) block pairs searched in the middle region.

    The spike pairs (1, d-1) and (d-1, 1) come first, then the balanced
    pairs, then all others with i + j <= d. For d >= 512 the generic pairs
    are capped at i + j <= 256.

    Returns:
        (i array, j array, cap or None).
    """
    if d < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), None
    cap = SEARCH_CAP if d >= CAP_MIN_D else None
    first = [(1, d - 1), (d - 1, 1), ((d + 1) // 2, d // 2), (d // 2, (d + 1) // 2)]
    seen, pairs = set(), []
    for p in first:
        if p not in seen:
            seen.add(p)
            pairs.append(p)
    limit = d if cap is None else min(d, cap)
    for s in range(2, limit + 1):
        for i in range(1, s):
            p = (i, s - i)
            if p not in seen:
                seen.add(p)
                pairs.append(p)
    arr = np.array(pairs, dtype=np.int64)
    return arr[:, 0].copy(), arr[:, 1].copy(), cap


@dataclass(frozen=True)
class MiddleSup:
    """Maximizer of the two-block CDF.

    ``lam`` weights the i-block and is reported in [0.5, 1].
    """

    i: int
    j: int
    lam: float
    F: float


def _report(pi, pj, q, m, n_lambda, f) -> MiddleSup:
    # internal search weights the i-block by lam <= 0.5; report the heavier block first
    lam = 0.5 * m / (n_lambda - 1)
    return MiddleSup(i=int(pj[q]), j=int(pi[q]), lam=1.0 - lam, F=f)


def _check_kd(k: int, d: int) -> None:
    if k < 1 or d < 1:
        raise DomainError(f"k and d must be positive, got k={k!r}, d={d!r}")


def _check_n_lambda(n_lambda: int) -> None:
    if n_lambda < 101:
        raise DomainError(f"n_lambda must be at least 101, got {n_lambda!r}")


def middle_region_sup(x: float, k: int, d: int, n_lambda: int = 501) -> MiddleSup:
    """Maximize the two-block CDF at ``x`` over block pairs and lambda.

    Raises:
        DomainError: if ``x`` is outside (1, 2), ``n_lambda < 101`` or k, d < 1.
    """
    _check_kd(k, d)
    if not 1.0 < x < 2.0:
        raise DomainError(f"x must lie in (1, 2), got {x!r}")
    _check_n_lambda(n_lambda)
    if d == 1:
        return MiddleSup(i=1, j=0, lam=1.0, F=vertex_cdf(x, k))
    pi, pj, _ = search_pairs(d)
    f, q, m, _, _ = kernels.middle_sup(x, k, pi, pj, n_lambda)
    return _report(pi, pj, q, m, n_lambda, f)


def _x_plus_search(k, d, tau, n_lambda, pi, pj):
    """Bisection for x_plus; also returns per-pair upper bounds valid below it."""
    lo, hi = 1.0, 2.0
    bounds = np.full(len(pi), np.inf)
    probes = 0
    while hi - lo > tau:
        mid = 0.5 * (lo + hi)
        floor = uniform_cdf(mid, k, d) + FTOL
        if floor >= 1.0:
            hi = mid
            continue
        order = np.argsort(-bounds, kind="stable")
        f, _, _, vals, _ = kernels.middle_sup(
            mid, k, pi[order], pj[order], n_lambda,
            stop_above=floor, skip_floor=floor, bounds=bounds[order],
        )
        probes += 1
        if f > floor:
            lo = mid
        else:
            hi = mid
            bounds = np.empty_like(vals)
            bounds[order] = vals
    return hi, bounds, probes


def find_x_plus(k: int, d: int, tau: float = 1e-4, n_lambda: int = 501) -> float:
    """Smallest x (within ``tau``) from which the uniform configuration dominates.

    Bisects on [1, 2]. At each probe the uniform CDF is compared with the best
    two-block configuration; a block pair beating it by more than 1e-9 moves
    the bracket right. The returned value is the upper end of the final
    bracket, so it never lies below the crossing.

    Raises:
        DomainError: if ``tau`` is outside (0, 1e-2] or k, d < 1.
    """
    _check_kd(k, d)
    if not 0.0 < tau <= 1e-2:
        raise DomainError(f"tau must lie in (0, 1e-2], got {tau!r}")
    _check_n_lambda(n_lambda)
    if d == 1:
        return 1.0
    pi, pj, _ = search_pairs(d)
    return _x_plus_search(k, d, tau, n_lambda, pi, pj)[0]


def build_hutch_envelope(
    k: int,
    d: int,
    x_min: float = 1e-4,
    x_max: float | None = None,
    n_grid: int = 2048,
    n_lambda: int = 501,
    tau: float = 1e-4,
) -> EnvelopeGrid:
    """Tabulate the Hutch envelope on a uniform grid refined inside (1, x_plus).

    Points at or below 1 use the chi2(k)/k CDF, points at or above x_plus
    the chi2(kd)/(kd) CDF, and points in between the middle-region supremum.
    The middle points are swept from right to left so that each pair's value
    at the previous point bounds it at the next, letting most pairs be skipped.

    Raises:
        DomainError: on invalid grid arguments.
        EnvelopeError: if the tabulated CDF decreases by more than 1e-6.
    """
    _check_kd(k, d)
    if n_grid < 64:
        raise DomainError(f"n_grid must be at least 64, got {n_grid!r}")
    if not 0.0 < tau <= 1e-2:
        raise DomainError(f"tau must lie in (0, 1e-2], got {tau!r}")
    _check_n_lambda(n_lambda)
    if d == 1:
        x_plus, bounds = 1.0, None
        pi = pj = np.zeros(0, dtype=np.int64)
        cap = None
    else:
        pi, pj, cap = search_pairs(d)
        x_plus, bounds, _ = _x_plus_search(k, d, tau, n_lambda, pi, pj)
    if x_max is None:
        x_max = max(3.0, x_plus + 1.0)
    if not 0.0 <= x_min < 1.0 < x_max:
        raise DomainError("need 0 <= x_min < 1 < x_max")
    xs = _grid(x_min, x_max, n_grid, x_plus)
    F = np.empty_like(xs)
    left = xs <= 1.0
    right = xs >= x_plus
    mid = ~(left | right)
    F[left] = vertex_cdf(xs[left], k)
    F[right] = uniform_cdf(xs[right], k, d)
    argmax = {}
    for idx in np.flatnonzero(mid)[::-1]:
        order = np.argsort(-bounds, kind="stable")
        f, q, m, vals, _ = kernels.middle_sup(
            xs[idx], k, pi[order], pj[order], n_lambda, bounds=bounds[order],
        )
        bounds = np.empty_like(vals)
        bounds[order] = vals
        F[idx] = f
        argmax[float(xs[idx])] = _report(pi[order], pj[order], q, m, n_lambda, f)
    F = _enforce_monotone(xs, F)
    grid = EnvelopeGrid(k=k, d=d, estimator="hutch", x_plus=x_plus, x=xs, F=F,
                        n_lambda=n_lambda, search_cap=cap)
    grid.meta["argmax"] = argmax
    return grid


def build_hutchpp_envelope(
    k: int, d: int = 1, x_min: float = 1e-4, x_max: float = 3.0, n_grid: int = 2048,
) -> EnvelopeGrid:
    """Tabulate the Hutch++ envelope on a uniform grid that includes x = 1."""
    _check_kd(k, d)
    if n_grid < 64:
        raise DomainError(f"n_grid must be at least 64, got {n_grid!r}")
    if not 0.0 <= x_min < 1.0 < x_max:
        raise DomainError("need 0 <= x_min < 1 < x_max")
    xs = _grid(x_min, x_max, n_grid, 1.0)
    return EnvelopeGrid(k=k, d=d, estimator="hutchpp", x_plus=1.0, x=xs,
                        F=hutchpp_envelope(xs, k), n_lambda=0)


def _grid(x_min, x_max, n_grid, x_plus):
    xs = np.linspace(x_min, x_max, n_grid)
    extra = [1.0, x_plus]
    if x_plus > 1.0:
        step = min(xs[1] - xs[0], (x_plus - 1.0) / 32)
        n = int(math.ceil((x_plus - 1.0) / step))
        extra.extend(1.0 + (x_plus - 1.0) * np.arange(1, n) / n)
    xs = np.unique(np.concatenate([xs, extra]))
    return xs[(xs >= x_min) & (xs <= x_max)]


def _enforce_monotone(xs, F):
    running = np.maximum.accumulate(F)
    drop = running - F
    worst = int(np.argmax(drop))
    if drop[worst] > MONOTONE_TOL:
        raise EnvelopeError(
            f"envelope decreases by {drop[worst]:.3g} at x={xs[worst]:.17g}"
        )
    return np.clip(running, 0.0, 1.0)


def serialize_envelope(g: EnvelopeGrid) -> str:
    """Text form: header lines then ``x,F`` rows with 17 significant digits."""
    lines = [
        "# envelope v1",
        f"# estimator={g.estimator}",
        f"# k={g.k} d={g.d} x_plus={g.x_plus:.17g} n_lambda={g.n_lambda}",
    ]
    if g.search_cap is not None:
        lines.append(f"# search_cap={g.search_cap}")
    lines += [f"{x:.17g},{f:.17g}" for x, f in zip(g.x, g.F)]
    return "\n".join(lines) + "\n"


def parse_envelope(text: str) -> EnvelopeGrid:
    """Inverse of :func:`serialize_envelope`.

    Raises:
        EnvelopeFormatError: on a malformed header, malformed rows, no rows,
            or a non-monotone table.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3 or lines[0] != "# envelope v1":
        raise EnvelopeFormatError("missing '# envelope v1' header")
    if not lines[1].startswith("# estimator="):
        raise EnvelopeFormatError("missing estimator header")
    estimator = lines[1][len("# estimator="):]
    fields = {}
    try:
        for token in lines[2].lstrip("#").split():
            key, value = token.split("=")
            fields[key] = value
        k, d = int(fields["k"]), int(fields["d"])
        x_plus, n_lambda = float(fields["x_plus"]), int(fields["n_lambda"])
    except (KeyError, ValueError) as exc:
        raise EnvelopeFormatError(f"malformed parameter header: {lines[2]!r}") from exc
    rows = lines[3:]
    cap = None
    if rows and rows[0].startswith("# search_cap="):
        try:
            cap = int(rows[0][len("# search_cap="):])
        except ValueError as exc:
            raise EnvelopeFormatError(f"malformed search_cap line: {rows[0]!r}") from exc
        rows = rows[1:]
    if not rows:
        raise EnvelopeFormatError("envelope has no points")
    try:
        data = np.array([[float(v) for v in row.split(",")] for row in rows])
    except ValueError as exc:
        raise EnvelopeFormatError("malformed point row") from exc
    if data.ndim != 2 or data.shape[1] != 2:
        raise EnvelopeFormatError("each point row must be 'x,F'")
    try:
        return EnvelopeGrid(k=k, d=d, estimator=estimator, x_plus=x_plus, x=data[:, 0],
                            F=data[:, 1], n_lambda=n_lambda, search_cap=cap)
    except DomainError as exc:
        raise EnvelopeFormatError(str(exc)) from exc
