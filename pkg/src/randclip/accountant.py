"""Privacy-loss-distribution accountant for clipping with a random norm factor.

The single-step privacy loss of the Poisson-subsampled Gaussian mechanism is
tabulated on a uniform mesh from its survival function, composed across steps
and epochs by FFT exponentiation, and turned into delta(eps).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import fft, optimize

from .envelope import EnvelopeGrid
from .numerics import DomainError, std_normal_cdf

NEG_CLIP = -1e-12
TRIM_MASS = 1e-30
CLIPPED_MASS_MAX = 1e-3
OUTSIDE_MASS_MAX = 1e-4
QUANTILE = 1e-7
SIGMA_BRACKET = (0.3, 64.0)
SIGMA_RTOL = 1e-3
_CHUNK = 1 << 22
MAX_FFT = 1 << 23


class AccuracyAlarm(RuntimeError):
    """Raised when discretization or truncation error exceeds its budget."""


class TailMassAlarm(AccuracyAlarm):
    """Raised when composed mass above t_max exceeds its budget."""


class SupportExhausted(RuntimeError):
    """delta at t_max still exceeds the target; carries a suggested t_max."""

    def __init__(self, message: str, required_t_max: float):
        super().__init__(message)
        self.required_t_max = required_t_max


class BracketExhausted(RuntimeError):
    """No noise multiplier in the search bracket meets the privacy target."""


@dataclass
class AccountantConfig:
    """Inputs of one accounting job.

    Attributes:
        sigma: noise multiplier.
        N: dataset size.
        B: expected batch size; the sampling rate is B / N.
        E: epochs.
        delta_tgt: target delta.
        h: mesh of the privacy-loss grid.
        t_max: support cap of the privacy-loss grid.
        envelope: envelope of the squared norm-estimation factor Y, or None
            for deterministic clipping (Y = 1).
        scale_bins: number of bins used to discretize Y.
    """

    sigma: float
    N: int
    B: int
    E: int
    delta_tgt: float = 1e-5
    h: float = 1e-4
    t_max: float = 16.0
    envelope: EnvelopeGrid | None = None
    scale_bins: int = 512

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma!r}")
        if not 0 < self.B <= self.N:
            raise DomainError(f"need 0 < B <= N, got B={self.B!r}, N={self.N!r}")
        if self.E < 1:
            raise DomainError(f"E must be at least 1, got {self.E!r}")
        if not 0 < self.delta_tgt < 1:
            raise DomainError(f"delta_tgt must lie in (0, 1), got {self.delta_tgt!r}")
        if not 0 < self.h <= 1e-2:
            raise DomainError(f"h must lie in (0, 1e-2], got {self.h!r}")
        if not self.t_max > 0:
            raise DomainError(f"t_max must be positive, got {self.t_max!r}")

    @property
    def p(self) -> float:
        return self.B / self.N

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.N // self.B)


@dataclass
class PldGrid:
    """Privacy-loss masses on the mesh ``t_j = (offset + j) * h``.

    Masses beyond the stored range are folded into the end cells.

    Attributes:
        h: mesh size.
        offset: integer mesh index of the first stored cell.
        masses: nonnegative masses summing to 1.
        t_max: support cap used when the grid was built or composed.
        tail_mass: mass above t_max folded into the top cell so far.
        clipped_mass: negative mass removed by clipping so far.
    """

    h: float
    offset: int
    masses: np.ndarray
    t_max: float
    tail_mass: float = 0.0
    clipped_mass: float = 0.0

    @property
    def t_points(self) -> np.ndarray:
        return (self.offset + np.arange(len(self.masses))) * self.h

    def mean(self) -> float:
        return float(np.dot(self.t_points, self.masses))

    def var(self) -> float:
        t = self.t_points
        mu = np.dot(t, self.masses)
        return float(np.dot((t - mu) ** 2, self.masses))


@dataclass
class ScaleDiscretization:
    """Discrete law of the sensitivity scale a = 1 / sqrt(Y).

    Attributes:
        weights: bin probabilities summing to 1.
        y_mid: representative Y value per bin.
    """

    weights: np.ndarray
    y_mid: np.ndarray

    @property
    def scales(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.y_mid)

    @classmethod
    def deterministic(cls) -> ScaleDiscretization:
        return cls(weights=np.ones(1), y_mid=np.ones(1))


def discretize_scale(envelope: EnvelopeGrid, M: int = 512) -> ScaleDiscretization:
    """Bin the envelope law of Y into ``M`` cells between its 1e-7 quantiles.

    Weights are clipped CDF increments across the bins, renormalized; bins
    with no mass are dropped.

    Raises:
        DomainError: if ``M < 64``.
        AccuracyAlarm: if more than 1e-4 of the envelope mass falls outside
            the binned range, i.e. the envelope table does not cover its tails.
    """
    if M < 64:
        raise DomainError(f"M must be at least 64, got {M!r}")
    y_min = envelope.quantile(QUANTILE)
    y_max = envelope.quantile(1.0 - QUANTILE)
    outside = float(envelope.cdf(y_min)) + 1.0 - float(envelope.cdf(y_max))
    if y_min <= 0.0:
        raise AccuracyAlarm("envelope puts mass at y <= 0; start the table above 0")
    if outside > OUTSIDE_MASS_MAX:
        raise AccuracyAlarm(f"envelope mass {outside:.3g} lies outside [{y_min}, {y_max}]")
    if y_max - y_min <= 1e-12 * y_max:
        return ScaleDiscretization(weights=np.ones(1), y_mid=np.array([0.5 * (y_min + y_max)]))
    edges = np.linspace(y_min, y_max, M + 1)
    w = np.maximum(np.diff(envelope.cdf(edges)), 0.0)
    mids = 0.5 * (edges[1:] + edges[:-1])
    keep = w > 0
    w, mids = w[keep], mids[keep]
    return ScaleDiscretization(weights=w / w.sum(), y_mid=mids)


def mechanism_kernels(t, sigma: float, sd: ScaleDiscretization):
    """Scale-averaged Gaussian log-likelihood-ratio tails.

    With mu_i = a_i / sigma the per-bin privacy loss is Gaussian; ``alpha`` is
    its survival under the null, ``beta`` its CDF under the shifted law.

    Returns:
        (alpha, beta, alpha_sf, beta_sf) where the survival variants
        1 - alpha and 1 - beta are computed without cancellation.
    """
    out = _kernel_sums(t, sigma, sd, (0, 1, 2, 3))
    if np.ndim(t) == 0:
        return tuple(float(v) for v in out)
    return out


def _kernel_sums(t, sigma, sd, slots):
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1)
    out = {slot: np.empty_like(flat) for slot in slots}
    mu = sd.scales / sigma
    half = 0.5 * mu
    step = max(1, _CHUNK // len(mu))
    for start in range(0, len(flat), step):
        u = flat[start:start + step, None] / mu
        # 1 - Phi(z) = Phi(-z) keeps the survival variants free of cancellation
        args = (lambda: -u - half, lambda: u - half, lambda: u + half, lambda: half - u)
        for slot in slots:
            out[slot][start:start + step] = std_normal_cdf(args[slot]()) @ sd.weights
    return tuple(out[slot].reshape(t.shape) for slot in slots)


def loss_survival(t, sigma: float, p: float, sd: ScaleDiscretization):
    """P[L > t] for the Poisson-subsampled mechanism with sampling rate ``p``.

    L = log(1 - p + p e^l) where l is the Gaussian log-likelihood ratio.
    L never falls below log(1 - p), so the survival is 1 there.
    """
    t = np.asarray(t, dtype=float)
    out = np.ones_like(t)
    if p >= 1.0:
        return _kernel_sums(t, sigma, sd, (3,))[0]
    live = t > math.log1p(-p)
    # L > t  <=>  l > t + s(t) with s(t) = log(1/p - (1 - p)/p e^-t)
    u = np.log((np.expm1(t[live]) + p) / p)
    alpha, beta_sf = _kernel_sums(u, sigma, sd, (0, 3))
    out[live] = p * beta_sf + (1.0 - p) * alpha
    return out


def _survival_range(sigma, p, sd, t_max, h):
    """Mesh index range outside which the loss has negligible mass."""
    lo = -int(math.floor(t_max / h + 0.5))
    hi = -lo
    if p < 1.0:
        lo = max(lo, int(math.floor(math.log1p(-p) / h)) - 1)

    def tail(i):
        return float(loss_survival(np.array([(i + 0.5) * h]), sigma, p, sd)[0])

    def head(i):
        return 1.0 - float(loss_survival(np.array([(i - 0.5) * h]), sigma, p, sd)[0])

    hi = _shrink(lo, hi, lambda i: tail(i) < TRIM_MASS, upper=True)
    if p >= 1.0:
        lo = _shrink(lo, hi, lambda i: head(i) < TRIM_MASS, upper=False)
    return lo, hi


def _shrink(lo, hi, negligible, upper):
    # binary search for the tightest end whose outside mass is negligible
    if upper:
        if not negligible(hi):
            return hi
        a, b = lo, hi
        while b - a > 1:
            m = (a + b) // 2
            if negligible(m):
                b = m
            else:
                a = m
        return b
    if not negligible(lo):
        return lo
    a, b = lo, hi
    while b - a > 1:
        m = (a + b) // 2
        if negligible(m):
            a = m
        else:
            b = m
    return a


def build_single_step_pld(cfg: AccountantConfig, sd: ScaleDiscretization | None = None) -> PldGrid:
    """Tabulate the single-step privacy loss on cells of width h centered at j h.

    Cell masses are differences of the survival function across the cut
    points (j +- 1/2) h. Mass above the range is folded into the top cell.

    Raises:
        AccuracyAlarm: if more than 1e-3 of negative mass had to be clipped.
    """
    if sd is None:
        sd = ScaleDiscretization.deterministic() if cfg.envelope is None else discretize_scale(
            cfg.envelope, cfg.scale_bins)
    lo, hi = _survival_range(cfg.sigma, cfg.p, sd, cfg.t_max, cfg.h)
    cuts = (np.arange(lo, hi + 2) - 0.5) * cfg.h
    S = loss_survival(cuts, cfg.sigma, cfg.p, sd)
    S[0] = 1.0
    masses = S[:-1] - S[1:]
    masses[-1] += S[-1]
    clipped = -float(masses[masses < 0].sum()) + 0.0
    if clipped > CLIPPED_MASS_MAX:
        raise AccuracyAlarm(f"clipped negative mass {clipped:.3g} exceeds {CLIPPED_MASS_MAX}")
    masses = np.maximum(masses, 0.0)
    masses /= masses.sum()
    pld = PldGrid(h=cfg.h, offset=lo, masses=masses, t_max=cfg.t_max,
                  tail_mass=float(S[-1]), clipped_mass=clipped)
    return _trim(pld)


def _trim(pld: PldGrid) -> PldGrid:
    # drop negligible end cells, folding their mass into the kept end cells
    q = pld.masses
    c = np.cumsum(q)
    r = np.cumsum(q[::-1])[::-1]
    first = int(np.searchsorted(c, TRIM_MASS, side="right"))
    last = len(q) - 1 - int(np.searchsorted(r[::-1], TRIM_MASS, side="right"))
    first = min(first, len(q) - 1)
    last = max(last, first)
    kept = q[first:last + 1].copy()
    kept[0] += c[first] - q[first]
    kept[-1] += r[last] - q[last]
    return PldGrid(h=pld.h, offset=pld.offset + first, masses=kept, t_max=pld.t_max,
                   tail_mass=pld.tail_mass, clipped_mass=pld.clipped_mass)


def _clean(q: np.ndarray) -> tuple[np.ndarray, float]:
    clipped = -float(q[q < NEG_CLIP].sum()) + 0.0
    q = np.maximum(q, 0.0)
    return q / q.sum(), clipped


def _cut(q: np.ndarray, offset: int, cap: int) -> tuple[np.ndarray, int, float]:
    # restrict to [-cap, cap]; mass below goes to the bottom cell, above to the top
    lo_idx = max(0, -cap - offset)
    hi_idx = min(len(q) - 1, cap - offset)
    tail = float(q[hi_idx + 1:].sum())
    kept = q[lo_idx:hi_idx + 1].copy()
    kept[0] += q[:lo_idx].sum()
    kept[-1] += tail
    return kept, offset + lo_idx, tail


def _product(a: PldGrid, b: PldGrid, cap: int) -> PldGrid:
    size = len(a.masses) + len(b.masses) - 1
    nfft = fft.next_fast_len(size, real=True)
    q = fft.irfft(fft.rfft(a.masses, nfft) * fft.rfft(b.masses, nfft), nfft)[:size]
    q, clipped = _clean(q)
    kept, offset, tail = _cut(q, a.offset + b.offset, cap)
    return _trim(PldGrid(h=a.h, offset=offset, masses=kept, t_max=a.t_max,
                         tail_mass=a.tail_mass + b.tail_mass + tail,
                         clipped_mass=a.clipped_mass + b.clipped_mass + clipped))


def compose(pld: PldGrid, times: int, tail_budget: float | None = None) -> PldGrid:
    """Law of the sum of ``times`` independent copies, by FFT exponentiation.

    The transform is zero-padded to the full support of the sum, so there is
    no wrap-around. Negative round-off is clipped and the result renormalized.
    The support is then cut back to [-t_max, t_max]; mass above is folded
    into the top cell and added to ``tail_mass``. When the padded sum would
    exceed ``MAX_FFT`` cells, binary squaring is used instead, cutting back
    to [-t_max, t_max] after every stage.

    Raises:
        DomainError: if ``times < 1``.
        TailMassAlarm: if the folded tail mass exceeds ``tail_budget``.
    """
    if times < 1:
        raise DomainError(f"times must be at least 1, got {times!r}")
    if times == 1:
        return pld
    n = len(pld.masses)
    size = (n - 1) * times + 1
    cap = int(math.floor(pld.t_max / pld.h + 0.5))
    if size <= MAX_FFT:
        nfft = fft.next_fast_len(size, real=True)
        q, clipped = _clean(fft.irfft(fft.rfft(pld.masses, nfft) ** times, nfft)[:size])
        kept, offset, tail = _cut(q, pld.offset * times, cap)
        out = _trim(PldGrid(h=pld.h, offset=offset, masses=kept, t_max=pld.t_max,
                            tail_mass=pld.tail_mass * times + tail,
                            clipped_mass=pld.clipped_mass + clipped))
    else:
        out, base = None, pld
        while times:
            if times & 1:
                out = base if out is None else _product(out, base, cap)
            times >>= 1
            if times:
                base = _product(base, base, cap)
    if tail_budget is not None and out.tail_mass > tail_budget:
        raise TailMassAlarm(
            f"tail mass {out.tail_mass:.3g} above t_max={pld.t_max} exceeds {tail_budget:.3g}"
        )
    return out


def delta_of_eps(pld: PldGrid, eps: float) -> float:
    """One-sided hockey-stick divergence sum_{t_j > eps} q_j (1 - e^(eps - t_j))."""
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps!r}")
    t = pld.t_points
    sel = t > eps
    if not sel.any():
        return 0.0
    val = float(np.dot(pld.masses[sel], -np.expm1(eps - t[sel])))
    return min(1.0, max(0.0, val))


def delta_of_eps_two_sided(pld: PldGrid, eps: float) -> float:
    """Diagnostic P[L > eps] - e^eps P[L < -eps], clipped to [0, 1]."""
    if eps < 0:
        raise DomainError(f"eps must be nonnegative, got {eps!r}")
    t = pld.t_points
    val = pld.masses[t > eps].sum() - math.exp(eps) * pld.masses[t < -eps].sum()
    return min(1.0, max(0.0, float(val)))


def solve_eps(pld: PldGrid, delta_tgt: float) -> float:
    """Smallest eps with delta_of_eps(pld, eps) <= delta_tgt.

    Raises:
        SupportExhausted: if delta at t_max still exceeds the target.
    """
    if not 0 < delta_tgt < 1:
        raise DomainError(f"delta_tgt must lie in (0, 1), got {delta_tgt!r}")
    if delta_of_eps(pld, 0.0) <= delta_tgt:
        return 0.0
    # the top cell holds all mass at or above t_max, which bounds delta(t_max)
    at_cap = pld.t_points[-1] >= pld.t_max - 0.5 * pld.h
    if at_cap and pld.masses[-1] > delta_tgt:
        raise SupportExhausted(
            f"delta({pld.t_max}) may exceed {delta_tgt}; enlarge t_max", 2.0 * pld.t_max)
    hi = 1.0
    while hi < pld.t_max and delta_of_eps(pld, hi) > delta_tgt:
        hi *= 2.0
    hi = min(hi, pld.t_max)
    return float(optimize.brentq(lambda e: delta_of_eps(pld, e) - delta_tgt, 0.0, hi,
                                 xtol=1e-12, rtol=1e-12))


@dataclass
class AccountingResult:
    """Outcome of composing the whole training run."""

    eps: float
    delta: float
    p: float
    steps_per_epoch: int
    epochs: int
    tail_mass: float
    clipped_mass: float
    support: tuple[float, float]
    cells: int


def account(cfg: AccountantConfig, sd: ScaleDiscretization | None = None) -> AccountingResult:
    """eps at cfg.delta_tgt after E epochs of ceil(N / B) steps each."""
    pld = total_pld(cfg, sd)
    eps = solve_eps(pld, cfg.delta_tgt)
    return AccountingResult(
        eps=eps, delta=delta_of_eps(pld, eps), p=cfg.p, steps_per_epoch=cfg.steps_per_epoch,
        epochs=cfg.E, tail_mass=pld.tail_mass, clipped_mass=pld.clipped_mass,
        support=(float(pld.t_points[0]), float(pld.t_points[-1])), cells=len(pld.masses),
    )


def total_pld(cfg: AccountantConfig, sd: ScaleDiscretization | None = None) -> PldGrid:
    """Compose one epoch of steps, then the epochs."""
    budget = cfg.delta_tgt / 10
    step = build_single_step_pld(cfg, sd)
    epoch = compose(step, cfg.steps_per_epoch, tail_budget=budget)
    return compose(epoch, cfg.E, tail_budget=budget)


def solve_sigma(
    cfg: AccountantConfig, eps_tgt: float, delta_tgt: float | None = None,
    bracket: tuple[float, float] = SIGMA_BRACKET, rtol: float = SIGMA_RTOL,
) -> float:
    """Smallest noise multiplier in ``bracket`` meeting (eps_tgt, delta_tgt).

    Bisects in sigma until the bracket's relative width is below ``rtol`` and
    returns its upper end. ``cfg.sigma`` is ignored.

    Raises:
        BracketExhausted: if even the upper bracket end misses the target.
    """
    if not 0 < eps_tgt < cfg.t_max:
        raise DomainError(f"eps_tgt must lie in (0, t_max), got {eps_tgt!r}")
    delta_tgt = cfg.delta_tgt if delta_tgt is None else delta_tgt
    sd = ScaleDiscretization.deterministic() if cfg.envelope is None else discretize_scale(
        cfg.envelope, cfg.scale_bins)

    def eps_at(sigma):
        probe = AccountantConfig(**{**_fields(cfg), "sigma": sigma, "delta_tgt": delta_tgt})
        try:
            return account(probe, sd).eps
        except (SupportExhausted, TailMassAlarm):
            # the loss escapes the accountable range, so eps exceeds t_max
            return math.inf

    lo, hi = bracket
    if eps_at(lo) <= eps_tgt:
        return lo
    if eps_at(hi) > eps_tgt:
        raise BracketExhausted(f"sigma={hi} still gives eps above {eps_tgt}")
    while hi / lo - 1.0 > rtol:
        mid = 0.5 * (lo + hi)
        if eps_at(mid) <= eps_tgt:
            hi = mid
        else:
            lo = mid
    return hi


def _fields(cfg: AccountantConfig) -> dict:
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


def report(cfg: AccountantConfig, result: AccountingResult) -> str:
    """JSON report echoing inputs and diagnostics."""
    inputs = {k: v for k, v in _fields(cfg).items() if k != "envelope"}
    if cfg.envelope is not None:
        env = cfg.envelope
        inputs["envelope"] = {"estimator": env.estimator, "k": env.k, "d": env.d,
                              "x_plus": env.x_plus, "points": len(env.x)}
    else:
        inputs["envelope"] = None
    body = asdict(result)
    body["support"] = list(result.support)
    return json.dumps({"inputs": inputs, **body}, indent=2, sort_keys=True)
