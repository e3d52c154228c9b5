"""Per-sample gradient-norm estimators for a linear layer with factored gradient A^T G."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .linalg import DimensionError, Mat, frob_norm_sq, matmul, qr_orthonormal_basis
from .numerics import DomainError, SeededStream


class Estimator(str, enum.Enum):
    HUTCH = "hutch"
    HUTCHPP = "hutchpp"


class ProjectSide(str, enum.Enum):
    """Which dimension of A^T G (d x p) the sketch contracts."""

    AUTO = "auto"
    ROWS = "rows"
    COLS = "cols"


@dataclass(frozen=True)
class FactoredSample:
    """Per-sample gradient A^T G of a linear layer.

    Attributes:
        A: T x d layer inputs.
        G: T x p gradients with respect to the layer outputs.
    """

    A: Mat
    G: Mat

    def __post_init__(self):
        A = self.A if isinstance(self.A, Mat) else Mat(self.A)
        G = self.G if isinstance(self.G, Mat) else Mat(self.G)
        if A.rows != G.rows:
            raise DimensionError(f"A has {A.rows} rows but G has {G.rows}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", G)

    @property
    def d(self) -> int:
        return self.A.cols

    @property
    def p(self) -> int:
        return self.G.cols

    def transposed(self) -> FactoredSample:
        """The sample whose gradient is (A^T G)^T = G^T A."""
        return FactoredSample(self.G, self.A)


@dataclass(frozen=True)
class SketchConfig:
    """Sketch settings.

    Attributes:
        k: projection dimension.
        estimator: hutch or hutchpp.
        project_side: AUTO contracts the larger of d and p; COLS contracts p
            (P is p x k); ROWS contracts d.
    """

    k: int
    estimator: Estimator = Estimator.HUTCH
    project_side: ProjectSide = ProjectSide.AUTO

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"k must be at least 1, got {self.k!r}")
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        object.__setattr__(self, "project_side", ProjectSide(self.project_side))


def exact_norm_sq(s: FactoredSample) -> float:
    """||A^T G||_F^2 by forming A^T G."""
    return frob_norm_sq(matmul(s.A.T, s.G))


def ghost_norm_sq(s: FactoredSample) -> float:
    """||A^T G||_F^2 as <A A^T, G G^T>, without forming A^T G."""
    aa = matmul(s.A, s.A.T).data
    gg = matmul(s.G, s.G.T).data
    return float(np.dot(aa.ravel(), gg.ravel()))


def _oriented(s: FactoredSample, side: ProjectSide) -> FactoredSample:
    # the sketch always contracts the G side; transpose when d should be contracted
    if side is ProjectSide.ROWS or (side is ProjectSide.AUTO and s.d > s.p):
        return s.transposed()
    return s


def _projection(stream: SeededStream, rows: int, k: int) -> np.ndarray:
    return stream.standard_normal((rows, k)) / math.sqrt(k)


def hutch_norm_sq(s: FactoredSample, cfg: SketchConfig, stream: SeededStream) -> float:
    """Hutchinson estimate ||A^T (G P)||_F^2 with P entries i.i.d. N(0, 1/k).

    A fresh P is drawn from ``stream`` on every call.
    """
    if cfg.estimator is not Estimator.HUTCH:
        raise DomainError("hutch_norm_sq needs estimator=hutch")
    s = _oriented(s, cfg.project_side)
    P = _projection(stream, s.p, cfg.k)
    return frob_norm_sq(matmul(s.A.T, matmul(s.G, P)))


def hutchpp_norm_sq(s: FactoredSample, cfg: SketchConfig, stream: SeededStream) -> float:
    """Hutch++ estimate ||U||_F^2 + ||V||_F^2.

    Q is an orthonormal basis of O S with O = G^T A A^T G evaluated right to
    left, U = A^T (G Q) is the captured head and V = A^T (G P) - U (Q^T P) the
    sketched remainder. S and P have i.i.d. N(0, 1/k) entries and are drawn
    fresh (S first) from ``stream``.
    """
    if cfg.estimator is not Estimator.HUTCHPP:
        raise DomainError("hutchpp_norm_sq needs estimator=hutchpp")
    s = _oriented(s, cfg.project_side)
    S = _projection(stream, s.p, cfg.k)
    P = _projection(stream, s.p, cfg.k)
    A, G = s.A, s.G
    Y = matmul(G.T, matmul(A, matmul(A.T, matmul(G, S))))
    Q = qr_orthonormal_basis(Y)
    U = matmul(A.T, matmul(G, Q))
    V = matmul(A.T, matmul(G, P)).data - U.data @ (Q.data.T @ P)
    return frob_norm_sq(U) + frob_norm_sq(V)


def estimate_norm_sq(s: FactoredSample, cfg: SketchConfig, stream: SeededStream) -> float:
    """Dispatch on ``cfg.estimator``."""
    if cfg.estimator is Estimator.HUTCH:
        return hutch_norm_sq(s, cfg, stream)
    return hutchpp_norm_sq(s, cfg, stream)


@dataclass(frozen=True)
class ErrorStats:
    """Relative-error summary for one estimator.

    Attributes:
        mean_rel_err: mean of |est - exact| / exact.
        ci95_halfwidth: 1.96 standard errors of that mean.
        median_rel_err: median over trials.
    """

    T: int
    d: int
    p: int
    k: int
    estimator: str
    mean_rel_err: float
    ci95_halfwidth: float
    median_rel_err: float
    trials: int

    def csv_row(self) -> list:
        return [self.T, self.d, self.p, self.k, self.estimator,
                f"{self.mean_rel_err:.6g}", f"{self.ci95_halfwidth:.6g}", self.trials]


CSV_HEADER = ["T", "d", "p", "k", "estimator", "mean_rel_err", "ci95_halfwidth", "trials"]
DISTRIBUTIONS = ("normal", "uniform")


def relative_error_benchmark(
    T: int, d: int, p: int, k: int, trials: int, stream: SeededStream,
    distribution: str = "normal",
) -> dict[str, ErrorStats]:
    """Relative errors of Hutch and Hutch++ on random instances.

    Each trial draws a fresh instance (entries standard normal, or uniform on
    [0, 1) with ``distribution="uniform"``) and applies both estimators to it.

    Returns:
        {"hutch": ErrorStats, "hutchpp": ErrorStats}
    """
    if trials < 30:
        raise DomainError(f"need at least 30 trials, got {trials!r}")
    if distribution not in DISTRIBUTIONS:
        raise DomainError(f"distribution must be one of {DISTRIBUTIONS}, got {distribution!r}")
    errs = {e: np.empty(trials) for e in Estimator}
    for t in range(trials):
        data = stream.substream(t, 0)
        draw = data.standard_normal if distribution == "normal" else data.uniform
        s = FactoredSample(Mat(draw((T, d))), Mat(draw((T, p))))
        exact = exact_norm_sq(s)
        for slot, est in enumerate(Estimator, start=1):
            cfg = SketchConfig(k=k, estimator=est)
            value = estimate_norm_sq(s, cfg, stream.substream(t, slot))
            errs[est][t] = abs(value - exact) / exact
    out = {}
    for est, e in errs.items():
        out[est.value] = ErrorStats(
            T=T, d=d, p=p, k=k, estimator=est.value, mean_rel_err=float(e.mean()),
            ci95_halfwidth=float(1.96 * e.std(ddof=1) / math.sqrt(trials)),
            median_rel_err=float(np.median(e)), trials=trials,
        )
    return out


def benchmark_csv(stats, header: bool = True) -> str:
    """CSV text for an iterable of :class:`ErrorStats`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_HEADER)
    for row in stats:
        writer.writerow(row.csv_row())
    return buf.getvalue()
