"""Small dense matrix helpers used by the sketch estimators and the trainer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class NonFiniteEntries(ValueError):
    """Raised when a matrix would hold NaN or infinite entries."""


@dataclass(frozen=True)
class Mat:
    """Dense row-major real matrix.

    Attributes:
        data: 2-D C-contiguous float64 array of finite entries.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"Mat needs a 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteEntries("Mat entries must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> Mat:
        return Mat(self.data.T)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> Mat:
        return cls(np.zeros((rows, cols)))

    @classmethod
    def eye(cls, n: int) -> Mat:
        return cls(np.eye(n))


def _arr(X) -> np.ndarray:
    return X.data if isinstance(X, Mat) else np.asarray(X, dtype=np.float64)


def matmul(X, Y) -> Mat:
    """Matrix product X Y.

    Raises:
        DimensionError: if ``X.cols != Y.rows``.
    """
    x, y = _arr(X), _arr(Y)
    if x.shape[1] != y.shape[0]:
        raise DimensionError(f"cannot multiply {x.shape} by {y.shape}")
    return Mat(x @ y)


def frob_norm_sq(X) -> float:
    """Sum of squared entries."""
    x = _arr(X).ravel()
    return float(np.dot(x, x))


def qr_orthonormal_basis(X) -> Mat:
    """Orthonormal basis of the column space of ``X`` by Householder QR.

    Columns whose residual after projecting out the earlier ones falls
    below 1e-12 times the largest column norm are dropped, so the result
    has as many columns as the numerical rank.
    """
    a = np.array(_arr(X), dtype=np.float64)
    m, n = a.shape
    scale = float(np.max(np.linalg.norm(a, axis=0))) if a.size else 0.0
    if scale == 0.0:
        return Mat(np.zeros((m, 0)))
    reflectors = []
    keep = []
    row = 0
    for col in range(n):
        if row >= m:
            break
        x = a[row:, col]
        norm = float(np.linalg.norm(x))
        if norm < RANK_TOL * scale:
            continue
        v = x.copy()
        v[0] += np.copysign(norm, x[0]) if x[0] != 0 else norm
        v /= np.linalg.norm(v)
        a[row:, col:] -= 2.0 * np.outer(v, v @ a[row:, col:])
        reflectors.append((row, v))
        keep.append(col)
        row += 1
    r = len(keep)
    q = np.zeros((m, r))
    q[:r, :r] = np.eye(r)
    for start, v in reversed(reflectors):
        q[start:, :] -= 2.0 * np.outer(v, v @ q[start:, :])
    return Mat(q)
