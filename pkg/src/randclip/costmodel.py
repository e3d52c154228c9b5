"""Element-count memory and FLOP formulas for per-sample norm computation in a linear layer."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError


class Method(str, enum.Enum):
    FGC = "fgc"
    GC = "gc"
    RC = "rc-hutch"


@dataclass(frozen=True)
class CostParams:
    """Layer and batch sizes.

    Attributes:
        B: batch size. T: sequence length. p, d: layer output and input widths.
        k: projection dimension. method: which norm routine.
        del_backprops: whether output gradients are freed after the norm pass.
    """

    B: int
    T: int
    p: int
    d: int
    k: int = 32
    method: Method = Method.FGC
    del_backprops: bool = True

    def __post_init__(self):
        for name in ("B", "T", "p", "d", "k"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "method", Method(self.method))


def _rc_shape(cp: CostParams) -> tuple[int, int]:
    # the sketch contracts the larger width, so RC costs use p >= d
    return max(cp.p, cp.d), min(cp.p, cp.d)


def exact_flops(cp: CostParams) -> int:
    """FLOPs to obtain all B per-sample squared norms."""
    B, T, k = cp.B, cp.T, cp.k
    if cp.method is Method.FGC:
        return B * cp.p * cp.d * (2 * T - 1)
    if cp.method is Method.GC:
        return 2 * B * T * T * (cp.p + cp.d) - B
    p, d = _rc_shape(cp)
    return 2 * B * T * k * (p + d) + B * k * (d - T) - B


def initial_memory(cp: CostParams) -> int:
    """Activations plus output gradients, BT(d + p)."""
    return cp.B * cp.T * (cp.d + cp.p)


def memory_overhead(cp: CostParams) -> int:
    """Peak minus initial memory of the norm computation."""
    B, T, k = cp.B, cp.T, cp.k
    if cp.method is Method.FGC:
        return B * cp.p * cp.d
    if cp.method is Method.GC:
        if not cp.del_backprops:
            return 2 * B * T * T
        return max(B * T * T, B * T * (2 * T - cp.p))
    p, d = _rc_shape(cp)
    if not cp.del_backprops:
        return B * k * (T + d) + p * k
    return max(B * T * k + p * k, B * T * (k - p) + B * d * k)


def peak_memory(cp: CostParams) -> int:
    return initial_memory(cp) + memory_overhead(cp)


@dataclass(frozen=True)
class TRange:
    """Inclusive integer interval of sequence lengths for one regime."""

    label: str
    lo: int
    hi: int


def _regimes(p, d, B):
    # (label, T_lo, T_hi, denominator(T), uses 2T - p) with inclusive T bounds; hi None = unbounded
    if p >= 2 * d:
        return [
            ("A-I", 1, p, lambda T: B * T + p, False),
            ("A-II", p + 1, None, lambda T: B * T + p, True),
        ]
    return [
        ("B-I", 1, 2 * d - p, lambda T: B * (2 * d - p) + p + 0 * T, False),
        ("B-II", 2 * d - p + 1, p, lambda T: B * T + p, False),
        ("B-III", p + 1, None, lambda T: B * T + p, True),
    ]


def rc_wins_T_range(p: int, d: int, B: int, k: int) -> list[TRange]:
    """Sequence lengths where the sketch has the lowest peak memory, per regime.

    Each regime's condition k * denom(T) < B * min(pd, g(T)) is checked on
    every integer T of the regime (g(T) = T^2, or T(2T - p) above p). Above
    sqrt(pd) the condition only weakens the upper end, so unbounded regimes
    are scanned up to pd / k + p. Regimes with no valid T are omitted.

    Raises:
        DomainError: if p < d.
    """
    if p < d:
        raise DomainError(f"regime analysis assumes p >= d, got p={p}, d={d}")
    out = []
    for label, lo, hi, denom, excess in _regimes(p, d, B):
        if hi is None:
            hi = max(lo, p * d // k + p + 1)
        if hi < lo:
            continue
        T = np.arange(lo, hi + 1, dtype=np.int64)
        g = T * (2 * T - p) if excess else T * T
        ok = k * denom(T) < B * np.minimum(p * d, g)
        if ok.any():
            idx = np.flatnonzero(ok)
            if idx[-1] - idx[0] + 1 != len(idx):
                raise ArithmeticError(f"regime {label} has a non-interval solution set")
            out.append(TRange(label, int(T[idx[0]]), int(T[idx[-1]])))
    return out


def rc_wins_direct(B: int, T: int, p: int, d: int, k: int) -> bool:
    """Direct comparison of RC's overhead with min(FGC, GC), all deleting backprops."""
    rc = memory_overhead(CostParams(B, T, p, d, k, Method.RC, True))
    fgc = memory_overhead(CostParams(B, T, p, d, k, Method.FGC, True))
    gc = memory_overhead(CostParams(B, T, p, d, k, Method.GC, True))
    return rc < min(fgc, gc)


COST_HEADER = ["method", "B", "T", "p", "d", "k", "flops", "mem_overhead"]


def cost_csv(params) -> str:
    """CSV rows (method, B, T, p, d, k, flops, mem_overhead)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COST_HEADER)
    for cp in params:
        w.writerow([cp.method.value, cp.B, cp.T, cp.p, cp.d, cp.k, exact_flops(cp), memory_overhead(cp)])
    return buf.getvalue()


def regime_csv(p: int, d: int, B: int, k: int) -> str:
    """Regime summary rows (regime, T_lo, T_hi)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regime", "T_lo", "T_hi", "p", "d", "B", "k"])
    for r in rc_wins_T_range(p, d, B, k):
        w.writerow([r.label, r.lo, r.hi, p, d, B, k])
    return buf.getvalue()
