"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--quick]
"""

import argparse
import time

import numpy as np

from randclip import kernels
from randclip.envelope import search_pairs


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(quick):
    yield "two_term_cdf x2000 (k=1, 256 nodes)", lambda be: [
        kernels.two_term_cdf(1.5, 0.71, 1, 0.145, 2, backend=be) for _ in range(2000)]
    for k, d in ([(8, 16)] if quick else [(8, 16), (8, 64), (32, 64)]):
        pi, pj, _ = search_pairs(d)
        x = 1.0 + 4.0 / (d * k)
        yield f"middle_sup k={k} d={d} ({len(pi)} pairs)", (
            lambda be, x=x, k=k, pi=pi, pj=pj: kernels.middle_sup(x, k, pi, pj, 501, backend=be)[:3])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small cases only")
    args = ap.parse_args()
    backends = list(kernels.BACKENDS)
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'case':45s} " + " ".join(f"{b:>10s}" for b in backends) + "    speedup  agree")
    for name, fn in cases(args.quick):
        times, outs = [], []
        for be in backends:
            t, out = _best_of(lambda: fn(be), args.repeat)
            times.append(t)
            outs.append(out)
        agree = all(np.allclose(np.asarray(o, dtype=float), np.asarray(outs[0], dtype=float),
                                rtol=0, atol=1e-12) for o in outs)
        speed = times[0] / times[-1] if len(times) > 1 else 1.0
        print(f"{name:45s} " + " ".join(f"{t:9.3f}s" for t in times) + f"  {speed:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
