"""Timing comparison of the compiled kernels against the numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--draws 2**24] [--points 10**6]

The overflow-integer sampler dominates the Monte-Carlo tail runs (2^30
draws for the deep-tail check), which is what justifies the compiled
core; Clenshaw matters for the dense Remez grid scans.
"""

import argparse
import time

import numpy as np

from slotnet._kernels import _fallback

try:
    from slotnet._kernels import _core
except ImportError:
    _core = None


def _time(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--draws", type=int, default=1 << 24)
    ap.add_argument("--points", type=int, default=10**6)
    ap.add_argument("--uniforms", type=int, default=65)
    args = ap.parse_args()

    print(f"compiled core available: {_core is not None}")

    g = np.random.Generator(np.random.PCG64(12345))
    h_py, t_py = _time(_fallback.irwin_hall_histogram, g.bit_generator,
                       args.draws, args.uniforms, 40)
    line = f"irwin_hall_histogram {args.draws} draws: fallback {t_py:.3f}s"
    if _core is not None:
        g = np.random.Generator(np.random.PCG64(12345))
        h_cy, t_cy = _time(_core.irwin_hall_histogram, g.bit_generator,
                           args.draws, args.uniforms, 40)
        same = np.array_equal(h_py, h_cy)
        line += f", compiled {t_cy:.3f}s ({t_py / t_cy:.1f}x), bit-identical {same}"
        line += f"; projected 2^30 draws: {t_cy * (2**30 / args.draws):.0f}s compiled"
    print(line)

    coeffs = np.random.default_rng(0).standard_normal(55)
    x = np.random.default_rng(1).uniform(-1, 1, args.points)
    y_py, t_py = _time(_fallback.clenshaw_chebyshev, coeffs, x)
    line = f"clenshaw_chebyshev deg 54 x {args.points}: fallback {t_py:.3f}s"
    if _core is not None:
        y_cy, t_cy = _time(_core.clenshaw_chebyshev, coeffs, np.ascontiguousarray(x))
        err = float(np.max(np.abs(y_py - np.asarray(y_cy))))
        line += f", compiled {t_cy:.3f}s ({t_py / t_cy:.1f}x), max diff {err:.1e}"
    print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
