"""Compiled vs NumPy waterfilling kernels.

    python benchmarks/bench_kernels.py --rows 1000000 --repeat 3
"""

import argparse
import time

import numpy as np

from statecc import _kernels_py, analytics, kernels
from statecc.channel import FadingModel

try:
    from statecc import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernel(rows, repeat):
    rng = np.random.default_rng(0)
    print(f"waterfill_power, {rows} rows, best of {repeat}")
    print(f"{'m':>3} {'python [s]':>12} {'cython [s]':>12} {'speedup':>8}  max |diff|")
    for m in (1, 2, 3, 4):
        inv = np.ascontiguousarray(1.0 / rng.exponential(size=(rows, m)))
        lam = 0.2 * m
        t_py = best_of(lambda: _kernels_py.waterfill_power(inv, lam), repeat)
        if _compiled is None:
            print(f"{m:>3} {t_py:12.4f} {'n/a':>12}")
            continue
        t_cy = best_of(lambda: _compiled.waterfill_power(inv, lam), repeat)
        diff = np.max(np.abs(_kernels_py.waterfill_power(inv, lam) - _compiled.waterfill_power(inv, lam)))
        print(f"{m:>3} {t_py:12.4f} {t_cy:12.4f} {t_py / t_cy:8.1f}x  {diff:.1e}")


def bench_calibration(samples):
    print(f"\ncalibrate_lambda, K=3, P=4, {samples} samples (full root search)")
    model = FadingModel(3, 4.0)
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled is not None else [])
    for name, impl in backends:
        saved = kernels.waterfill_levels, kernels.waterfill_power
        kernels.waterfill_levels, kernels.waterfill_power = impl.waterfill_levels, impl.waterfill_power
        try:
            for t in range(3):
                t0 = time.perf_counter()
                sol = analytics.calibrate_lambda(model, t, samples, seed=0)
                print(f"  {name:6s} t={t}: {time.perf_counter() - t0:7.3f} s  lam={sol.lam:.10f}")
        finally:
            kernels.waterfill_levels, kernels.waterfill_power = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--samples", type=int, default=1_000_000)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernel(args.rows, args.repeat)
    bench_calibration(args.samples)


if __name__ == "__main__":
    main()
