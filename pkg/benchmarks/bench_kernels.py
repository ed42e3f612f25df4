"""Compare the compiled and numpy kernels for speed and bit-equality.

Run with ``python3 benchmarks/bench_kernels.py [--particles N] [--steps M]``.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from groundctl._kernels import REFLECT, DRIFT_POWER, DRIFT_SIN, get_backend


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def bench_em(mod, n, m, repeat):
    rng = np.random.default_rng(1)
    x0 = rng.random(n)
    normals = rng.standard_normal((m, n))
    incr = np.full(m, 1e-4)

    def run():
        x = x0.copy()
        alive = np.ones(n, dtype=np.uint8)
        mod.em_chunk(x, alive, incr, normals, np.sqrt(2e-4), REFLECT, DRIFT_POWER, 3.0)
        return x

    return _time(run, repeat)


def bench_picard(mod, m, repeat):
    rng = np.random.default_rng(2)
    dt = 1.0 / m
    W = np.concatenate([[0.0], np.cumsum(rng.standard_normal(m) * np.sqrt(dt))])
    incr = np.full(m, dt)
    return _time(lambda: mod.picard_distances(0.5, incr, W, DRIFT_SIN, 1.0, 0, 8), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--particles", type=int, default=4096)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        print("compiled kernels unavailable; nothing to compare")
        return 0
    work = args.particles * args.steps
    t_py, x_py = bench_em(py, args.particles, args.steps, args.repeat)
    t_cy, x_cy = bench_em(cy, args.particles, args.steps, args.repeat)
    print(f"em_chunk  python {1e9 * t_py / work:7.2f} ns/step  cython {1e9 * t_cy / work:7.2f} ns/step  "
          f"speedup {t_py / t_cy:5.1f}x  identical={np.array_equal(x_py, x_cy)}")
    m = args.steps * 20
    t_py, d_py = bench_picard(py, m, args.repeat)
    t_cy, d_cy = bench_picard(cy, m, args.repeat)
    print(f"picard    python {1e3 * t_py:7.2f} ms  cython {1e3 * t_cy:7.2f} ms  speedup {t_py / t_cy:5.1f}x  "
          f"max|diff|={np.max(np.abs(d_py - d_cy)):.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
