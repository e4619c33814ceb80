"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; the script checks
the outputs agree bit for bit and prints the best-of-N wall time.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from roadgen import _fallback

try:
    from roadgen import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng):
    n_points, n_cells, channels = 2_000_000, 512 * 512, 8
    cell = rng.integers(-1, n_cells, size=n_points).astype(np.int64)
    feats = rng.random((n_points, channels))
    yield "scatter_add 2M pts x 8 ch", "scatter_add_compensated", (cell, feats, n_cells)

    img = rng.random((864, 1536, 3)) * 255
    th = np.radians(2.0)
    h = np.array([[np.cos(th), -np.sin(th), 30.0], [np.sin(th), np.cos(th), -12.0], [1e-5, 2e-5, 1.0]])
    hinv = np.linalg.inv(h)
    yield "warp_bilinear 1536x864 rgb", "warp_bilinear", (img, hinv, 864, 1536, 0.0)
    yield "warp_nearest 1536x864 rgb", "warp_nearest", (img, hinv, 864, 1536, 0.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<30}{'cython [ms]':>14}{'numpy [ms]':>14}{'speedup':>10}  identical")
    for label, name, inputs in cases(rng):
        t_py, out_py = best_of(lambda: getattr(_fallback, name)(*inputs), args.repeat)
        if _kernels is None:
            print(f"{label:<30}{'-':>14}{t_py * 1e3:>14.1f}{'-':>10}  -")
            continue
        t_cy, out_cy = best_of(lambda: getattr(_kernels, name)(*inputs), args.repeat)
        outs_cy = out_cy if isinstance(out_cy, tuple) else (out_cy,)
        outs_py = out_py if isinstance(out_py, tuple) else (out_py,)
        same = all(np.array_equal(np.asarray(a), np.asarray(b)) for a, b in zip(outs_cy, outs_py))
        print(f"{label:<30}{t_cy * 1e3:>14.1f}{t_py * 1e3:>14.1f}{t_py / t_cy:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
