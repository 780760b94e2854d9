"""Time the compiled and NumPy stencil kernels on the same inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one line per kernel and grid with the best time of each backend,
the speed-up, and the largest relative difference between the outputs.
"""

import argparse
import timeit

import numpy as np

from radgraph import _kernels_py

try:
    from radgraph import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cases(rng):
    for B, N in [(1, 256), (64, 256), (256, 1024)]:
        u = rng.standard_normal((B, N))
        h = 2 * np.pi / N
        yield f"circle B={B} N={N}", "circle_derivatives", (u, h)
    for B, Np in [(1, 64), (16, 64), (1, 256)]:
        Nt = 2 * Np
        phi = (np.arange(Np) + 0.5) * np.pi / Np
        u = rng.standard_normal((B, Np, Nt))
        yield (f"sphere B={B} {Np}x{Nt}", "sphere_derivatives",
               (u, np.pi / Np, 2 * np.pi / Nt, np.sin(phi), np.cos(phi)))
    for N in (10_000, 1_000_000):
        a = rng.standard_normal((5, N))
        yield f"block2 N={N}", "block2", tuple(a)


def _maxdiff(a, b):
    # relative to the output scale: second differences of noise are large
    if not isinstance(a, tuple):
        a, b = (a,), (b,)
    return max(float(np.max(np.abs(x - y)) / max(np.max(np.abs(x)), 1e-300)) for x, y in zip(a, b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not available; timing the NumPy backend only")
    print(f"{'case':28s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speed-up':>9s} {'rel diff':>10s}")
    for name, fn, inputs in _cases(rng):
        f_py = getattr(_kernels_py, fn)
        t_py = min(timeit.repeat(lambda: f_py(*inputs), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:28s} {t_py:11.3f}")
            continue
        f_cy = getattr(_kernels, fn)
        t_cy = min(timeit.repeat(lambda: f_cy(*inputs), number=1, repeat=args.repeat)) * 1e3
        diff = _maxdiff(f_py(*inputs), f_cy(*inputs))
        print(f"{name:28s} {t_py:11.3f} {t_cy:12.3f} {t_py / t_cy:9.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
