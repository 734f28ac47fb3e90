"""Compiled vs pure-Python time march of the reference solver.

    python3 benchmarks/bench_kernels.py [--cells 64 128 256] [--steps 2000]

Prints wall time per run, the speedup and the max deviation between backends.
"""

import argparse
import time

import numpy as np

from jkoflow import kernels


def setup(n, fourth_order):
    L = 2.0
    dx = L / n
    x = (np.arange(n) + 0.5) * dx
    u = 0.5 + 0.3 * np.cos(np.pi * x / L)
    cp = 1.0 if fourth_order else 0.0
    dt = (0.1 * dx**4 / 1.25) if fourth_order else 0.4 * dx * dx / 1.25
    return u, dx, dt, cp, np.zeros(n)


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--cells", type=int, nargs="+", default=[64, 128, 256])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if kernels.march_compiled is None:
        print("compiled kernels not built; only the Python backend is available")
    print(f"{'order':>5} {'cells':>6} {'steps':>6} {'python [s]':>11} {'compiled [s]':>13} "
          f"{'speedup':>8} {'max |diff|':>11}")
    for fourth in (False, True):
        for n in args.cells:
            u, dx, dt, cp, phi = setup(n, fourth)
            call = (u, 0.0, args.steps * dt, dt, dx, kernels.LOGISTIC, [1.0, 1.0], cp, 1.0, phi, 1e-6)
            tp, a = best_of(lambda: kernels.march_python(*call), args.repeat)
            if kernels.march_compiled is None:
                print(f"{4 if fourth else 2:>5} {n:>6} {args.steps:>6} {tp:>11.4f}")
                continue
            tc, b = best_of(lambda: kernels.march_compiled(*call), args.repeat)
            diff = float(np.max(np.abs(np.asarray(b[0]) - a[0])))
            print(f"{4 if fourth else 2:>5} {n:>6} {args.steps:>6} {tp:>11.4f} {tc:>13.4f} "
                  f"{tp / tc:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
