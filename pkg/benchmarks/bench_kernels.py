"""Compare the compiled and pure-Python hot kernels.

Run ``python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]``.  Both
backends are loaded directly, their outputs are checked against each other
and the best-of-``repeat`` wall time is reported.
"""

import argparse
import time

import numpy as np

from tilens import _pykernels

try:
    from tilens import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n, rng):
    a11 = rng.uniform(4.0, 5.0, n)
    a33 = rng.uniform(3.0, 3.5, n)
    a55 = rng.uniform(0.8, 1.0, n)
    a66 = rng.uniform(1.1, 1.3, n)
    e2 = rng.uniform(0.5, 2.0, n)
    xi = rng.normal(size=(n, 3))
    T = xi[:, 2]
    S = np.einsum("ni,ni->n", xi, xi)
    coef = rng.normal(size=(32, 32, 32))
    s = rng.uniform(0, 31, (n, 3))
    return {
        "ti_jet qP order 2": lambda k: k.ti_jet(a11, a33, a55, a66, e2, T, S, 1, 2),
        "ti_jet qSV order 1": lambda k: k.ti_jet(a11, a33, a55, a66, e2, T, S, -1, 1),
        "bspline3_jet order 2": lambda k: k.bspline3_jet(coef, s, 2),
        "bspline3_jet order 0": lambda k: k.bspline3_jet(coef, s, 0),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    if a is None:
        return 0.0
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, call in cases(a.n, rng).items():
        tp, op = best_time(lambda: call(_pykernels), a.repeat)
        if _ckernels is None:
            print(f"{name:26s} {tp:11.4f} {'n/a':>11s}")
            continue
        tc, oc = best_time(lambda: call(_ckernels), a.repeat)
        print(f"{name:26s} {tp:11.4f} {tc:11.4f} {tp / tc:8.1f} {max_diff(op, oc):10.2e}")


if __name__ == "__main__":
    main()
