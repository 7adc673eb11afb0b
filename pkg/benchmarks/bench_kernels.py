"""Compare the compiled and numpy basis-evaluation kernels.

Run ``python3 benchmarks/bench_kernels.py``; prints the median time per call
and the speed-up, and checks that both kernels agree.
"""

import argparse
import timeit

import numpy as np

from ellipgof import _kernels_py
from ellipgof.decomposition import BasisSet
from ellipgof.families import get_family

try:
    from ellipgof import _kernels
except ImportError:  # extension not built
    _kernels = None

CASES = [("mvn", 2, 5, 400), ("mvn", 3, 5, 88), ("mvn", 3, 8, 1000),
         ("logistic", 2, 5, 400), ("laplace", 4, 6, 500)]


def _time(fn, repeat):
    t = timeit.repeat(fn, number=1, repeat=repeat)
    return float(np.median(t))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print("%-10s %2s %2s %6s %5s %12s %12s %8s" % ("family", "m", "K", "n", "p",
                                                 "numpy (ms)", "cython (ms)", "speedup"))
    for name, m, K, n in CASES:
        basis = BasisSet(get_family(name, m), K)
        Y = rng.standard_normal((n, m))
        T = np.einsum("ij,ij->i", Y, Y)
        plan = basis._plan
        ref = _kernels_py.evaluate_basis(Y, T, **plan)
        t_py = _time(lambda: _kernels_py.evaluate_basis(Y, T, **plan), args.repeat)
        if _kernels is None:
            print("%-10s %2d %2d %6d %5d %12.3f %12s %8s" % (name, m, K, n, basis.p, 1e3 * t_py,
                                                           "n/a", "n/a"))
            continue
        out = _kernels.evaluate_basis(Y, T, **plan)
        err = np.abs(out - ref).max() / max(1.0, np.abs(ref).max())
        if err > 1e-12:
            raise SystemExit("kernels disagree for %s m=%d K=%d: %.3g" % (name, m, K, err))
        t_cy = _time(lambda: _kernels.evaluate_basis(Y, T, **plan), args.repeat)
        print("%-10s %2d %2d %6d %5d %12.3f %12.3f %8.1f" % (name, m, K, n, basis.p, 1e3 * t_py,
                                                           1e3 * t_cy, t_py / t_cy))


if __name__ == "__main__":
    main()
