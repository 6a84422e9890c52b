"""Timing comparison between the compiled kernels and the numpy fallbacks.

Run as: python benchmarks/bench_backends.py
"""

import time

import numpy as np

from gll import _pykernels

try:
    from gll import _ckernels
except ImportError:
    _ckernels = None

from gll.graph import build_graph
from gll.solvers import LabelData, solve_laplace


def timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for n, d in [(200, 2), (1000, 16), (2000, 64)]:
        X = np.ascontiguousarray(rng.standard_normal((n, d)))
        t_py = timeit(lambda: _pykernels.sqdist(X))
        row = f"sqdist n={n} d={d}"
        if _ckernels is not None:
            t_c = timeit(lambda: _ckernels.sqdist(X))
            assert np.allclose(_ckernels.sqdist(X), _pykernels.sqdist(X), atol=1e-10)
            print(f"{row:<28}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms{t_py / t_c:>9.1f}x")
        else:
            print(f"{row:<28}{t_py * 1e3:>10.2f}ms{'n/a':>12}")

    for n, k in [(200, 10), (2000, 10)]:
        X = np.ascontiguousarray(rng.standard_normal((n, 2)))
        D = _pykernels.sqdist(X)
        t_py = timeit(lambda: _pykernels.knn_select(D, k))
        row = f"knn_select n={n} k={k}"
        if _ckernels is not None:
            t_c = timeit(lambda: _ckernels.knn_select(D, k))
            ip, dp = _pykernels.knn_select(D, k)
            ic, dc = _ckernels.knn_select(D, k)
            assert np.array_equal(ip, ic) and np.array_equal(dp, dc)
            print(f"{row:<28}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms{t_py / t_c:>9.1f}x")
        else:
            print(f"{row:<28}{t_py * 1e3:>10.2f}ms{'n/a':>12}")


def bench_solve():
    """End-to-end forward solve (graph build + PCG) under each backend."""
    import gll._backend as backend

    rng = np.random.default_rng(1)
    X = rng.standard_normal((500, 2))
    idx = np.sort(rng.choice(500, size=20, replace=False))
    labels = LabelData.from_labels(idx, rng.integers(0, 2, 20))

    def run():
        g = build_graph(X, 10)
        solve_laplace(g, labels, tau=0.1)

    impls = [("python", _pykernels)]
    if _ckernels is not None:
        impls.append(("compiled", _ckernels))
    times = {}
    saved = (backend.sqdist, backend.knn_select, backend.pcg)
    try:
        for name, impl in impls:
            backend.sqdist = impl.sqdist
            backend.knn_select = impl.knn_select
            backend.pcg = impl.pcg
            times[name] = timeit(run)
    finally:
        backend.sqdist, backend.knn_select, backend.pcg = saved
    line = f"{'forward solve n=500':<28}{times['python'] * 1e3:>10.2f}ms"
    if "compiled" in times:
        line += f"{times['compiled'] * 1e3:>10.2f}ms"
        line += f"{times['python'] / times['compiled']:>9.1f}x"
    print(line)


if __name__ == "__main__":
    import gll

    print(f"active backend: {gll.BACKEND}\n")
    bench_kernels()
    bench_solve()
